#include "aen/cli.hpp"

#include "aen/analysis.hpp"
#include "aen/core.hpp"
#include "aen/data.hpp"
#include "aen/embeddings.hpp"
#include "aen/errors.hpp"
#include "aen/remote.hpp"
#include "aen/runtime.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace aen {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// RunConfig and embedding sources.
// ---------------------------------------------------------------------------

EmbeddingSource EmbeddingSource::parse(const std::string& text) {
    if (text == "toy") return {Kind::Toy, ""};
    if (text.rfind("file:", 0) == 0) {
        std::string directory = text.substr(5);
        if (directory.empty()) {
            throw std::invalid_argument(
                "embedding source \"file:\" needs a directory, e.g. file:embeddings/");
        }
        return {Kind::File, std::move(directory)};
    }
    if (text.rfind("http://", 0) == 0 || text.rfind("https://", 0) == 0) {
        return {Kind::Remote, text};
    }
    throw std::invalid_argument("unknown embedding source \"" + text +
                                "\": expected \"toy\", \"file:<dir>\", or an http(s) endpoint");
}

std::string EmbeddingSource::spelling() const {
    switch (kind) {
    case Kind::Toy: return "toy";
    case Kind::File: return "file:" + location;
    case Kind::Remote: return location;
    }
    throw std::invalid_argument("unknown embedding source kind");
}

void RunConfig::validate() const {
    parse_kernel_kind(kernel);
    if (parse_bandwidth_rule(bandwidth_rule) == BandwidthRule::Fixed && !(fixed_bandwidth > 0.0)) {
        throw std::invalid_argument("bandwidth_rule \"fixed\" needs fixed_bandwidth > 0");
    }
    const HeadKind head_kind = parse_head_kind(head);
    if (head_kind == HeadKind::MLP && hidden_sizes.empty()) {
        throw std::invalid_argument("an mlp head needs at least one hidden size");
    }
    for (std::size_t width : hidden_sizes) {
        if (width == 0) throw std::invalid_argument("hidden sizes must be positive");
    }
    parse_kde_side(kde_side);
    parse_optimizer_kind(optimizer);
    train_config().validate();
    if (embedding_dim == 0) throw std::invalid_argument("embedding_dim must be positive");
    if (vocab_size == 0) throw std::invalid_argument("vocab_size must be positive");
    EmbeddingSource::parse(embeddings);
}

BundleSpec RunConfig::bundle_spec() const {
    BundleSpec spec;
    spec.vocab_size = vocab_size;
    spec.embedding_dim = embedding_dim;
    spec.kernel = parse_kernel_kind(kernel);
    spec.bandwidth_rule = parse_bandwidth_rule(bandwidth_rule);
    spec.fixed_bandwidth = fixed_bandwidth;
    spec.kde_side = parse_kde_side(kde_side);
    spec.head_kind = parse_head_kind(head);
    // A linear head has no hidden layers; any configured widths apply only
    // when the head is an MLP.
    spec.hidden_sizes = spec.head_kind == HeadKind::MLP ? hidden_sizes
                                                        : std::vector<std::size_t>{};
    spec.use_log_density = use_log_density;
    spec.class_weight = class_weight;
    spec.seed = seed;
    spec.toy_encoders = embedding_source().kind == EmbeddingSource::Kind::Toy;
    return spec;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig config;
    config.learning_rate = learning_rate;
    config.epochs = epochs;
    config.batch_size = batch_size;
    config.optimizer = parse_optimizer_kind(optimizer);
    config.class_weight = class_weight;
    return config;
}

EmbeddingSource RunConfig::embedding_source() const {
    return EmbeddingSource::parse(embeddings);
}

namespace {

// ---------------------------------------------------------------------------
// Small file and JSON helpers.
// ---------------------------------------------------------------------------

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open for hashing: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return to_hex(fnv1a64(buffer.str()));
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("cannot open for writing: " + path);
    out << text;
    if (!out) throw format_error("failed while writing: " + path);
}

bool is_blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

json run_config_json(const RunConfig& config) {
    json block;
    block["kernel"] = config.kernel;
    block["bandwidth_rule"] = config.bandwidth_rule;
    block["fixed_bandwidth"] = config.fixed_bandwidth;
    block["head"] = config.head;
    block["hidden_sizes"] = config.hidden_sizes;
    block["kde_side"] = config.kde_side;
    block["learning_rate"] = config.learning_rate;
    block["epochs"] = config.epochs;
    block["batch_size"] = config.batch_size;
    block["optimizer"] = config.optimizer;
    block["class_weight"] = config.class_weight;
    block["use_log_density"] = config.use_log_density;
    block["seed"] = config.seed;
    block["embedding_dim"] = config.embedding_dim;
    block["vocab_size"] = config.vocab_size;
    block["embeddings"] = config.embeddings;
    return block;
}

/// Overlay config-file values onto `config`. The file uses exactly the keys
/// run_config_json emits, so a manifest's "config" block can be replayed as
/// a --config file verbatim. Unknown keys are rejected: a typo silently
/// falling back to a default would defeat the reproducibility contract.
void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open config file: " + path);
    json parsed;
    try {
        parsed = json::parse(in);
    } catch (const json::exception& e) {
        throw format_error("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!parsed.is_object()) {
        throw format_error("config file " + path + " must hold a JSON object");
    }
    try {
        for (const auto& [key, value] : parsed.items()) {
            if (key == "kernel") config.kernel = value.get<std::string>();
            else if (key == "bandwidth_rule") config.bandwidth_rule = value.get<std::string>();
            else if (key == "fixed_bandwidth") config.fixed_bandwidth = value.get<double>();
            else if (key == "head") config.head = value.get<std::string>();
            else if (key == "hidden_sizes") config.hidden_sizes = value.get<std::vector<std::size_t>>();
            else if (key == "kde_side") config.kde_side = value.get<std::string>();
            else if (key == "learning_rate") config.learning_rate = value.get<double>();
            else if (key == "epochs") config.epochs = value.get<std::size_t>();
            else if (key == "batch_size") config.batch_size = value.get<std::size_t>();
            else if (key == "optimizer") config.optimizer = value.get<std::string>();
            else if (key == "class_weight") config.class_weight = value.get<double>();
            else if (key == "use_log_density") config.use_log_density = value.get<bool>();
            else if (key == "seed") config.seed = value.get<std::uint64_t>();
            else if (key == "embedding_dim") config.embedding_dim = value.get<std::uint32_t>();
            else if (key == "vocab_size") config.vocab_size = value.get<std::uint32_t>();
            else if (key == "embeddings") config.embeddings = value.get<std::string>();
            else throw format_error("config file " + path + " has an unknown key: " + key);
        }
    } catch (const json::exception& e) {
        throw format_error("config file " + path + ": " + e.what());
    }
}

/// --config is applied before CLI11 parses the flags, so the file must be
/// located by a plain scan; afterwards CLI11 re-consumes the flag normally.
std::optional<std::string> find_config_flag(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
    }
    return std::nullopt;
}

std::string manifest_path(const std::string& flag, const std::string& out,
                          std::string_view command) {
    if (!flag.empty()) return flag;
    if (!out.empty()) return out + ".manifest.json";
    return std::string(command) + ".manifest.json";
}

/// Run manifest: the effective config, the verbatim command parameters, and
/// content hashes of every input and output file. Deliberately no
/// timestamps or host details, so identical runs produce identical
/// manifests.
void write_manifest(const std::string& path, std::string_view command, json config,
                    json parameters, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    json manifest;
    manifest["command"] = command;
    manifest["config"] = std::move(config);
    manifest["parameters"] = std::move(parameters);
    json input_hashes = json::object();
    for (const std::string& file : inputs) input_hashes[file] = file_hash_hex(file);
    manifest["inputs"] = std::move(input_hashes);
    json output_hashes = json::object();
    for (const std::string& file : outputs) output_hashes[file] = file_hash_hex(file);
    manifest["outputs"] = std::move(output_hashes);
    write_text_file(path, manifest.dump(2) + "\n");
}

json metrics_json(const MetricsReport& report) {
    json block;
    block["accuracy"] = report.accuracy;
    block["precision"] = report.precision;
    block["recall"] = report.recall;
    block["f1"] = report.f1;
    if (report.has_loss) block["loss"] = report.loss;
    block["precision_degenerate"] = report.precision_degenerate;
    block["tp"] = report.tp;
    block["fp"] = report.fp;
    block["tn"] = report.tn;
    block["fn"] = report.fn;
    return block;
}

json epoch_json(std::size_t epoch, const EpochStats& stats) {
    json block;
    block["epoch"] = epoch;
    block["mean_loss"] = stats.mean_loss;
    block["accuracy"] = stats.metrics.accuracy;
    block["precision"] = stats.metrics.precision;
    block["recall"] = stats.metrics.recall;
    block["f1"] = stats.metrics.f1;
    return block;
}

// ---------------------------------------------------------------------------
// Encoder plumbing shared by the model-driven subcommands.
// ---------------------------------------------------------------------------

TokenEmbeddings load_embedding_file(const fs::path& directory, const std::string& text) {
    const fs::path path = directory / (to_hex(fnv1a64(text)) + ".aene");
    std::error_code probe;
    if (!fs::exists(path, probe)) {
        throw format_error("no embedding file for \"" + text + "\" (expected " + path.string() +
                           ")");
    }
    return read_embeddings(path);
}

/// Toy sources use the bundle's own encoders, so both hooks stay empty.
/// File sources look up one AENE file per text, named by the FNV-1a 64 hash
/// of the exact text handed to the encoder (statements verbatim, conditions
/// after marker stripping). Remote sources call the /embed service per text.
EncoderHooks make_hooks(const EmbeddingSource& source) {
    EncoderHooks hooks;
    switch (source.kind) {
    case EmbeddingSource::Kind::Toy:
        break;
    case EmbeddingSource::Kind::File: {
        const fs::path directory = source.location;
        auto fetch = [directory](const std::string& text) {
            return load_embedding_file(directory, text);
        };
        hooks.statement = fetch;
        hooks.condition = fetch;
        break;
    }
    case EmbeddingSource::Kind::Remote: {
        const std::string endpoint = source.location;
        auto fetch = [endpoint](const std::string& text) {
            return fetch_remote_embeddings(endpoint, {text}).front();
        };
        hooks.statement = fetch;
        hooks.condition = fetch;
        break;
    }
    }
    return hooks;
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

struct GenToyOptions {
    std::string out;
    std::uint64_t seed = 0;
    std::size_t n = 0;
    std::size_t topics = 50;
    double negative_ratio = 6.0;
    std::string manifest;
};

int cmd_gen_toy(const GenToyOptions& options, std::ostream& output) {
    ToyDataSpec spec;
    spec.seed = options.seed;
    spec.n_pairs = options.n;
    spec.n_topics = options.topics;
    spec.negative_ratio = options.negative_ratio;
    const std::vector<LabeledPair> pairs = generate_toy_dataset(spec);
    write_dataset_jsonl(options.out, pairs);

    const std::size_t positives =
        static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(),
                                               [](const LabeledPair& p) { return p.label == 1; }));
    json config;
    config["seed"] = spec.seed;
    config["n_pairs"] = spec.n_pairs;
    config["n_topics"] = spec.n_topics;
    config["negative_ratio"] = spec.negative_ratio;
    json parameters;
    parameters["out"] = options.out;
    const std::string manifest = manifest_path(options.manifest, options.out, "gen-toy");
    write_manifest(manifest, "gen-toy", config, parameters, {}, {options.out});

    json status;
    status["pairs"] = pairs.size();
    status["positives"] = positives;
    status["negatives"] = pairs.size() - positives;
    status["out"] = options.out;
    status["manifest"] = manifest;
    output << status.dump() << '\n';
    return 0;
}

struct TrainOptions {
    std::string data;
    std::string out;
    std::string metrics;
    std::string manifest;
};

int cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& output) {
    config.validate();
    const std::vector<LabeledPair> pairs = load_dataset_jsonl(options.data);
    ModelBundle bundle = make_bundle(config.bundle_spec());
    const EncoderHooks hooks = make_hooks(config.embedding_source());
    const std::vector<EpochStats> history = train_model(bundle, pairs, config.train_config(), hooks);
    write_bundle(options.out, bundle);

    json epochs = json::array();
    for (std::size_t i = 0; i < history.size(); ++i) {
        epochs.push_back(epoch_json(i + 1, history[i]));
    }
    const std::string metrics_file =
        options.metrics.empty() ? options.out + ".metrics.json" : options.metrics;
    write_text_file(metrics_file, epochs.dump(2) + "\n");

    json parameters;
    parameters["data"] = options.data;
    parameters["out"] = options.out;
    parameters["metrics"] = metrics_file;
    const std::string manifest = manifest_path(options.manifest, options.out, "train");
    write_manifest(manifest, "train", run_config_json(config), parameters, {options.data},
                   {options.out, metrics_file});

    json status;
    status["pairs"] = pairs.size();
    status["epochs"] = history.size();
    status["final"] = epoch_json(history.size(), history.back());
    status["model"] = options.out;
    status["metrics"] = metrics_file;
    status["manifest"] = manifest;
    output << status.dump() << '\n';
    return 0;
}

struct EvalOptions {
    std::string model;
    std::string data;
    std::string out;
    std::string manifest;
};

int cmd_eval(const RunConfig& config, const EvalOptions& options, std::ostream& output) {
    const ModelBundle bundle = read_bundle(options.model);
    const std::vector<LabeledPair> pairs = load_dataset_jsonl(options.data);
    const EncoderHooks hooks = make_hooks(config.embedding_source());
    const MetricsReport report = evaluate_model(bundle, pairs, hooks);

    const json report_json = metrics_json(report);
    std::vector<std::string> outputs;
    if (!options.out.empty()) {
        write_text_file(options.out, report_json.dump(2) + "\n");
        outputs.push_back(options.out);
    }
    json parameters;
    parameters["model"] = options.model;
    parameters["data"] = options.data;
    if (!options.out.empty()) parameters["out"] = options.out;
    const std::string manifest = manifest_path(options.manifest, options.out, "eval");
    write_manifest(manifest, "eval", run_config_json(config), parameters,
                   {options.model, options.data}, outputs);

    output << report_json.dump() << '\n';
    return 0;
}

struct KsOptions {
    std::string embeddings_dir;
    std::string data;
    std::string policy = "consecutive";
    std::size_t max_pairs = 100;
    std::string out;
    std::string manifest;
};

int cmd_ks(const RunConfig& config, const KsOptions& options, std::ostream& output) {
    const PairingPolicy policy = parse_pairing_policy(options.policy);
    std::vector<TokenEmbeddings> embeddings;
    std::vector<std::string> inputs;

    if (!options.embeddings_dir.empty() && !options.data.empty()) {
        throw std::invalid_argument("ks takes --embeddings-dir or --data, not both");
    }
    if (!options.embeddings_dir.empty()) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(options.embeddings_dir)) {
            if (entry.path().extension() == ".aene") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw std::invalid_argument("no .aene files in " + options.embeddings_dir);
        }
        for (const fs::path& file : files) {
            embeddings.push_back(read_embeddings(file));
            inputs.push_back(file.string());
        }
    } else if (!options.data.empty()) {
        const std::vector<LabeledPair> pairs = load_dataset_jsonl(options.data);
        const EmbeddingSource source = config.embedding_source();
        if (source.kind == EmbeddingSource::Kind::Toy) {
            const ToyEncoder encoder =
                ToyEncoder::make(config.vocab_size, config.embedding_dim, config.seed);
            for (const LabeledPair& pair : pairs) {
                embeddings.push_back(toy_encode(encoder, pair.statement));
            }
        } else {
            const EncoderHooks hooks = make_hooks(source);
            for (const LabeledPair& pair : pairs) {
                embeddings.push_back(hooks.statement(pair.statement));
            }
        }
        inputs.push_back(options.data);
    } else {
        throw std::invalid_argument("ks needs --embeddings-dir or --data");
    }

    const KSSummary summary = dimension_ks_analysis(embeddings, policy, config.seed,
                                                    options.max_pairs);
    json report;
    report["mean_p"] = summary.mean_p;
    report["median_p"] = summary.median_p;
    report["tests"] = summary.tests;
    report["pairs"] = summary.pairs;
    report["histogram"] = summary.histogram;

    std::vector<std::string> outputs;
    if (!options.out.empty()) {
        write_text_file(options.out, report.dump(2) + "\n");
        outputs.push_back(options.out);
    }
    json parameters;
    parameters["policy"] = options.policy;
    parameters["max_pairs"] = options.max_pairs;
    if (!options.embeddings_dir.empty()) parameters["embeddings_dir"] = options.embeddings_dir;
    if (!options.data.empty()) parameters["data"] = options.data;
    if (!options.out.empty()) parameters["out"] = options.out;
    const std::string manifest = manifest_path(options.manifest, options.out, "ks");
    write_manifest(manifest, "ks", run_config_json(config), parameters, inputs, outputs);

    output << report.dump() << '\n';
    return 0;
}

struct CacheOptions {
    std::string model;
    std::string conditions;
    std::string out;
    double threshold = 0.5;
    std::string manifest;
};

int cmd_cache(const RunConfig& config, const CacheOptions& options, std::ostream& output) {
    const ModelBundle bundle = read_bundle(options.model);
    std::ifstream in(options.conditions);
    if (!in) throw format_error("cannot open conditions file: " + options.conditions);
    std::vector<std::string> conditions;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!is_blank(line)) conditions.push_back(line);
    }
    const EncoderHooks hooks = make_hooks(config.embedding_source());
    const ConditionCache cache =
        build_condition_cache(bundle, conditions, hooks, options.threshold);
    write_cache(options.out, cache);

    json parameters;
    parameters["model"] = options.model;
    parameters["conditions"] = options.conditions;
    parameters["out"] = options.out;
    parameters["threshold"] = options.threshold;
    const std::string manifest = manifest_path(options.manifest, options.out, "cache");
    write_manifest(manifest, "cache", run_config_json(config), parameters,
                   {options.model, options.conditions}, {options.out});

    json status;
    status["entries"] = cache.entries.size();
    status["fingerprint"] = to_hex(cache.model_fingerprint);
    status["threshold"] = cache.threshold;
    status["out"] = options.out;
    status["manifest"] = manifest;
    output << status.dump() << '\n';
    return 0;
}

struct MonitorOptions {
    std::string model;
    std::string cache;
    std::string manifest;
};

int cmd_monitor(const RunConfig& config, const MonitorOptions& options, std::istream& input,
                std::ostream& output, std::ostream& error) {
    const ModelBundle bundle = read_bundle(options.model);
    ConditionCache cache = read_cache(options.cache);
    require_cache_match(bundle, cache);
    const std::size_t condition_count = cache.entries.size();
    MonitorSession session(bundle, std::move(cache), make_hooks(config.embedding_source()));

    // The manifest covers the fixed inputs; the statement stream is not a
    // file, so it cannot be hashed. Written up front so it exists even if
    // the stream never ends normally.
    json parameters;
    parameters["model"] = options.model;
    parameters["cache"] = options.cache;
    const std::string manifest = manifest_path(options.manifest, "", "monitor");
    write_manifest(manifest, "monitor", run_config_json(config), parameters,
                   {options.model, options.cache}, {});

    std::uint64_t events_emitted = 0;
    std::string line;
    while (std::getline(input, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (is_blank(line)) continue;
        const std::vector<MatchEvent> events = session.process(line);
        for (const MatchEvent& event : events) {
            json record;
            record["seq"] = event.sequence_number;
            record["statement"] = event.statement;
            record["condition_id"] = event.condition_id;
            record["p"] = event.probability;
            record["match"] = event.decision;
            output << record.dump() << '\n';
        }
        output.flush();
        events_emitted += events.size();
    }

    // End-of-stream summary. Per-pair scoring would have cost two encoder
    // passes per event; with the cache each statement is encoded once and
    // the conditions were encoded once when the cache was built, so the
    // measured ratio is (statements + conditions) / (2 * events).
    const RuntimeCounters counters = session.counters();
    json summary;
    summary["statements"] = session.statements_processed();
    summary["events"] = events_emitted;
    summary["statement_encodes"] = counters.statement_encodes;
    summary["kde_builds"] = counters.kde_builds;
    summary["head_evaluations"] = counters.head_evaluations;
    summary["encoder_passes_with_cache"] = counters.statement_encodes + condition_count;
    summary["encoder_passes_without_cache"] = 2 * events_emitted;
    if (events_emitted > 0) {
        summary["encoder_pass_ratio"] =
            static_cast<double>(counters.statement_encodes + condition_count) /
            static_cast<double>(2 * events_emitted);
    }
    error << summary.dump() << '\n';
    return 0;
}

struct FlopsOptions {
    std::uint64_t encoder_params = 0;
    std::uint64_t seq_len = 128;
    std::uint64_t n_encoders = 2;
    std::uint64_t kde_tokens = 0; // 0 = use seq_len
    std::string out;
    std::string manifest;
};

int cmd_flops(const RunConfig& config, const FlopsOptions& options, std::ostream& output) {
    FlopsConfig flops;
    flops.encoder_params = options.encoder_params;
    flops.seq_len = options.seq_len;
    flops.n_encoders = options.n_encoders;
    flops.embedding_dim = config.embedding_dim;
    flops.kde_tokens = options.kde_tokens == 0 ? options.seq_len : options.kde_tokens;
    flops.head_widths.push_back(config.embedding_dim);
    if (parse_head_kind(config.head) == HeadKind::MLP) {
        for (std::size_t width : config.hidden_sizes) flops.head_widths.push_back(width);
    }
    flops.head_widths.push_back(2);
    flops.kernel = parse_kernel_kind(config.kernel);
    const FlopsReport report = estimate_flops(flops);

    json block;
    block["encoder"] = report.encoder;
    block["kde"] = report.kde;
    block["head"] = report.head;
    block["total"] = report.total;
    // Published forward-pass costs for context. Speedups are reported, not
    // asserted: the published counting conventions are unstated.
    json references;
    references["dual_encoder_219m"] = kReferenceDualEncoderFlops;
    references["decoder_3200m"] = kReferenceLlama3BFlops;
    references["decoder_3820m"] = kReferencePhiMiniFlops;
    block["reference_flops"] = references;
    if (report.total > 0) {
        json speedups;
        speedups["dual_encoder_219m"] = static_cast<double>(kReferenceDualEncoderFlops) /
                                        static_cast<double>(report.total);
        speedups["decoder_3200m"] = static_cast<double>(kReferenceLlama3BFlops) /
                                    static_cast<double>(report.total);
        speedups["decoder_3820m"] = static_cast<double>(kReferencePhiMiniFlops) /
                                    static_cast<double>(report.total);
        block["reference_speedups"] = speedups;
    }

    std::vector<std::string> outputs;
    if (!options.out.empty()) {
        write_text_file(options.out, block.dump(2) + "\n");
        outputs.push_back(options.out);
    }
    json parameters;
    parameters["encoder_params"] = options.encoder_params;
    parameters["seq_len"] = options.seq_len;
    parameters["n_encoders"] = options.n_encoders;
    parameters["kde_tokens"] = flops.kde_tokens;
    if (!options.out.empty()) parameters["out"] = options.out;
    const std::string manifest = manifest_path(options.manifest, options.out, "flops");
    write_manifest(manifest, "flops", run_config_json(config), parameters, {}, outputs);

    output << block.dump() << '\n';
    return 0;
}

struct GradCheckOptions {
    std::size_t batch = 4;
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    std::string out;
    std::string manifest;
};

int cmd_grad_check(const RunConfig& config, const GradCheckOptions& options, std::ostream& output,
                   std::ostream& error) {
    config.validate();
    ModelBundle bundle = make_bundle(config.bundle_spec());
    ToyDataSpec data_spec;
    data_spec.seed = config.seed;
    data_spec.n_pairs = options.batch;
    data_spec.negative_ratio = 1.0; // both labels present in the probe batch
    const std::vector<LabeledPair> batch = generate_toy_dataset(data_spec);
    const EncoderHooks hooks = make_hooks(config.embedding_source());

    std::vector<double> per_tensor;
    const double max_error = gradient_check(bundle, batch, options.epsilon, hooks, &per_tensor);
    const ParameterRefs refs = trainable_parameters(bundle);

    json report;
    report["max_relative_error"] = max_error;
    report["epsilon"] = options.epsilon;
    report["tolerance"] = options.tolerance;
    report["passed"] = max_error <= options.tolerance;
    json tensors = json::object();
    for (std::size_t i = 0; i < per_tensor.size() && i < refs.names.size(); ++i) {
        tensors[refs.names[i]] = per_tensor[i];
    }
    report["per_tensor_max"] = tensors;

    std::vector<std::string> outputs;
    if (!options.out.empty()) {
        write_text_file(options.out, report.dump(2) + "\n");
        outputs.push_back(options.out);
    }
    json parameters;
    parameters["batch"] = options.batch;
    parameters["epsilon"] = options.epsilon;
    parameters["tolerance"] = options.tolerance;
    if (!options.out.empty()) parameters["out"] = options.out;
    const std::string manifest = manifest_path(options.manifest, options.out, "grad-check");
    write_manifest(manifest, "grad-check", run_config_json(config), parameters, {}, outputs);

    output << report.dump() << '\n';
    if (max_error > options.tolerance) {
        json failure;
        failure["error"] = "gradient_mismatch";
        failure["message"] = "max relative error " + std::to_string(max_error) +
                             " exceeds tolerance " + std::to_string(options.tolerance);
        error << failure.dump() << '\n';
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Option wiring.
// ---------------------------------------------------------------------------

/// Full hyperparameter surface, for subcommands that build or train models.
void add_model_options(CLI::App* cmd, RunConfig& config, std::string& config_file) {
    cmd->add_option("--config", config_file,
                    "JSON file with run-config keys; explicit flags override it");
    cmd->add_option("--kernel", config.kernel, "Kernel: gaussian | epanechnikov | triangular");
    cmd->add_option("--bandwidth-rule", config.bandwidth_rule,
                    "Bandwidth rule: scott | silverman | fixed");
    cmd->add_option("--fixed-bandwidth", config.fixed_bandwidth,
                    "Bandwidth value when the rule is fixed");
    cmd->add_option("--head", config.head, "Classification head: linear | mlp");
    cmd->add_option("--hidden", config.hidden_sizes, "MLP hidden widths (ignored for linear)");
    cmd->add_option("--kde-side", config.kde_side,
                    "Side expanded into densities: statement | condition");
    cmd->add_option("--learning-rate", config.learning_rate, "Optimizer step size");
    cmd->add_option("--epochs", config.epochs, "Training epochs");
    cmd->add_option("--batch-size", config.batch_size, "Pairs per training batch");
    cmd->add_option("--optimizer", config.optimizer, "Optimizer: sgd | adam");
    cmd->add_option("--class-weight", config.class_weight, "Positive-class loss weight");
    cmd->add_flag("--log-density,!--no-log-density", config.use_log_density,
                  "Feed log(density + 1e-12) to the head instead of raw values");
    cmd->add_option("--seed", config.seed, "Model initialization / shuffle seed");
    cmd->add_option("--embedding-dim", config.embedding_dim,
                    "Embedding width (must match external embeddings)");
    cmd->add_option("--vocab-size", config.vocab_size, "Toy encoder table rows");
    cmd->add_option("--embeddings", config.embeddings,
                    "Embedding source: toy | file:<dir> | http(s) endpoint");
}

/// Just the embedding-source surface, for subcommands that load a finished
/// bundle and only need to know where token embeddings come from.
void add_source_options(CLI::App* cmd, RunConfig& config, std::string& config_file) {
    cmd->add_option("--config", config_file,
                    "JSON file with run-config keys; explicit flags override it");
    cmd->add_option("--embeddings", config.embeddings,
                    "Embedding source: toy | file:<dir> | http(s) endpoint");
}

int dispatch(const std::vector<std::string>& args, std::istream& input, std::ostream& output,
             std::ostream& error) {
    RunConfig config;
    if (const std::optional<std::string> config_file = find_config_flag(args)) {
        apply_config_file(config, *config_file);
    }

    CLI::App app{"Dual-encoder density-matching classifier toolkit"};
    app.name("aen");
    app.require_subcommand(1);
    std::string config_flag; // re-consumed here; already applied above

    GenToyOptions gen_toy;
    CLI::App* gen_cmd = app.add_subcommand("gen-toy", "Write a deterministic synthetic dataset");
    gen_cmd->add_option("--out", gen_toy.out, "Output JSONL path")->required();
    gen_cmd->add_option("--seed", gen_toy.seed, "Generator seed");
    gen_cmd->add_option("--n", gen_toy.n, "Total number of pairs")->required();
    gen_cmd->add_option("--topics", gen_toy.topics, "Number of distinct topics");
    gen_cmd->add_option("--negative-ratio", gen_toy.negative_ratio, "Negatives per positive");
    gen_cmd->add_option("--manifest", gen_toy.manifest, "Run manifest path");

    TrainOptions train;
    CLI::App* train_cmd = app.add_subcommand("train", "Fit a model on a JSONL dataset");
    train_cmd->add_option("--data", train.data, "Training dataset (JSONL)")->required();
    train_cmd->add_option("--out", train.out, "Output bundle path")->required();
    train_cmd->add_option("--metrics", train.metrics,
                          "Per-epoch metrics path (default <out>.metrics.json)");
    train_cmd->add_option("--manifest", train.manifest, "Run manifest path");
    add_model_options(train_cmd, config, config_flag);

    EvalOptions eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score a trained bundle on a dataset");
    eval_cmd->add_option("--model", eval.model, "Trained bundle path")->required();
    eval_cmd->add_option("--data", eval.data, "Evaluation dataset (JSONL)")->required();
    eval_cmd->add_option("--out", eval.out, "Also write the report here (pretty JSON)");
    eval_cmd->add_option("--manifest", eval.manifest, "Run manifest path");
    add_source_options(eval_cmd, config, config_flag);

    KsOptions ks;
    CLI::App* ks_cmd =
        app.add_subcommand("ks", "Per-dimension two-sample KS study over embeddings");
    ks_cmd->add_option("--embeddings-dir", ks.embeddings_dir,
                       "Directory of .aene files to analyze directly");
    ks_cmd->add_option("--data", ks.data, "Dataset whose statements are encoded and analyzed");
    ks_cmd->add_option("--policy", ks.policy, "Pairing: consecutive | all-pairs | sampled");
    ks_cmd->add_option("--max-pairs", ks.max_pairs, "Pair budget for the sampled policy");
    ks_cmd->add_option("--out", ks.out, "Also write the summary here (pretty JSON)");
    ks_cmd->add_option("--manifest", ks.manifest, "Run manifest path");
    ks_cmd->add_option("--seed", config.seed, "Encoder and sampling seed");
    ks_cmd->add_option("--embedding-dim", config.embedding_dim, "Toy encoder embedding width");
    ks_cmd->add_option("--vocab-size", config.vocab_size, "Toy encoder table rows");
    add_source_options(ks_cmd, config, config_flag);

    CacheOptions cache;
    CLI::App* cache_cmd =
        app.add_subcommand("cache", "Precompute pooled condition vectors for monitoring");
    cache_cmd->add_option("--model", cache.model, "Trained bundle path")->required();
    cache_cmd->add_option("--conditions", cache.conditions,
                          "Text file, one condition per line (blank lines skipped)")
        ->required();
    cache_cmd->add_option("--out", cache.out, "Output cache path")->required();
    cache_cmd->add_option("--threshold", cache.threshold,
                          "Match-probability decision threshold in (0, 1)");
    cache_cmd->add_option("--manifest", cache.manifest, "Run manifest path");
    add_source_options(cache_cmd, config, config_flag);

    MonitorOptions monitor;
    CLI::App* monitor_cmd = app.add_subcommand(
        "monitor", "Stream statements from stdin, emit match events as JSONL");
    monitor_cmd->add_option("--model", monitor.model, "Trained bundle path")->required();
    monitor_cmd->add_option("--cache", monitor.cache, "Condition cache path")->required();
    monitor_cmd->add_option("--manifest", monitor.manifest, "Run manifest path");
    add_source_options(monitor_cmd, config, config_flag);

    FlopsOptions flops;
    CLI::App* flops_cmd =
        app.add_subcommand("flops", "Forward-pass cost model with published reference ratios");
    flops_cmd->add_option("--encoder-params", flops.encoder_params,
                          "Parameters per encoder (0 for precomputed embeddings)");
    flops_cmd->add_option("--seq-len", flops.seq_len, "Tokens per sequence");
    flops_cmd->add_option("--n-encoders", flops.n_encoders, "Encoder passes per pair");
    flops_cmd->add_option("--kde-tokens", flops.kde_tokens,
                          "Kernel centers per dimension (default: seq-len)");
    flops_cmd->add_option("--out", flops.out, "Also write the report here (pretty JSON)");
    flops_cmd->add_option("--manifest", flops.manifest, "Run manifest path");
    flops_cmd->add_option("--kernel", config.kernel,
                          "Kernel: gaussian | epanechnikov | triangular");
    flops_cmd->add_option("--embedding-dim", config.embedding_dim, "Density dimensions");
    flops_cmd->add_option("--head", config.head, "Classification head: linear | mlp");
    flops_cmd->add_option("--hidden", config.hidden_sizes, "MLP hidden widths");
    flops_cmd->add_option("--config", config_flag,
                          "JSON file with run-config keys; explicit flags override it");

    GradCheckOptions grad_check;
    CLI::App* grad_cmd = app.add_subcommand(
        "grad-check", "Analytic vs finite-difference gradients on a fresh model");
    grad_cmd->add_option("--batch", grad_check.batch, "Probe batch size (at most 8)");
    grad_cmd->add_option("--epsilon", grad_check.epsilon, "Finite-difference step");
    grad_cmd->add_option("--tolerance", grad_check.tolerance,
                         "Max relative error allowed for exit code 0");
    grad_cmd->add_option("--out", grad_check.out, "Also write the report here (pretty JSON)");
    grad_cmd->add_option("--manifest", grad_check.manifest, "Run manifest path");
    add_model_options(grad_cmd, config, config_flag);

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("aen");
    for (const std::string& arg : args) argv.push_back(arg.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForAllHelp&) {
        output << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForHelp&) {
        // help() renders the parsed subcommand's help when there is one.
        output << app.help();
        return 0;
    }

    if (gen_cmd->parsed()) return cmd_gen_toy(gen_toy, output);
    if (train_cmd->parsed()) return cmd_train(config, train, output);
    if (eval_cmd->parsed()) return cmd_eval(config, eval, output);
    if (ks_cmd->parsed()) return cmd_ks(config, ks, output);
    if (cache_cmd->parsed()) return cmd_cache(config, cache, output);
    if (monitor_cmd->parsed()) return cmd_monitor(config, monitor, input, output, error);
    if (flops_cmd->parsed()) return cmd_flops(config, flops, output);
    if (grad_cmd->parsed()) return cmd_grad_check(config, grad_check, output, error);
    throw std::logic_error("no subcommand dispatched"); // unreachable after require_subcommand
}

int fail(std::ostream& error, std::string_view kind, std::string_view message) {
    json line;
    line["error"] = kind;
    line["message"] = message;
    error << line.dump() << '\n';
    return 1;
}

} // namespace

int run_command(const std::vector<std::string>& args, std::istream& input, std::ostream& output,
                std::ostream& error) {
    // One exception boundary for every subcommand: the exception type picks
    // the machine-readable error kind, the message carries the details.
    try {
        return dispatch(args, input, output, error);
    } catch (const CLI::ParseError& e) {
        return fail(error, "usage", e.what());
    } catch (const format_error& e) {
        return fail(error, "format", e.what());
    } catch (const transport_error& e) {
        return fail(error, "transport", e.what());
    } catch (const fingerprint_error& e) {
        return fail(error, "fingerprint", e.what());
    } catch (const std::invalid_argument& e) {
        return fail(error, "invalid_argument", e.what());
    } catch (const std::domain_error& e) {
        return fail(error, "domain", e.what());
    } catch (const std::exception& e) {
        return fail(error, "internal", e.what());
    }
}

} // namespace aen
