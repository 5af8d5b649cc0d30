#include "aen/data.hpp"

#include "aen/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace aen {

namespace {

constexpr std::string_view kConditionMarker = "when someone ";

bool starts_with_marker(std::string_view text) {
    if (text.size() < kConditionMarker.size()) return false;
    for (std::size_t i = 0; i < kConditionMarker.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(text[i])) != kConditionMarker[i]) {
            return false;
        }
    }
    return true;
}

std::string_view trim_leading(std::string_view text) {
    std::size_t i = 0;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    return text.substr(i);
}

} // namespace

std::string preprocess_condition(std::string_view text) {
    if (text.empty()) {
        throw std::domain_error("preprocess_condition: empty condition");
    }
    std::string_view rest = trim_leading(text);
    while (starts_with_marker(rest)) {
        rest = trim_leading(rest.substr(kConditionMarker.size()));
    }
    if (rest.empty()) {
        throw std::domain_error("preprocess_condition: condition is empty after stripping");
    }
    return std::string(rest);
}

std::size_t toy_token_count(std::string_view text) {
    std::size_t count = 0;
    bool in_token = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_token) ++count;
        in_token = !space;
    }
    return count;
}

std::vector<Batch> batch_by_length(std::vector<LabeledPair> pairs, std::size_t batch_size,
                                   const TokenCounter& count_tokens) {
    if (pairs.empty()) {
        throw std::domain_error("batch_by_length: empty pair list");
    }
    if (batch_size == 0) {
        throw std::invalid_argument("batch_by_length: batch_size must be >= 1");
    }
    std::vector<std::size_t> counts(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        counts[i] = count_tokens(pairs[i].statement);
    }
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return counts[a] < counts[b]; });

    std::vector<Batch> batches;
    batches.reserve((pairs.size() + batch_size - 1) / batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        Batch batch;
        const std::size_t end = std::min(start + batch_size, order.size());
        batch.pairs.reserve(end - start);
        for (std::size_t k = start; k < end; ++k) {
            batch.pairs.push_back(std::move(pairs[order[k]]));
            batch.max_statement_tokens = std::max(batch.max_statement_tokens, counts[order[k]]);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

const std::vector<std::string>& toy_topic_words() {
    static const std::vector<std::string> words = {
        "alchemy",       "badgers",    "calligraphy", "dumplings",  "eclipses",
        "falcons",       "gargoyles",  "harmonicas",  "icebergs",   "jugglers",
        "kayaks",        "lanterns",   "meteors",     "nebulae",    "origami",
        "puzzles",       "quasars",    "robotics",    "saxophones", "tornadoes",
        "umbrellas",     "volcanoes",  "waterfalls",  "xylophones", "yodeling",
        "zeppelins",     "anchors",    "bonsai",      "cartography", "dominoes",
        "embers",        "fjords",     "glaciers",    "hammocks",   "irises",
        "jasmine",       "kaleidoscopes", "labyrinths", "marmalade", "nutmeg",
        "obsidian",      "pendulums",  "quilts",      "riddles",    "sundials",
        "telescopes",    "ukuleles",   "vineyards",   "windmills",  "yachts",
        "zithers",       "acorns",     "beacons",     "canyons",    "druids",
        "eels",          "ferns",      "geysers",     "herons",     "ivory",
        "jade",          "kelp",       "lichen",      "marbles",
    };
    return words;
}

const std::vector<std::string>& toy_filler_words() {
    static const std::vector<std::string> words = {
        "the",      "a",        "an",       "and",       "or",        "but",
        "about",    "after",    "before",   "with",      "without",   "near",
        "under",    "over",     "between",  "through",   "quite",     "rather",
        "very",     "slightly", "mostly",   "somewhat",  "people",    "often",
        "rarely",   "sometimes", "usually", "never",     "always",    "talk",
        "talks",    "write",    "writes",   "think",     "thinks",    "wonder",
        "wonders",  "learn",    "learns",   "read",      "reads",     "share",
        "shares",   "enjoy",    "enjoys",   "study",     "studies",   "describe",
        "describes", "today",
    };
    return words;
}

std::vector<LabeledPair> generate_toy_dataset(const ToyDataSpec& spec) {
    const auto& topics = toy_topic_words();
    const auto& fillers = toy_filler_words();
    if (spec.n_pairs == 0) {
        throw std::invalid_argument("toy dataset: n_pairs must be >= 1");
    }
    if (spec.n_topics < 2) {
        throw std::invalid_argument("toy dataset: n_topics must be >= 2 to form negatives");
    }
    if (spec.n_topics > topics.size()) {
        throw std::invalid_argument("toy dataset: n_topics exceeds the shipped vocabulary (" +
                                    std::to_string(topics.size()) + ")");
    }
    if (!(spec.negative_ratio > 0.0)) {
        throw std::invalid_argument("toy dataset: negative_ratio must be > 0");
    }

    // Exact positive count so the realized ratio honors negative_ratio
    // instead of fluctuating with the seed.
    const auto n = spec.n_pairs;
    std::size_t n_pos = static_cast<std::size_t>(
        std::llround(static_cast<double>(n) / (1.0 + spec.negative_ratio)));
    n_pos = std::clamp<std::size_t>(n_pos, 1, n > 1 ? n - 1 : 1);

    SplitMix64 rng(spec.seed);
    std::vector<int> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(labels[i - 1], labels[rng.next_below(i)]);
    }

    std::vector<LabeledPair> pairs;
    pairs.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t topic = rng.next_below(spec.n_topics);
        std::size_t cond_topic = topic;
        if (labels[k] == 0) {
            cond_topic = (topic + 1 + rng.next_below(spec.n_topics - 1)) % spec.n_topics;
        }

        // Statements share a fixed shape: 8 tokens with the topic keyword at
        // two distinct positions. A constant length keeps the density scale
        // comparable across pairs, so the label signal lives purely in the
        // query-to-center geometry rather than in estimator normalization.
        constexpr std::size_t kStatementTokens = 8;
        const std::size_t first = rng.next_below(kStatementTokens);
        std::size_t second = rng.next_below(kStatementTokens - 1);
        if (second >= first) ++second;
        std::string statement;
        for (std::size_t t = 0; t < kStatementTokens; ++t) {
            if (t > 0) statement.push_back(' ');
            if (t == first || t == second) {
                statement += topics[topic];
            } else {
                statement += fillers[rng.next_below(fillers.size())];
            }
        }

        LabeledPair pair;
        pair.statement = std::move(statement);
        pair.condition = "When someone mentions " + topics[cond_topic];
        pair.label = labels[k];
        pair.source = "toy";
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

namespace {

using nlohmann::json;

LabeledPair parse_dataset_line(const std::string& line, std::string_view origin,
                               std::size_t line_no) {
    const auto fail = [&](const std::string& why) -> format_error {
        return format_error(std::string(origin) + ":" + std::to_string(line_no) + ": " + why);
    };
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw fail(std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw fail("expected a JSON object");
    if (!obj.contains("statement") || !obj["statement"].is_string()) {
        throw fail("missing or non-string \"statement\"");
    }
    if (!obj.contains("condition") || !obj["condition"].is_string()) {
        throw fail("missing or non-string \"condition\"");
    }
    if (!obj.contains("label") || !obj["label"].is_number_integer()) {
        throw fail("missing or non-integer \"label\"");
    }
    const auto label = obj["label"].get<std::int64_t>();
    if (label != 0 && label != 1) {
        throw fail("label must be 0 or 1, got " + std::to_string(label));
    }
    LabeledPair pair;
    pair.statement = obj["statement"].get<std::string>();
    if (pair.statement.empty()) throw fail("empty statement");
    try {
        pair.condition = preprocess_condition(obj["condition"].get<std::string>());
    } catch (const std::domain_error& e) {
        throw fail(e.what());
    }
    pair.label = static_cast<int>(label);
    if (obj.contains("source")) {
        if (!obj["source"].is_string()) throw fail("non-string \"source\"");
        pair.source = obj["source"].get<std::string>();
    }
    return pair;
}

} // namespace

std::vector<LabeledPair> load_dataset_jsonl_stream(std::istream& in, std::string_view origin,
                                                   bool skip_bad, std::ostream* warnings) {
    std::vector<LabeledPair> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            pairs.push_back(parse_dataset_line(line, origin, line_no));
        } catch (const format_error& e) {
            if (!skip_bad) throw;
            if (warnings) *warnings << "warning: skipped " << e.what() << "\n";
        }
    }
    return pairs;
}

std::vector<LabeledPair> load_dataset_jsonl(const std::filesystem::path& path, bool skip_bad,
                                            std::ostream* warnings) {
    std::ifstream in(path);
    if (!in) {
        throw format_error("cannot open dataset: " + path.string());
    }
    return load_dataset_jsonl_stream(in, path.string(), skip_bad, warnings);
}

void write_dataset_jsonl_stream(std::ostream& out, const std::vector<LabeledPair>& pairs) {
    for (const auto& pair : pairs) {
        nlohmann::ordered_json obj;
        obj["statement"] = pair.statement;
        obj["condition"] = pair.condition;
        obj["label"] = pair.label;
        if (!pair.source.empty()) obj["source"] = pair.source;
        out << obj.dump() << "\n";
    }
    if (!out) {
        throw format_error("dataset write failed");
    }
}

void write_dataset_jsonl(const std::filesystem::path& path, const std::vector<LabeledPair>& pairs) {
    std::ofstream out(path);
    if (!out) {
        throw format_error("cannot open dataset for writing: " + path.string());
    }
    write_dataset_jsonl_stream(out, pairs);
}

} // namespace aen
