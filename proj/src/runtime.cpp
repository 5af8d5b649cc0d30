#include "aen/runtime.hpp"

#include "aen/errors.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace aen {

// ---------------------------------------------------------------------------
// Condition cache.
// ---------------------------------------------------------------------------

void ConditionCache::validate() const {
    if (model_fingerprint == 0) {
        throw std::invalid_argument("ConditionCache: missing model fingerprint");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw std::invalid_argument("ConditionCache: threshold must lie in (0, 1)");
    }
    std::unordered_set<std::string> ids;
    for (const auto& entry : entries) {
        if (entry.id.empty()) {
            throw std::invalid_argument("ConditionCache: entry with empty id");
        }
        if (!ids.insert(entry.id).second) {
            throw std::invalid_argument("ConditionCache: duplicate id " + entry.id);
        }
        if (entry.pooled.empty() || entry.pooled.size() != entries.front().pooled.size()) {
            throw std::invalid_argument("ConditionCache: entries disagree on dimension");
        }
        if (!all_finite(entry.pooled)) {
            throw std::invalid_argument("ConditionCache: non-finite pooled value in " + entry.id);
        }
    }
}

ConditionCache build_condition_cache(const ModelBundle& bundle,
                                     const std::vector<std::string>& conditions,
                                     const EncoderHooks& hooks, double threshold) {
    bundle.validate();
    if (bundle.kde_side != KdeSide::Statement) {
        throw std::invalid_argument(
            "build_condition_cache: caching requires kde_side=statement; with kde_side=condition "
            "the condition branch needs full token matrices, not pooled vectors");
    }
    if (conditions.empty()) {
        throw std::invalid_argument("build_condition_cache: empty condition list");
    }
    ConditionCache cache;
    cache.model_fingerprint = bundle_fingerprint(bundle);
    cache.threshold = threshold;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        CachedCondition entry;
        entry.id = to_hex(fnv1a64(conditions[i]));
        if (!seen.insert(entry.id).second) continue; // same text, same id
        entry.original_text = conditions[i];
        try {
            entry.pooled = mean_pool(encode_condition(bundle, conditions[i], hooks));
        } catch (const std::domain_error&) {
            throw std::invalid_argument("build_condition_cache: condition " + std::to_string(i) +
                                        " has no tokens");
        }
        cache.entries.push_back(std::move(entry));
    }
    cache.validate();
    return cache;
}

namespace {

constexpr char kCacheMagic[4] = {'A', 'E', 'N', 'C'};
constexpr std::uint16_t kCacheVersion = 1;

} // namespace

void write_cache_stream(std::ostream& out, const ConditionCache& cache) {
    cache.validate();
    io::write_bytes(out, kCacheMagic, sizeof kCacheMagic);
    io::write_u16(out, kCacheVersion);
    io::write_u64(out, cache.model_fingerprint);
    io::write_f64(out, cache.threshold);
    io::write_u32(out, static_cast<std::uint32_t>(cache.entries.size()));
    for (const auto& entry : cache.entries) {
        io::write_u16(out, static_cast<std::uint16_t>(entry.id.size()));
        io::write_bytes(out, entry.id.data(), entry.id.size());
        io::write_u32(out, static_cast<std::uint32_t>(entry.original_text.size()));
        io::write_bytes(out, entry.original_text.data(), entry.original_text.size());
        io::write_u32(out, static_cast<std::uint32_t>(entry.pooled.size()));
        for (double v : entry.pooled) io::write_f32(out, static_cast<float>(v));
    }
    if (!out) throw format_error("cache write failed");
}

ConditionCache read_cache_stream(std::istream& in) {
    char magic[4];
    io::read_bytes(in, magic, sizeof magic);
    if (std::string_view(magic, 4) != std::string_view(kCacheMagic, 4)) {
        throw format_error("not a condition cache file (bad magic)");
    }
    const std::uint16_t version = io::read_u16(in);
    if (version != kCacheVersion) {
        throw format_error("unsupported cache version " + std::to_string(version));
    }
    ConditionCache cache;
    cache.model_fingerprint = io::read_u64(in);
    cache.threshold = io::read_f64(in);
    const std::uint32_t count = io::read_u32(in);
    cache.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CachedCondition entry;
        entry.id.resize(io::read_u16(in));
        io::read_bytes(in, entry.id.data(), entry.id.size());
        entry.original_text.resize(io::read_u32(in));
        io::read_bytes(in, entry.original_text.data(), entry.original_text.size());
        const std::uint32_t dim = io::read_u32(in);
        entry.pooled.resize(dim);
        for (std::uint32_t j = 0; j < dim; ++j) entry.pooled[j] = io::read_f32(in);
        cache.entries.push_back(std::move(entry));
    }
    try {
        cache.validate();
    } catch (const std::invalid_argument& e) {
        throw format_error(std::string("cache file is inconsistent: ") + e.what());
    }
    return cache;
}

void write_cache(const std::filesystem::path& path, const ConditionCache& cache) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw format_error("cannot open cache for writing: " + path.string());
    }
    write_cache_stream(out, cache);
}

ConditionCache read_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw format_error("cannot open cache for reading: " + path.string());
    }
    return read_cache_stream(in);
}

void require_cache_match(const ModelBundle& bundle, const ConditionCache& cache) {
    const std::uint64_t actual = bundle_fingerprint(bundle);
    if (actual != cache.model_fingerprint) {
        throw fingerprint_error("condition cache was built for model " +
                                to_hex(cache.model_fingerprint) + " but the loaded model is " +
                                to_hex(actual));
    }
}

// ---------------------------------------------------------------------------
// Streaming evaluation.
// ---------------------------------------------------------------------------

std::vector<MatchEvent> evaluate_statement(const ModelBundle& bundle, const ConditionCache& cache,
                                           const std::string& statement,
                                           const EncoderHooks& hooks,
                                           std::uint64_t sequence_start,
                                           RuntimeCounters* counters) {
    bundle.validate();
    cache.validate();
    require_cache_match(bundle, cache);
    if (bundle.kde_side != KdeSide::Statement) {
        throw std::invalid_argument("evaluate_statement: cache requires kde_side=statement");
    }

    // The whole point of the cache: one encoder pass and one KDE build per
    // statement, shared across every cached condition.
    const TokenEmbeddings tokens = encode_statement(bundle, statement, hooks);
    if (counters) ++counters->statement_encodes;
    if (tokens.dim() != bundle.head.config.input_width) {
        throw std::invalid_argument("evaluate_statement: embedding dimension mismatch");
    }
    const DimKDE kde =
        build_kde(tokens, bundle.kernel, bundle.bandwidth_rule, bundle.fixed_bandwidth);
    if (counters) ++counters->kde_builds;

    std::vector<MatchEvent> events;
    events.reserve(cache.entries.size());
    for (const auto& entry : cache.entries) {
        if (entry.pooled.size() != tokens.dim()) {
            throw std::invalid_argument("evaluate_statement: cache entry " + entry.id +
                                        " has dimension " + std::to_string(entry.pooled.size()) +
                                        ", model expects " + std::to_string(tokens.dim()));
        }
        // Identical call sequence to aen_forward from the densities onward,
        // so cached and uncached probabilities agree bit-for-bit.
        const Vector densities = eval_density(kde, entry.pooled);
        const Vector features = density_features(bundle.head.config, densities);
        const Vector logits = head_forward_single(bundle.head, features);
        const Vector probabilities = softmax2(logits);
        if (counters) ++counters->head_evaluations;

        MatchEvent event;
        event.statement = statement;
        event.condition_id = entry.id;
        event.probability = probabilities[1];
        event.decision = probabilities[1] >= cache.threshold;
        event.sequence_number = sequence_start + events.size();
        events.push_back(std::move(event));
    }
    return events;
}

MonitorSession::MonitorSession(const ModelBundle& bundle, ConditionCache cache, EncoderHooks hooks)
    : bundle_(bundle), cache_(std::move(cache)), hooks_(std::move(hooks)) {
    bundle_.validate();
    cache_.validate();
    require_cache_match(bundle_, cache_);
}

std::vector<MatchEvent> MonitorSession::process(const std::string& statement) {
    // Scoring touches only immutable state; the lock covers just numbering
    // and counter accumulation, so statements may be processed concurrently.
    RuntimeCounters local;
    std::vector<MatchEvent> events = evaluate_statement(bundle_, cache_, statement, hooks_, 0, &local);
    std::lock_guard<std::mutex> lock(mutex_);
    for (auto& event : events) event.sequence_number = next_sequence_++;
    counters_.statement_encodes += local.statement_encodes;
    counters_.kde_builds += local.kde_builds;
    counters_.head_evaluations += local.head_evaluations;
    ++statements_;
    return events;
}

RuntimeCounters MonitorSession::counters() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return counters_;
}

std::uint64_t MonitorSession::statements_processed() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return statements_;
}

} // namespace aen
