#pragma once

#include "aen/model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <string>
#include <vector>

namespace aen {

// ---------------------------------------------------------------------------
// Condition cache.
// ---------------------------------------------------------------------------

/// One precomputed condition: the original text, a content-hash id, and the
/// mean-pooled embedding that stands in for the whole condition branch when
/// densities are estimated on the statement side.
struct CachedCondition {
    std::string id;
    std::string original_text;
    Vector pooled;
};

/// Pooled condition vectors bound to one specific model via its fingerprint,
/// plus the decision threshold applied to the positive-class probability.
struct ConditionCache {
    std::vector<CachedCondition> entries;
    std::uint64_t model_fingerprint = 0;
    double threshold = 0.5;

    /// Throws std::invalid_argument on a zero fingerprint, a threshold
    /// outside (0, 1), a non-finite or empty pooled vector, duplicate ids,
    /// or entries of mixed dimension. An entry-less cache is permitted.
    void validate() const;
};

/// Precompute pooled vectors for a list of raw condition strings ("When
/// someone ..." prefixes are stripped first). Ids are content hashes of the
/// original text, so repeated strings collapse into one entry. Requires
/// kde_side = Statement: only then does the condition branch reduce to a
/// single pooled vector (the mirrored configuration would need full token
/// matrices and is rejected rather than silently supported). Throws
/// std::invalid_argument on that configuration, an empty list, an
/// out-of-range threshold, or a condition with no tokens (naming its index).
ConditionCache build_condition_cache(const ModelBundle& bundle,
                                     const std::vector<std::string>& conditions,
                                     const EncoderHooks& hooks = {}, double threshold = 0.5);

// Cache file format ("AENC"):
//   magic "AENC", version u16 LE = 1, model fingerprint u64 LE, threshold
//   f64 LE, entry count u32 LE; per entry: id length u16 LE + UTF-8 bytes,
//   text length u32 LE + UTF-8 bytes, dim u32 LE, dim float32 LE values.
// Pooled values are stored in 32-bit precision; in-memory caches keep 64.
void write_cache(const std::filesystem::path& path, const ConditionCache& cache);
ConditionCache read_cache(const std::filesystem::path& path);
void write_cache_stream(std::ostream& out, const ConditionCache& cache);
ConditionCache read_cache_stream(std::istream& in);

/// Throws fingerprint_error when the cache was built for a different model
/// (both fingerprints are named in the message).
void require_cache_match(const ModelBundle& bundle, const ConditionCache& cache);

// ---------------------------------------------------------------------------
// Streaming evaluation.
// ---------------------------------------------------------------------------

/// One scored (statement, condition) pair in a monitor stream.
struct MatchEvent {
    std::string statement;
    std::string condition_id;
    double probability = 0.0; // positive class
    bool decision = false;    // probability >= cache threshold
    std::uint64_t sequence_number = 0;
};

/// Work actually performed, kept so tests can assert — and the monitor can
/// report — what caching saves: one statement encode and one KDE build per
/// statement regardless of cache size, where per-pair scoring would cost two
/// encoder passes for every (statement, condition) pair.
struct RuntimeCounters {
    std::uint64_t statement_encodes = 0;
    std::uint64_t kde_builds = 0;
    std::uint64_t head_evaluations = 0;
};

/// Score one statement against every cached condition, in cache order. The
/// statement is encoded once and its KDE built once; each cached pooled
/// vector reuses them, so the probabilities are bit-identical to per-pair
/// aen_forward calls in eval mode. Events are numbered sequence_start,
/// sequence_start + 1, ... Throws fingerprint_error on a cache/model
/// mismatch and std::domain_error when the statement has no tokens.
std::vector<MatchEvent> evaluate_statement(const ModelBundle& bundle, const ConditionCache& cache,
                                           const std::string& statement,
                                           const EncoderHooks& hooks = {},
                                           std::uint64_t sequence_start = 0,
                                           RuntimeCounters* counters = nullptr);

/// Stateful wrapper for a stream of statements: hands out strictly
/// increasing sequence numbers and accumulates counters. The bundle and the
/// cache are immutable for the session's lifetime, so concurrent process()
/// calls contend only on the sequence/counter lock. The bundle must outlive
/// the session.
class MonitorSession {
public:
    MonitorSession(const ModelBundle& bundle, ConditionCache cache, EncoderHooks hooks = {});

    /// Evaluate one statement; returns its events in cache order.
    std::vector<MatchEvent> process(const std::string& statement);

    RuntimeCounters counters() const;
    std::uint64_t statements_processed() const;
    const ConditionCache& cache() const { return cache_; }

private:
    const ModelBundle& bundle_;
    ConditionCache cache_;
    EncoderHooks hooks_;
    mutable std::mutex mutex_;
    std::uint64_t next_sequence_ = 0;
    std::uint64_t statements_ = 0;
    RuntimeCounters counters_;
};

} // namespace aen
