#pragma once

#include "aen/core.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace aen {

/// One supervised example: does the statement satisfy the condition?
struct LabeledPair {
    std::string statement;
    std::string condition;
    int label = 0;      // 1 = condition satisfied, 0 = not
    std::string source; // optional provenance tag, empty when absent

    bool operator==(const LabeledPair&) const = default;
};

/// A length-homogeneous group of pairs produced by batch_by_length.
struct Batch {
    std::vector<LabeledPair> pairs;
    std::size_t max_statement_tokens = 0;
};

/// Conditions conventionally open with the marker phrase "When someone ";
/// those two words carry no class signal, so they are removed before
/// encoding. Matching is case-insensitive and the phrase is stripped
/// repeatedly so the operation is idempotent even on inputs where the marker
/// is stacked. The result is trimmed of leading whitespace. Throws
/// std::domain_error if nothing remains.
std::string preprocess_condition(std::string_view text);

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Whitespace-run count; matches the toy encoder's tokenizer so batch
/// statistics reflect what the encoder actually sees.
std::size_t toy_token_count(std::string_view text);

/// Stable-sort pairs by statement token count, then chunk consecutively into
/// groups of at most batch_size. Minimizes padding for this sort-then-chunk
/// scheme. Throws std::domain_error on empty input, std::invalid_argument on
/// batch_size = 0.
std::vector<Batch> batch_by_length(std::vector<LabeledPair> pairs, std::size_t batch_size,
                                   const TokenCounter& count_tokens = toy_token_count);

/// Recipe for the deterministic synthetic benchmark: each statement carries
/// one topic's keyword (at two of its eight token slots) amid neutral
/// filler; positives pair it with that topic's condition, negatives with a
/// different topic's condition.
struct ToyDataSpec {
    std::uint64_t seed = 0;
    std::size_t n_pairs = 0;
    std::size_t n_topics = 50;
    double negative_ratio = 6.0; // negatives per positive
};

/// Shipped vocabularies. Topic and filler words are disjoint, and the whole
/// vocabulary is collision-free under the toy encoder's default hash table
/// size, so distinct words never share an embedding row.
const std::vector<std::string>& toy_topic_words();
const std::vector<std::string>& toy_filler_words();

/// Deterministic from spec.seed. Positive count is round(n/(1+ratio)) so the
/// realized class ratio tracks negative_ratio exactly, not stochastically.
/// Conditions are emitted in raw form ("When someone mentions <topic>").
/// Throws std::invalid_argument on n_topics < 2 or out-of-range parameters.
std::vector<LabeledPair> generate_toy_dataset(const ToyDataSpec& spec);

// Dataset files are UTF-8 JSONL: {"statement": str, "condition": str,
// "label": 0|1, "source"?: str}, one object per line. Conditions pass
// through preprocess_condition on load. A malformed line aborts the load
// with a message naming the line; with skip_bad the line is reported to
// `warnings` and skipped instead.
std::vector<LabeledPair> load_dataset_jsonl(const std::filesystem::path& path,
                                            bool skip_bad = false,
                                            std::ostream* warnings = nullptr);
std::vector<LabeledPair> load_dataset_jsonl_stream(std::istream& in, std::string_view origin,
                                                   bool skip_bad = false,
                                                   std::ostream* warnings = nullptr);
void write_dataset_jsonl(const std::filesystem::path& path,
                         const std::vector<LabeledPair>& pairs);
void write_dataset_jsonl_stream(std::ostream& out, const std::vector<LabeledPair>& pairs);

} // namespace aen
