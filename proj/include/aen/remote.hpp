#pragma once

#include "aen/data.hpp"
#include "aen/embeddings.hpp"

#include <chrono>
#include <cstddef>
#include <string>
#include <vector>

namespace aen {

/// Connection behavior shared by both remote clients. Transient failures
/// (unreachable host, timeout, 5xx) are retried max_retries times with
/// exponentially doubling backoff; 4xx responses are treated as permanent
/// and fail immediately.
struct RemoteOptions {
    std::chrono::milliseconds timeout{5000};
    int max_retries = 2;
    std::chrono::milliseconds backoff_base{100};
};

/// Fetch per-token embeddings for a batch of texts from an embedding
/// service: POST <endpoint>/embed with {"texts": [...]}, expecting
/// {"dim": int, "embeddings": [[[...], ...], ...], "masks": [[0|1, ...], ...]}
/// with one token matrix and mask per input text. All matrices must agree
/// with the advertised dimension. The returned TokenEmbeddings carry no
/// source rows, so models fed this way train their head only.
///
/// Throws std::invalid_argument on an empty text list, transport_error once
/// retries are exhausted (or immediately on a permanent status), and
/// format_error on a response that does not match the shape above.
std::vector<TokenEmbeddings> fetch_remote_embeddings(const std::string& endpoint,
                                                     const std::vector<std::string>& texts,
                                                     const RemoteOptions& options = {});

/// Prompt templates for the generation service. Templates are configuration,
/// not code: "{condition}" and "{statement}" placeholders are substituted
/// before each call, so the prompts can be reworded without rebuilding.
struct GenerationPrompts {
    std::string condition_prompt = "Write one short condition of the form "
                                   "\"When someone mentions <topic>\".";
    std::string statement_prompt = "Write one short conversational sentence. It may or may "
                                   "not satisfy: {condition}";
    std::string label_prompt = "Statement: {statement}\nCondition: {condition}\n"
                               "Answer 1 if the statement satisfies the condition, else 0.";
};

// Sampling parameters fixed per call type: statements are drawn hot for
// variety, conditions at neutral settings, labels greedily so the verdict
// is reproducible.
constexpr double kStatementTemperature = 1.6;
constexpr double kStatementTopP = 0.85;
constexpr double kConditionTemperature = 1.0;
constexpr double kConditionTopP = 1.0;
constexpr double kLabelTemperature = 0.0;
constexpr double kLabelTopP = 1.0;

struct RemoteGenerationSpec {
    std::string endpoint;
    std::size_t n_pairs = 0;
    GenerationPrompts prompts;
    RemoteOptions options;
};

/// One text completion: POST <endpoint>/generate with {"prompt", "temperature",
/// "top_p"}, expecting {"text": str}. Same retry/error behavior as
/// fetch_remote_embeddings.
std::string generate_remote_text(const std::string& endpoint, const std::string& prompt,
                                 double temperature, double top_p,
                                 const RemoteOptions& options = {});

/// Service-backed counterpart of generate_toy_dataset: for each pair, draw a
/// condition, draw a statement given that condition, then ask for a 0/1
/// label at temperature 0. Pair sources are set to "remote". Conditions are
/// stored raw, exactly as the service produced them.
///
/// Throws std::invalid_argument on n_pairs = 0 and format_error when the
/// label call returns anything but 0 or 1 (after trimming whitespace).
std::vector<LabeledPair> generate_remote_dataset(const RemoteGenerationSpec& spec);

} // namespace aen
