#include "aen/remote.hpp"

#include "aen/errors.hpp"

#include <httplib.h>
#include <json.hpp>

#include <stdexcept>
#include <thread>
#include <utility>

namespace aen {

namespace {

using nlohmann::json;

/// POST a JSON body and return the response body. Connection failures,
/// timeouts and 5xx responses count as transient and are retried with
/// doubling backoff; any other non-2xx status fails immediately.
std::string post_json(const std::string& endpoint, const std::string& path,
                      const std::string& body, const RemoteOptions& options) {
    httplib::Client client(endpoint);
    const auto seconds = options.timeout.count() / 1000;
    const auto microseconds = (options.timeout.count() % 1000) * 1000;
    client.set_connection_timeout(seconds, microseconds);
    client.set_read_timeout(seconds, microseconds);
    client.set_write_timeout(seconds, microseconds);

    std::string last_failure;
    auto backoff = options.backoff_base;
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        httplib::Result result = client.Post(path, body, "application/json");
        if (!result) {
            last_failure = "no response (" + httplib::to_string(result.error()) + ")";
            continue;
        }
        if (result->status >= 200 && result->status < 300) {
            return result->body;
        }
        if (result->status >= 500) {
            last_failure = "status " + std::to_string(result->status);
            continue;
        }
        throw transport_error("POST " + endpoint + path + " failed with status " +
                              std::to_string(result->status));
    }
    throw transport_error("POST " + endpoint + path + " failed after " +
                          std::to_string(options.max_retries + 1) + " attempts: " + last_failure);
}

json parse_response(const std::string& body, const std::string& what) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw format_error(what + ": response is not valid JSON: " + e.what());
    }
}

std::string substitute(std::string text, std::string_view key, const std::string& value) {
    for (std::size_t pos = text.find(key); pos != std::string::npos;
         pos = text.find(key, pos + value.size())) {
        text.replace(pos, key.size(), value);
    }
    return text;
}

std::string trim(const std::string& text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

} // namespace

std::vector<TokenEmbeddings> fetch_remote_embeddings(const std::string& endpoint,
                                                     const std::vector<std::string>& texts,
                                                     const RemoteOptions& options) {
    if (texts.empty()) {
        throw std::invalid_argument("fetch_remote_embeddings: empty text list");
    }
    const json request = {{"texts", texts}};
    const json response =
        parse_response(post_json(endpoint, "/embed", request.dump(), options), "embed");

    if (!response.is_object() || !response.contains("dim") || !response.contains("embeddings") ||
        !response.contains("masks")) {
        throw format_error("embed: response must carry dim, embeddings and masks");
    }
    if (!response["dim"].is_number_integer() || response["dim"].get<int>() <= 0) {
        throw format_error("embed: dim must be a positive integer");
    }
    const std::size_t dim = response["dim"].get<std::size_t>();
    const json& embeddings = response["embeddings"];
    const json& masks = response["masks"];
    if (!embeddings.is_array() || !masks.is_array() || embeddings.size() != texts.size() ||
        masks.size() != texts.size()) {
        throw format_error("embed: expected one matrix and one mask per input text");
    }

    std::vector<TokenEmbeddings> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const json& rows = embeddings[i];
        const json& mask = masks[i];
        if (!rows.is_array() || rows.empty()) {
            throw format_error("embed: empty token matrix for text " + std::to_string(i));
        }
        if (!mask.is_array() || mask.size() != rows.size()) {
            throw format_error("embed: mask length differs from token count for text " +
                               std::to_string(i));
        }
        TokenEmbeddings tokens;
        tokens.matrix = Matrix(rows.size(), dim);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (!rows[r].is_array() || rows[r].size() != dim) {
                throw format_error("embed: text " + std::to_string(i) + " row " +
                                   std::to_string(r) + " does not have dimension " +
                                   std::to_string(dim));
            }
            for (std::size_t c = 0; c < dim; ++c) {
                tokens.matrix(r, c) = rows[r][c].get<double>();
            }
        }
        tokens.mask.resize(mask.size());
        for (std::size_t r = 0; r < mask.size(); ++r) {
            const int bit = mask[r].get<int>();
            if (bit != 0 && bit != 1) {
                throw format_error("embed: mask values must be 0 or 1");
            }
            tokens.mask[r] = static_cast<std::uint8_t>(bit);
        }
        tokens.validate();
        out.push_back(std::move(tokens));
    }
    return out;
}

std::string generate_remote_text(const std::string& endpoint, const std::string& prompt,
                                 double temperature, double top_p,
                                 const RemoteOptions& options) {
    const json request = {{"prompt", prompt}, {"temperature", temperature}, {"top_p", top_p}};
    const json response =
        parse_response(post_json(endpoint, "/generate", request.dump(), options), "generate");
    if (!response.is_object() || !response.contains("text") || !response["text"].is_string()) {
        throw format_error("generate: response must carry a text string");
    }
    return response["text"].get<std::string>();
}

std::vector<LabeledPair> generate_remote_dataset(const RemoteGenerationSpec& spec) {
    if (spec.n_pairs == 0) {
        throw std::invalid_argument("generate_remote_dataset: n_pairs must be positive");
    }
    std::vector<LabeledPair> pairs;
    pairs.reserve(spec.n_pairs);
    for (std::size_t i = 0; i < spec.n_pairs; ++i) {
        LabeledPair pair;
        pair.source = "remote";
        pair.condition = generate_remote_text(spec.endpoint, spec.prompts.condition_prompt,
                                              kConditionTemperature, kConditionTopP, spec.options);
        const std::string statement_prompt =
            substitute(spec.prompts.statement_prompt, "{condition}", pair.condition);
        pair.statement = generate_remote_text(spec.endpoint, statement_prompt,
                                              kStatementTemperature, kStatementTopP, spec.options);
        if (trim(pair.condition).empty() || trim(pair.statement).empty()) {
            throw format_error("generate: service returned an empty statement or condition");
        }

        std::string label_prompt = substitute(spec.prompts.label_prompt, "{statement}",
                                              pair.statement);
        label_prompt = substitute(label_prompt, "{condition}", pair.condition);
        const std::string verdict = trim(generate_remote_text(
            spec.endpoint, label_prompt, kLabelTemperature, kLabelTopP, spec.options));
        if (verdict == "1") {
            pair.label = 1;
        } else if (verdict == "0") {
            pair.label = 0;
        } else {
            throw format_error("generate: label call returned \"" + verdict +
                               "\", expected 0 or 1");
        }
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

} // namespace aen
