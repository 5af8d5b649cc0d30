#pragma once

#include "aen/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace aen {

/// Where token embeddings come from when a command needs an encoder:
///   "toy"         the bundle's own trainable hashed-table encoders
///   "file:<dir>"  one AENE file per text, named <fnv1a64-hex-of-text>.aene
///   "http(s)://"  a remote embedding service speaking the /embed protocol
struct EmbeddingSource {
    enum class Kind { Toy, File, Remote };
    Kind kind = Kind::Toy;
    std::string location; // directory for File, endpoint URL for Remote

    /// Throws std::invalid_argument on anything else, naming the three forms.
    static EmbeddingSource parse(const std::string& text);
    std::string spelling() const;
};

/// One reproducible run's worth of knobs, shared by every subcommand that
/// builds or trains a model. Values layer in precedence order: built-in
/// defaults, then a --config JSON file (same keys, lowercase snake case),
/// then explicit command-line flags.
struct RunConfig {
    std::string kernel = "gaussian";        // gaussian | epanechnikov | triangular
    std::string bandwidth_rule = "scott";   // scott | silverman | fixed
    double fixed_bandwidth = 0.0;           // required > 0 only for "fixed"
    std::string head = "mlp";               // linear | mlp
    std::vector<std::size_t> hidden_sizes = {16}; // consulted only for mlp
    std::string kde_side = "statement";     // statement | condition
    double learning_rate = 1e-5;
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    std::string optimizer = "adam";         // sgd | adam
    double class_weight = 1.0;
    bool use_log_density = false;
    std::uint64_t seed = 0;
    std::uint32_t embedding_dim = 128;      // must match external embeddings
    std::uint32_t vocab_size = 4096;        // toy encoders only
    std::string embeddings = "toy";         // see EmbeddingSource

    /// Parses every enum-like field and checks the numeric ranges, so a bad
    /// value is rejected before any file is touched. Throws
    /// std::invalid_argument with the offending field in the message.
    void validate() const;

    BundleSpec bundle_spec() const;
    TrainConfig train_config() const;
    EmbeddingSource embedding_source() const;
};

/// Entry point behind the `aen` binary, callable in-process by tests.
/// `args` is the command line without the program name. Subcommands:
///   gen-toy     write a deterministic synthetic dataset as JSONL
///   train       fit a model on a JSONL dataset; writes bundle + metrics
///   eval        score a trained bundle on a JSONL dataset
///   ks          per-dimension two-sample KS study over embeddings
///   cache       precompute pooled condition vectors for monitoring
///   monitor     stream statements from `input`, emit match events as JSONL
///   flops       forward-pass cost model with published reference ratios
///   grad-check  analytic vs finite-difference gradients on a fresh model
/// Every subcommand writes a run manifest (config echo + input/output
/// hashes, no timestamps) so a run can be reproduced byte-for-byte.
/// Returns 0 on success; on failure, prints one JSON object
/// {"error": kind, "message": text} to `error` and returns 1.
int run_command(const std::vector<std::string>& args, std::istream& input, std::ostream& output,
                std::ostream& error);

} // namespace aen
