#pragma once

#include "aen/analysis.hpp"
#include "aen/core.hpp"
#include "aen/data.hpp"
#include "aen/embeddings.hpp"
#include "aen/kde.hpp"
#include "aen/kernels.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace aen {

// ---------------------------------------------------------------------------
// Feature combination for the pooled-vector baseline head.
// ---------------------------------------------------------------------------

/// How two pooled sentence vectors are combined into one feature vector for
/// the concatenation baseline: (u,v), optionally extended with the
/// elementwise product and/or absolute difference.
enum class ConcatMode { UV, UV_AbsDiff, UV_Prod, UV_Prod_AbsDiff };

ConcatMode parse_concat_mode(std::string_view name);
std::string_view concat_mode_name(ConcatMode mode);

/// Output widths are 2N, 3N, 3N and 4N respectively. Throws
/// std::invalid_argument on a dimension mismatch.
Vector concat_features(const Vector& u, const Vector& v, ConcatMode mode);

// ---------------------------------------------------------------------------
// Classification head.
// ---------------------------------------------------------------------------

enum class HeadKind { Linear, MLP };

HeadKind parse_head_kind(std::string_view name);
std::string_view head_kind_name(HeadKind kind);

struct HeadConfig {
    HeadKind kind = HeadKind::Linear;
    std::vector<std::size_t> hidden_sizes; // nonempty iff kind == MLP
    std::size_t input_width = 0;
    bool use_log_density = false;  // feed log(d + 1e-12) instead of d
    double density_clamp = 1e6;    // densities clipped to [0, clamp]

    void validate() const;
};

constexpr double kLogDensityFloor = 1e-12;
constexpr double kLossProbabilityFloor = 1e-12;
constexpr double kBatchNormEpsilon = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

struct DenseLayer {
    Matrix weight; // out x in
    Vector bias;   // out
};

/// Per-feature batch normalization. Training mode normalizes with the
/// current batch's biased mean/variance and folds them into the running
/// statistics with momentum 0.1; eval mode uses the running statistics, so
/// eval outputs are independent of batch composition.
struct BatchNormLayer {
    Vector gamma, beta;
    Vector running_mean, running_var;
};

/// Dense stack: for MLP, hidden layers are dense -> batch-norm -> ReLU, then
/// a final dense to 2 logits; Linear is the final dense alone. Hidden dense
/// layers are He-initialized from the bundle seed; the final layer starts at
/// zero so an untrained head always outputs probabilities (0.5, 0.5).
struct Head {
    HeadConfig config;
    std::vector<DenseLayer> dense;     // hidden layers + final
    std::vector<BatchNormLayer> norms; // one per hidden layer

    void validate() const;
};

Head make_head(const HeadConfig& config, SplitMix64& rng);

/// Intermediate values retained by a training-mode head pass so the backward
/// pass can be replayed exactly.
struct HeadCache {
    Matrix input;                    // B x input_width
    std::vector<Matrix> dense_in;    // input to each dense layer
    std::vector<Matrix> preact;      // dense outputs
    std::vector<Matrix> normalized;  // batch-norm x-hat values
    std::vector<Vector> batch_inv_std;
    std::vector<Matrix> relu_out;
};

/// Forward one batch of feature rows through the head. In training mode the
/// running statistics are updated (unless update_running is false, which
/// finite differencing uses to keep loss evaluations side-effect free) and
/// `cache` (when non-null) is filled for head_backward. Returns B x 2 logits.
Matrix head_forward(Head& head, const Matrix& features, bool training, HeadCache* cache = nullptr,
                    bool update_running = true);

/// Eval-mode forward for a single feature vector.
Vector head_forward_single(const Head& head, const Vector& features);

struct HeadGradients {
    std::vector<Matrix> d_weight;
    std::vector<Vector> d_bias;
    std::vector<Vector> d_gamma;
    std::vector<Vector> d_beta;
};

/// Backpropagate d_logits (B x 2) through the cached training-mode pass.
/// Returns gradients and writes the feature gradient to d_features.
HeadGradients head_backward(const Head& head, const HeadCache& cache, const Matrix& d_logits,
                            Matrix& d_features);

// ---------------------------------------------------------------------------
// Loss.
// ---------------------------------------------------------------------------

/// Numerically stable two-class softmax.
Vector softmax2(const Vector& logits);

/// Cross entropy with the positive class up-weighted:
///   label 1 -> -w * log(p1),  label 0 -> -log(p0),
/// probabilities floored at 1e-12 inside the log. Throws
/// std::invalid_argument on an invalid probability vector or label.
double weighted_ce_loss(const Vector& probabilities, int label, double class_weight);

// ---------------------------------------------------------------------------
// Model bundle.
// ---------------------------------------------------------------------------

enum class KdeSide { Statement, Condition };
enum class OptimizerKind { SGD, Adam };

KdeSide parse_kde_side(std::string_view name);
std::string_view kde_side_name(KdeSide side);
OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view optimizer_kind_name(OptimizerKind kind);

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

/// Everything needed to score a (statement, condition) pair: two encoders
/// (trainable toy tables, or external markers when embeddings arrive
/// pre-computed), the density configuration, and the head.
struct ModelBundle {
    bool statement_encoder_is_toy = true;
    bool condition_encoder_is_toy = true;
    ToyEncoder statement_encoder;
    ToyEncoder condition_encoder;
    KernelKind kernel = KernelKind::Gaussian;
    BandwidthRule bandwidth_rule = BandwidthRule::Scott;
    double fixed_bandwidth = 0.0; // consulted only when rule is Fixed
    KdeSide kde_side = KdeSide::Statement;
    Head head;
    double class_weight = 1.0;
    std::uint64_t seed = 0;
    std::uint64_t epochs_trained = 0; // advances the shuffle stream

    std::size_t embedding_dim() const { return head.config.input_width; }
    void validate() const;
};

/// Defaults are tuned so the out-of-the-box recipe trains on the toy
/// benchmark: raw densities carry a large shared positive baseline, and only
/// the batch-norm layers of an MLP head can re-center it within a small
/// learning-rate budget — a Linear head would spend its entire budget
/// chasing the offset. Linear stays available for hand-built fixtures.
struct BundleSpec {
    std::uint32_t vocab_size = 4096;
    std::uint32_t embedding_dim = 128;
    KernelKind kernel = KernelKind::Gaussian;
    BandwidthRule bandwidth_rule = BandwidthRule::Scott;
    double fixed_bandwidth = 0.0;
    KdeSide kde_side = KdeSide::Statement;
    HeadKind head_kind = HeadKind::MLP;
    std::vector<std::size_t> hidden_sizes = {16}; // MLP only
    bool use_log_density = false;
    double density_clamp = 1e6;
    double class_weight = 1.0;
    std::uint64_t seed = 0;
    bool toy_encoders = true;
};

ModelBundle make_bundle(const BundleSpec& spec);

/// Optional external encoders. When a hook is set it replaces the bundle's
/// own encoder for that side (head-only training: no source_rows, so no
/// gradient reaches an encoder table).
struct EncoderHooks {
    std::function<TokenEmbeddings(const std::string&)> statement;
    std::function<TokenEmbeddings(const std::string&)> condition;
};

/// Encode one side. Conditions are passed through preprocess_condition
/// first, so raw "When someone ..." text can be fed anywhere. Throws
/// std::invalid_argument when the bundle has no toy encoder for the side and
/// no hook is supplied.
TokenEmbeddings encode_statement(const ModelBundle& bundle, const std::string& text,
                                 const EncoderHooks& hooks = {});
TokenEmbeddings encode_condition(const ModelBundle& bundle, const std::string& text,
                                 const EncoderHooks& hooks = {});

// ---------------------------------------------------------------------------
// Forward pass.
// ---------------------------------------------------------------------------

/// Intermediates of one pair's density path, kept for tests, diagnostics and
/// the backward pass.
struct ForwardTrace {
    DimKDE kde;
    Vector query;     // pooled vector of the non-KDE side
    Vector densities; // raw density values
    Vector features;  // after clamp and optional log transform
    Vector logits;
};

struct ForwardOptions {
    /// Pin per-dimension bandwidths instead of re-estimating them from the
    /// (possibly perturbed) tokens. Used by finite differencing, where the
    /// density gradients deliberately treat bandwidths as constants.
    const Vector* bandwidth_override = nullptr;
};

/// Map raw densities to head inputs: clamp to [0, density_clamp], then
/// optionally log(d + 1e-12).
Vector density_features(const HeadConfig& config, const Vector& densities);

/// Eval-mode scoring of one encoded pair: densities from the kde_side
/// tokens, query from mean-pooling the other side, head in eval mode,
/// softmax. Returns the two class probabilities; fills `trace` when given.
Vector aen_forward(const ModelBundle& bundle, const TokenEmbeddings& statement,
                   const TokenEmbeddings& condition, ForwardTrace* trace = nullptr,
                   const ForwardOptions& options = {});

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 1e-5;
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double class_weight = 1.0;

    void validate() const;
};

/// Flattened views over every trainable tensor of a bundle, in a fixed
/// documented order: statement table, condition table (toy encoders only),
/// then per dense layer weight and bias, then per batch-norm layer gamma and
/// beta. Running statistics are not trainable.
struct ParameterRefs {
    std::vector<std::span<double>> tensors;
    std::vector<std::string> names;

    std::size_t total_size() const;
};

ParameterRefs trainable_parameters(ModelBundle& bundle);

/// Gradient buffers matching trainable_parameters order.
struct Gradients {
    std::vector<Vector> tensors;

    void accumulate_scaled(const Gradients& other, double scale);
};

Gradients make_zero_gradients(const ModelBundle& bundle);

/// Adam first/second moments (one pair of buffers per tensor) plus the
/// shared step counter. SGD ignores everything but the step count. State is
/// transient per training run and never serialized.
struct OptimizerState {
    std::uint64_t step = 0;
    std::vector<Vector> m;
    std::vector<Vector> v;
};

struct EpochStats {
    double mean_loss = 0.0;
    MetricsReport metrics; // confusion metrics over the training pass
};

/// One full pass over `pairs` in a Fisher-Yates order seeded by
/// bundle.seed + bundle.epochs_trained, consuming batches of
/// config.batch_size. Batch-norm runs in training mode; gradients flow
/// through the head, the clamp/log transform, the density evaluations, mean
/// pooling, and into toy encoder tables. Increments bundle.epochs_trained.
/// Throws std::runtime_error naming the batch index if a loss or gradient
/// goes non-finite.
EpochStats train_epoch(ModelBundle& bundle, const std::vector<LabeledPair>& pairs,
                       const TrainConfig& config, OptimizerState& optimizer,
                       const EncoderHooks& hooks = {});

/// Runs config.epochs epochs with one optimizer state; returns per-epoch
/// stats in order.
std::vector<EpochStats> train_model(ModelBundle& bundle, const std::vector<LabeledPair>& pairs,
                                    const TrainConfig& config, const EncoderHooks& hooks = {});

/// Eval-mode scoring of a labeled dataset: predict positive when the match
/// probability reaches 0.5, compute confusion metrics plus the mean weighted
/// cross entropy under bundle.class_weight.
MetricsReport evaluate_model(const ModelBundle& bundle, const std::vector<LabeledPair>& pairs,
                             const EncoderHooks& hooks = {});

/// Compare every analytic parameter gradient of the mean batch loss against
/// central finite differences of the same loss. The loss used here pins each
/// pair's bandwidths at their unperturbed values, matching the density
/// gradients' constant-bandwidth convention; without that the finite
/// differences would measure bandwidth re-adaptation the analytic side
/// deliberately omits. Encoder-table rows untouched by the batch are skipped
/// (their gradients are structurally zero). Returns the maximum relative
/// error, falling back to absolute error when both sides are below 1e-8.
/// When per_tensor_max is given it receives the per-tensor maxima in
/// trainable_parameters order. Requires batch size <= 8 and epsilon in
/// [1e-7, 1e-4].
double gradient_check(ModelBundle& bundle, const std::vector<LabeledPair>& batch, double epsilon,
                      const EncoderHooks& hooks = {},
                      std::vector<double>* per_tensor_max = nullptr);

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

// Bundle file layout: magic "AENM", version u16 LE = 1, u32 LE byte length
// of a JSON config block, the block itself, then every parameter tensor in
// declaration order (encoder tables, dense weights/biases, batch-norm
// gamma/beta/running mean/running var) as: dim-count u8, dims u32 LE, data
// as 32-bit LE floats.
void write_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle read_bundle(const std::filesystem::path& path);
void write_bundle_stream(std::ostream& out, const ModelBundle& bundle);
ModelBundle read_bundle_stream(std::istream& in);

/// 64-bit content hash of the serialized bundle, used to pair caches with
/// the exact model that produced them.
std::uint64_t bundle_fingerprint(const ModelBundle& bundle);

} // namespace aen
