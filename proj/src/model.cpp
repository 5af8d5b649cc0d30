#include "aen/model.hpp"

#include "aen/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace aen {

// ---------------------------------------------------------------------------
// Feature concatenation.
// ---------------------------------------------------------------------------

ConcatMode parse_concat_mode(std::string_view name) {
    if (name == "uv") return ConcatMode::UV;
    if (name == "uv-absdiff") return ConcatMode::UV_AbsDiff;
    if (name == "uv-prod") return ConcatMode::UV_Prod;
    if (name == "uv-prod-absdiff") return ConcatMode::UV_Prod_AbsDiff;
    throw std::invalid_argument("unknown concat mode: " + std::string(name));
}

std::string_view concat_mode_name(ConcatMode mode) {
    switch (mode) {
    case ConcatMode::UV: return "uv";
    case ConcatMode::UV_AbsDiff: return "uv-absdiff";
    case ConcatMode::UV_Prod: return "uv-prod";
    case ConcatMode::UV_Prod_AbsDiff: return "uv-prod-absdiff";
    }
    throw std::invalid_argument("unknown concat mode value");
}

Vector concat_features(const Vector& u, const Vector& v, ConcatMode mode) {
    if (u.size() != v.size()) {
        throw std::invalid_argument("concat_features: dimension mismatch");
    }
    const std::size_t n = u.size();
    Vector out;
    const bool with_prod = mode == ConcatMode::UV_Prod || mode == ConcatMode::UV_Prod_AbsDiff;
    const bool with_absdiff =
        mode == ConcatMode::UV_AbsDiff || mode == ConcatMode::UV_Prod_AbsDiff;
    out.reserve(n * (2 + (with_prod ? 1 : 0) + (with_absdiff ? 1 : 0)));
    out.insert(out.end(), u.begin(), u.end());
    out.insert(out.end(), v.begin(), v.end());
    if (with_prod) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(u[i] * v[i]);
    }
    if (with_absdiff) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(std::abs(u[i] - v[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Head structure.
// ---------------------------------------------------------------------------

HeadKind parse_head_kind(std::string_view name) {
    if (name == "linear") return HeadKind::Linear;
    if (name == "mlp") return HeadKind::MLP;
    throw std::invalid_argument("unknown head kind: " + std::string(name));
}

std::string_view head_kind_name(HeadKind kind) {
    return kind == HeadKind::Linear ? "linear" : "mlp";
}

void HeadConfig::validate() const {
    if (input_width == 0) {
        throw std::invalid_argument("head config: input_width must be positive");
    }
    if (kind == HeadKind::MLP && hidden_sizes.empty()) {
        throw std::invalid_argument("head config: MLP requires at least one hidden layer");
    }
    if (kind == HeadKind::Linear && !hidden_sizes.empty()) {
        throw std::invalid_argument("head config: Linear head cannot have hidden layers");
    }
    for (auto h : hidden_sizes) {
        if (h == 0) throw std::invalid_argument("head config: zero hidden width");
    }
    if (!(density_clamp > 0.0)) {
        throw std::invalid_argument("head config: density_clamp must be positive");
    }
}

void Head::validate() const {
    config.validate();
    const std::size_t hidden = config.hidden_sizes.size();
    if (dense.size() != hidden + 1 || norms.size() != hidden) {
        throw std::invalid_argument("head: layer count does not match config");
    }
    std::size_t in = config.input_width;
    for (std::size_t i = 0; i < dense.size(); ++i) {
        const std::size_t out = i < hidden ? config.hidden_sizes[i] : 2;
        if (dense[i].weight.rows != out || dense[i].weight.cols != in ||
            dense[i].bias.size() != out) {
            throw std::invalid_argument("head: dense layer " + std::to_string(i) +
                                        " has inconsistent shape");
        }
        if (!dense[i].weight.all_finite() || !all_finite(dense[i].bias)) {
            throw std::invalid_argument("head: non-finite dense parameter");
        }
        if (i < hidden) {
            const auto& bn = norms[i];
            if (bn.gamma.size() != out || bn.beta.size() != out ||
                bn.running_mean.size() != out || bn.running_var.size() != out) {
                throw std::invalid_argument("head: batch-norm layer " + std::to_string(i) +
                                            " has inconsistent shape");
            }
            if (!all_finite(bn.gamma) || !all_finite(bn.beta) || !all_finite(bn.running_mean) ||
                !all_finite(bn.running_var)) {
                throw std::invalid_argument("head: non-finite batch-norm parameter");
            }
        }
        in = out;
    }
}

Head make_head(const HeadConfig& config, SplitMix64& rng) {
    config.validate();
    Head head;
    head.config = config;
    std::size_t in = config.input_width;
    for (std::size_t i = 0; i < config.hidden_sizes.size(); ++i) {
        const std::size_t out = config.hidden_sizes[i];
        DenseLayer layer;
        layer.weight = Matrix(out, in);
        const double scale = std::sqrt(2.0 / static_cast<double>(in));
        for (auto& w : layer.weight.data) w = scale * rng.next_normal();
        layer.bias.assign(out, 0.0);
        head.dense.push_back(std::move(layer));

        BatchNormLayer bn;
        bn.gamma.assign(out, 1.0);
        bn.beta.assign(out, 0.0);
        bn.running_mean.assign(out, 0.0);
        bn.running_var.assign(out, 1.0);
        head.norms.push_back(std::move(bn));
        in = out;
    }
    // Final projection starts at zero so a fresh head is exactly undecided.
    DenseLayer final_layer;
    final_layer.weight = Matrix(2, in);
    final_layer.bias.assign(2, 0.0);
    head.dense.push_back(std::move(final_layer));
    head.validate();
    return head;
}

// ---------------------------------------------------------------------------
// Head forward / backward.
// ---------------------------------------------------------------------------

namespace {

Matrix affine_forward(const Matrix& x, const DenseLayer& layer) {
    Matrix z(x.rows, layer.weight.rows);
    for (std::size_t b = 0; b < x.rows; ++b) {
        const auto xrow = x.row(b);
        auto zrow = z.row(b);
        for (std::size_t o = 0; o < layer.weight.rows; ++o) {
            double acc = layer.bias[o];
            const auto wrow = layer.weight.row(o);
            for (std::size_t i = 0; i < wrow.size(); ++i) acc += wrow[i] * xrow[i];
            zrow[o] = acc;
        }
    }
    return z;
}

} // namespace

Matrix head_forward(Head& head, const Matrix& features, bool training, HeadCache* cache,
                    bool update_running) {
    if (features.cols != head.config.input_width) {
        throw std::invalid_argument("head_forward: feature width " +
                                    std::to_string(features.cols) + " does not match head input " +
                                    std::to_string(head.config.input_width));
    }
    if (features.rows == 0) {
        throw std::invalid_argument("head_forward: empty batch");
    }
    if (cache) {
        *cache = HeadCache{};
        cache->input = features;
    }
    const std::size_t hidden = head.norms.size();
    Matrix x = features;
    for (std::size_t i = 0; i < hidden; ++i) {
        Matrix z = affine_forward(x, head.dense[i]);
        if (cache) {
            cache->dense_in.push_back(std::move(x));
            cache->preact.push_back(z);
        }
        auto& bn = head.norms[i];
        const std::size_t width = z.cols;
        const auto batch = static_cast<double>(z.rows);
        Matrix xhat(z.rows, width);
        Vector inv_std(width);
        if (training) {
            for (std::size_t j = 0; j < width; ++j) {
                double mean = 0.0;
                for (std::size_t b = 0; b < z.rows; ++b) mean += z(b, j);
                mean /= batch;
                double var = 0.0;
                for (std::size_t b = 0; b < z.rows; ++b) {
                    const double d = z(b, j) - mean;
                    var += d * d;
                }
                var /= batch; // biased variance, matching the backward pass
                inv_std[j] = 1.0 / std::sqrt(var + kBatchNormEpsilon);
                for (std::size_t b = 0; b < z.rows; ++b) {
                    xhat(b, j) = (z(b, j) - mean) * inv_std[j];
                }
                if (update_running) {
                    bn.running_mean[j] =
                        (1.0 - kBatchNormMomentum) * bn.running_mean[j] + kBatchNormMomentum * mean;
                    bn.running_var[j] =
                        (1.0 - kBatchNormMomentum) * bn.running_var[j] + kBatchNormMomentum * var;
                }
            }
        } else {
            for (std::size_t j = 0; j < width; ++j) {
                inv_std[j] = 1.0 / std::sqrt(bn.running_var[j] + kBatchNormEpsilon);
                for (std::size_t b = 0; b < z.rows; ++b) {
                    xhat(b, j) = (z(b, j) - bn.running_mean[j]) * inv_std[j];
                }
            }
        }
        Matrix out(z.rows, width);
        for (std::size_t b = 0; b < z.rows; ++b) {
            for (std::size_t j = 0; j < width; ++j) {
                const double y = bn.gamma[j] * xhat(b, j) + bn.beta[j];
                out(b, j) = y > 0.0 ? y : 0.0;
            }
        }
        if (cache) {
            cache->normalized.push_back(std::move(xhat));
            cache->batch_inv_std.push_back(std::move(inv_std));
            cache->relu_out.push_back(out);
        }
        x = std::move(out);
    }
    Matrix logits = affine_forward(x, head.dense.back());
    if (cache) {
        cache->dense_in.push_back(std::move(x));
        cache->preact.push_back(logits);
    }
    return logits;
}

Vector head_forward_single(const Head& head, const Vector& features) {
    Matrix f(1, features.size());
    std::copy(features.begin(), features.end(), f.data.begin());
    // Eval mode never mutates the head; the const_cast is confined here.
    Matrix logits = head_forward(const_cast<Head&>(head), f, /*training=*/false, nullptr,
                                 /*update_running=*/false);
    return Vector(logits.data.begin(), logits.data.end());
}

HeadGradients head_backward(const Head& head, const HeadCache& cache, const Matrix& d_logits,
                            Matrix& d_features) {
    const std::size_t hidden = head.norms.size();
    if (cache.dense_in.size() != hidden + 1 || cache.relu_out.size() != hidden) {
        throw std::invalid_argument("head_backward: cache does not match head layout");
    }
    HeadGradients grads;
    grads.d_weight.resize(head.dense.size());
    grads.d_bias.resize(head.dense.size());
    grads.d_gamma.resize(hidden);
    grads.d_beta.resize(hidden);

    // Final dense layer.
    const auto backward_dense = [&](std::size_t layer_idx, const Matrix& upstream) {
        const DenseLayer& layer = head.dense[layer_idx];
        const Matrix& x = cache.dense_in[layer_idx];
        Matrix dw(layer.weight.rows, layer.weight.cols);
        Vector db(layer.bias.size(), 0.0);
        for (std::size_t b = 0; b < upstream.rows; ++b) {
            for (std::size_t o = 0; o < layer.weight.rows; ++o) {
                const double g = upstream(b, o);
                db[o] += g;
                for (std::size_t i = 0; i < layer.weight.cols; ++i) {
                    dw(o, i) += g * x(b, i);
                }
            }
        }
        Matrix dx(upstream.rows, layer.weight.cols);
        for (std::size_t b = 0; b < upstream.rows; ++b) {
            for (std::size_t i = 0; i < layer.weight.cols; ++i) {
                double acc = 0.0;
                for (std::size_t o = 0; o < layer.weight.rows; ++o) {
                    acc += upstream(b, o) * layer.weight(o, i);
                }
                dx(b, i) = acc;
            }
        }
        grads.d_weight[layer_idx] = std::move(dw);
        grads.d_bias[layer_idx] = std::move(db);
        return dx;
    };

    Matrix dx = backward_dense(hidden, d_logits);

    for (std::size_t li = hidden; li-- > 0;) {
        const auto& bn = head.norms[li];
        const Matrix& relu = cache.relu_out[li];
        const Matrix& xhat = cache.normalized[li];
        const Vector& inv_std = cache.batch_inv_std[li];
        const std::size_t width = relu.cols;
        const auto batch = static_cast<double>(relu.rows);

        // Through ReLU: zero where the activation was clipped.
        Matrix dy(relu.rows, width);
        for (std::size_t b = 0; b < relu.rows; ++b) {
            for (std::size_t j = 0; j < width; ++j) {
                dy(b, j) = relu(b, j) > 0.0 ? dx(b, j) : 0.0;
            }
        }

        // Through batch norm (biased batch variance):
        //   dz = inv_std * gamma * (dy - mean_b(dy) - xhat * mean_b(dy*xhat))
        Vector dgamma(width, 0.0), dbeta(width, 0.0);
        Matrix dz(relu.rows, width);
        for (std::size_t j = 0; j < width; ++j) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t b = 0; b < relu.rows; ++b) {
                sum_dy += dy(b, j);
                sum_dy_xhat += dy(b, j) * xhat(b, j);
            }
            dgamma[j] = sum_dy_xhat;
            dbeta[j] = sum_dy;
            const double mean_dy = sum_dy / batch;
            const double mean_dy_xhat = sum_dy_xhat / batch;
            const double scale = bn.gamma[j] * inv_std[j];
            for (std::size_t b = 0; b < relu.rows; ++b) {
                dz(b, j) = scale * (dy(b, j) - mean_dy - xhat(b, j) * mean_dy_xhat);
            }
        }
        grads.d_gamma[li] = std::move(dgamma);
        grads.d_beta[li] = std::move(dbeta);

        dx = backward_dense(li, dz);
    }
    d_features = std::move(dx);
    return grads;
}

// ---------------------------------------------------------------------------
// Loss.
// ---------------------------------------------------------------------------

Vector softmax2(const Vector& logits) {
    if (logits.size() != 2) {
        throw std::invalid_argument("softmax2: expected 2 logits");
    }
    const double top = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - top);
    const double e1 = std::exp(logits[1] - top);
    const double z = e0 + e1;
    return {e0 / z, e1 / z};
}

double weighted_ce_loss(const Vector& probabilities, int label, double class_weight) {
    if (probabilities.size() != 2) {
        throw std::invalid_argument("weighted_ce_loss: expected 2 probabilities");
    }
    const double p0 = probabilities[0];
    const double p1 = probabilities[1];
    if (!(p0 >= 0.0) || !(p1 >= 0.0) || std::abs(p0 + p1 - 1.0) > 1e-6) {
        throw std::invalid_argument("weighted_ce_loss: invalid probability vector");
    }
    if (label != 0 && label != 1) {
        throw std::invalid_argument("weighted_ce_loss: label must be 0 or 1");
    }
    if (!(class_weight > 0.0)) {
        throw std::invalid_argument("weighted_ce_loss: class_weight must be positive");
    }
    if (label == 1) {
        return -class_weight * std::log(std::max(p1, kLossProbabilityFloor));
    }
    return -std::log(std::max(p0, kLossProbabilityFloor));
}

// ---------------------------------------------------------------------------
// Bundle.
// ---------------------------------------------------------------------------

KdeSide parse_kde_side(std::string_view name) {
    if (name == "statement") return KdeSide::Statement;
    if (name == "condition") return KdeSide::Condition;
    throw std::invalid_argument("unknown kde side: " + std::string(name));
}

std::string_view kde_side_name(KdeSide side) {
    return side == KdeSide::Statement ? "statement" : "condition";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
    if (name == "sgd") return OptimizerKind::SGD;
    if (name == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer: " + std::string(name));
}

std::string_view optimizer_kind_name(OptimizerKind kind) {
    return kind == OptimizerKind::SGD ? "sgd" : "adam";
}

void ModelBundle::validate() const {
    head.validate();
    if (!(class_weight > 0.0)) {
        throw std::invalid_argument("bundle: class_weight must be positive");
    }
    if (bandwidth_rule == BandwidthRule::Fixed && !(fixed_bandwidth > 0.0)) {
        throw std::invalid_argument("bundle: fixed bandwidth rule requires a positive bandwidth");
    }
    if (statement_encoder_is_toy && statement_encoder.dim != head.config.input_width) {
        throw std::invalid_argument("bundle: statement encoder dim does not match head input");
    }
    if (condition_encoder_is_toy && condition_encoder.dim != head.config.input_width) {
        throw std::invalid_argument("bundle: condition encoder dim does not match head input");
    }
}

ModelBundle make_bundle(const BundleSpec& spec) {
    ModelBundle bundle;
    SplitMix64 rng(spec.seed);
    if (spec.toy_encoders) {
        // Both sides start from one shared table — the toy analog of two
        // encoder copies initialized from the same pretrained model — and
        // diverge as training updates each side separately. Independent
        // tables would embed the same word differently per side, leaving no
        // initial geometric signal for training to amplify.
        const std::uint64_t table_seed = rng.next();
        bundle.statement_encoder = ToyEncoder::make(spec.vocab_size, spec.embedding_dim, table_seed);
        bundle.condition_encoder = ToyEncoder::make(spec.vocab_size, spec.embedding_dim, table_seed);
    } else {
        bundle.statement_encoder_is_toy = false;
        bundle.condition_encoder_is_toy = false;
        rng.next();
    }
    bundle.kernel = spec.kernel;
    bundle.bandwidth_rule = spec.bandwidth_rule;
    bundle.fixed_bandwidth = spec.fixed_bandwidth;
    bundle.kde_side = spec.kde_side;
    bundle.class_weight = spec.class_weight;
    bundle.seed = spec.seed;

    HeadConfig config;
    config.kind = spec.head_kind;
    config.hidden_sizes = spec.hidden_sizes;
    config.input_width = spec.embedding_dim;
    config.use_log_density = spec.use_log_density;
    config.density_clamp = spec.density_clamp;
    bundle.head = make_head(config, rng);
    bundle.validate();
    return bundle;
}

TokenEmbeddings encode_statement(const ModelBundle& bundle, const std::string& text,
                                 const EncoderHooks& hooks) {
    if (hooks.statement) return hooks.statement(text);
    if (!bundle.statement_encoder_is_toy) {
        throw std::invalid_argument(
            "encode_statement: bundle uses external statement embeddings; supply an encoder hook");
    }
    return toy_encode(bundle.statement_encoder, text);
}

TokenEmbeddings encode_condition(const ModelBundle& bundle, const std::string& text,
                                 const EncoderHooks& hooks) {
    const std::string stripped = preprocess_condition(text);
    if (hooks.condition) return hooks.condition(stripped);
    if (!bundle.condition_encoder_is_toy) {
        throw std::invalid_argument(
            "encode_condition: bundle uses external condition embeddings; supply an encoder hook");
    }
    return toy_encode(bundle.condition_encoder, stripped);
}

// ---------------------------------------------------------------------------
// Forward pass.
// ---------------------------------------------------------------------------

Vector density_features(const HeadConfig& config, const Vector& densities) {
    Vector features(densities.size());
    for (std::size_t j = 0; j < densities.size(); ++j) {
        const double clamped = std::clamp(densities[j], 0.0, config.density_clamp);
        features[j] = config.use_log_density ? std::log(clamped + kLogDensityFloor) : clamped;
    }
    return features;
}

Vector aen_forward(const ModelBundle& bundle, const TokenEmbeddings& statement,
                   const TokenEmbeddings& condition, ForwardTrace* trace,
                   const ForwardOptions& options) {
    bundle.validate();
    statement.validate();
    condition.validate();
    if (statement.dim() != condition.dim()) {
        throw std::invalid_argument("aen_forward: statement/condition dimension mismatch");
    }
    if (statement.dim() != bundle.head.config.input_width) {
        throw std::invalid_argument("aen_forward: embedding dimension does not match head input");
    }
    const TokenEmbeddings& kde_tokens =
        bundle.kde_side == KdeSide::Statement ? statement : condition;
    const TokenEmbeddings& query_tokens =
        bundle.kde_side == KdeSide::Statement ? condition : statement;

    DimKDE kde = options.bandwidth_override
                     ? build_kde_with_bandwidths(kde_tokens, bundle.kernel,
                                                 *options.bandwidth_override)
                     : build_kde(kde_tokens, bundle.kernel, bundle.bandwidth_rule,
                                 bundle.fixed_bandwidth);
    Vector query = mean_pool(query_tokens);
    Vector densities = eval_density(kde, query);
    Vector features = density_features(bundle.head.config, densities);
    Vector logits = head_forward_single(bundle.head, features);
    Vector probabilities = softmax2(logits);
    if (trace) {
        trace->kde = std::move(kde);
        trace->query = std::move(query);
        trace->densities = std::move(densities);
        trace->features = std::move(features);
        trace->logits = logits;
    }
    return probabilities;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

namespace {

constexpr char kBundleMagic[4] = {'A', 'E', 'N', 'M'};
constexpr std::uint16_t kBundleVersion = 1;

using nlohmann::ordered_json;

void write_tensor(std::ostream& out, std::initializer_list<std::uint32_t> dims,
                  std::span<const double> data) {
    io::write_u8(out, static_cast<std::uint8_t>(dims.size()));
    std::size_t expected = 1;
    for (auto d : dims) {
        io::write_u32(out, d);
        expected *= d;
    }
    if (expected != data.size()) {
        throw format_error("bundle write: tensor size does not match its dims");
    }
    for (double v : data) io::write_f32(out, static_cast<float>(v));
}

std::vector<double> read_tensor(std::istream& in, std::initializer_list<std::uint32_t> dims) {
    const std::uint8_t ndims = io::read_u8(in);
    if (ndims != dims.size()) {
        throw format_error("bundle read: unexpected tensor rank");
    }
    std::size_t expected = 1;
    for (auto d : dims) {
        const std::uint32_t got = io::read_u32(in);
        if (got != d) {
            throw format_error("bundle read: tensor dims do not match the config block");
        }
        expected *= d;
    }
    std::vector<double> data(expected);
    for (auto& v : data) v = static_cast<double>(io::read_f32(in));
    return data;
}

ordered_json encoder_to_json(bool is_toy, const ToyEncoder& enc, std::size_t dim) {
    ordered_json j;
    if (is_toy) {
        j["type"] = "toy";
        j["vocab_size"] = enc.vocab_size;
        j["dim"] = enc.dim;
        j["seed"] = enc.seed;
    } else {
        j["type"] = "external";
        j["dim"] = dim;
    }
    return j;
}

} // namespace

void write_bundle_stream(std::ostream& out, const ModelBundle& bundle) {
    bundle.validate();
    ordered_json config;
    config["statement_encoder"] = encoder_to_json(bundle.statement_encoder_is_toy,
                                                  bundle.statement_encoder,
                                                  bundle.head.config.input_width);
    config["condition_encoder"] = encoder_to_json(bundle.condition_encoder_is_toy,
                                                  bundle.condition_encoder,
                                                  bundle.head.config.input_width);
    config["kernel"] = std::string(kernel_kind_name(bundle.kernel));
    config["bandwidth_rule"] = std::string(bandwidth_rule_name(bundle.bandwidth_rule));
    config["fixed_bandwidth"] = bundle.fixed_bandwidth;
    config["kde_side"] = std::string(kde_side_name(bundle.kde_side));
    ordered_json head;
    head["kind"] = head_kind_name(bundle.head.config.kind);
    head["hidden_sizes"] = bundle.head.config.hidden_sizes;
    head["input_width"] = bundle.head.config.input_width;
    head["use_log_density"] = bundle.head.config.use_log_density;
    head["density_clamp"] = bundle.head.config.density_clamp;
    config["head"] = head;
    config["class_weight"] = bundle.class_weight;
    config["seed"] = bundle.seed;
    config["epochs_trained"] = bundle.epochs_trained;

    out.write(kBundleMagic, 4);
    io::write_u16(out, kBundleVersion);
    const std::string config_bytes = config.dump();
    io::write_u32(out, static_cast<std::uint32_t>(config_bytes.size()));
    io::write_bytes(out, config_bytes.data(), config_bytes.size());

    if (bundle.statement_encoder_is_toy) {
        write_tensor(out, {bundle.statement_encoder.vocab_size, bundle.statement_encoder.dim},
                     bundle.statement_encoder.table.data);
    }
    if (bundle.condition_encoder_is_toy) {
        write_tensor(out, {bundle.condition_encoder.vocab_size, bundle.condition_encoder.dim},
                     bundle.condition_encoder.table.data);
    }
    for (const auto& layer : bundle.head.dense) {
        write_tensor(out,
                     {static_cast<std::uint32_t>(layer.weight.rows),
                      static_cast<std::uint32_t>(layer.weight.cols)},
                     layer.weight.data);
        write_tensor(out, {static_cast<std::uint32_t>(layer.bias.size())}, layer.bias);
    }
    for (const auto& bn : bundle.head.norms) {
        write_tensor(out, {static_cast<std::uint32_t>(bn.gamma.size())}, bn.gamma);
        write_tensor(out, {static_cast<std::uint32_t>(bn.beta.size())}, bn.beta);
        write_tensor(out, {static_cast<std::uint32_t>(bn.running_mean.size())}, bn.running_mean);
        write_tensor(out, {static_cast<std::uint32_t>(bn.running_var.size())}, bn.running_var);
    }
    if (!out) {
        throw format_error("bundle write failed");
    }
}

ModelBundle read_bundle_stream(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kBundleMagic, 4) != 0) {
        throw format_error("bundle file: bad magic");
    }
    const std::uint16_t version = io::read_u16(in);
    if (version != kBundleVersion) {
        throw format_error("bundle file: unsupported version " + std::to_string(version));
    }
    const std::uint32_t config_len = io::read_u32(in);
    std::string config_bytes(config_len, '\0');
    io::read_bytes(in, config_bytes.data(), config_bytes.size());
    ordered_json config;
    try {
        config = ordered_json::parse(config_bytes);
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error(std::string("bundle file: config block is not valid JSON: ") + e.what());
    }

    ModelBundle bundle;
    try {
        const auto& se = config.at("statement_encoder");
        const auto& ce = config.at("condition_encoder");
        bundle.kernel = parse_kernel_kind(config.at("kernel").get<std::string>());
        bundle.bandwidth_rule =
            parse_bandwidth_rule(config.at("bandwidth_rule").get<std::string>());
        bundle.fixed_bandwidth = config.at("fixed_bandwidth").get<double>();
        bundle.kde_side = parse_kde_side(config.at("kde_side").get<std::string>());
        const auto& head = config.at("head");
        HeadConfig head_config;
        head_config.kind = parse_head_kind(head.at("kind").get<std::string>());
        head_config.hidden_sizes = head.at("hidden_sizes").get<std::vector<std::size_t>>();
        head_config.input_width = head.at("input_width").get<std::size_t>();
        head_config.use_log_density = head.at("use_log_density").get<bool>();
        head_config.density_clamp = head.at("density_clamp").get<double>();
        bundle.class_weight = config.at("class_weight").get<double>();
        bundle.seed = config.at("seed").get<std::uint64_t>();
        bundle.epochs_trained = config.at("epochs_trained").get<std::uint64_t>();

        bundle.statement_encoder_is_toy = se.at("type").get<std::string>() == "toy";
        bundle.condition_encoder_is_toy = ce.at("type").get<std::string>() == "toy";

        if (bundle.statement_encoder_is_toy) {
            bundle.statement_encoder.vocab_size = se.at("vocab_size").get<std::uint32_t>();
            bundle.statement_encoder.dim = se.at("dim").get<std::uint32_t>();
            bundle.statement_encoder.seed = se.at("seed").get<std::uint64_t>();
        }
        if (bundle.condition_encoder_is_toy) {
            bundle.condition_encoder.vocab_size = ce.at("vocab_size").get<std::uint32_t>();
            bundle.condition_encoder.dim = ce.at("dim").get<std::uint32_t>();
            bundle.condition_encoder.seed = ce.at("seed").get<std::uint64_t>();
        }

        // Rebuild the head skeleton, then overwrite every tensor from the file.
        SplitMix64 scratch_rng(0);
        bundle.head = make_head(head_config, scratch_rng);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("bundle file: malformed config block: ") + e.what());
    }

    if (bundle.statement_encoder_is_toy) {
        auto& enc = bundle.statement_encoder;
        enc.table = Matrix(enc.vocab_size, enc.dim);
        enc.table.data = read_tensor(in, {enc.vocab_size, enc.dim});
    }
    if (bundle.condition_encoder_is_toy) {
        auto& enc = bundle.condition_encoder;
        enc.table = Matrix(enc.vocab_size, enc.dim);
        enc.table.data = read_tensor(in, {enc.vocab_size, enc.dim});
    }
    for (auto& layer : bundle.head.dense) {
        layer.weight.data = read_tensor(in, {static_cast<std::uint32_t>(layer.weight.rows),
                                             static_cast<std::uint32_t>(layer.weight.cols)});
        layer.bias = read_tensor(in, {static_cast<std::uint32_t>(layer.bias.size())});
    }
    for (auto& bn : bundle.head.norms) {
        bn.gamma = read_tensor(in, {static_cast<std::uint32_t>(bn.gamma.size())});
        bn.beta = read_tensor(in, {static_cast<std::uint32_t>(bn.beta.size())});
        bn.running_mean = read_tensor(in, {static_cast<std::uint32_t>(bn.running_mean.size())});
        bn.running_var = read_tensor(in, {static_cast<std::uint32_t>(bn.running_var.size())});
    }
    bundle.validate();
    return bundle;
}

void write_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw format_error("cannot open bundle for writing: " + path.string());
    }
    write_bundle_stream(out, bundle);
}

ModelBundle read_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw format_error("cannot open bundle for reading: " + path.string());
    }
    return read_bundle_stream(in);
}

std::uint64_t bundle_fingerprint(const ModelBundle& bundle) {
    std::ostringstream buffer(std::ios::binary);
    write_bundle_stream(buffer, bundle);
    const std::string bytes = buffer.str();
    return fnv1a64(bytes.data(), bytes.size());
}

} // namespace aen
