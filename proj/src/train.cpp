#include "aen/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

namespace aen {

// ---------------------------------------------------------------------------
// Trainable parameter bookkeeping.
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("train config: learning_rate must be finite and >= 0");
    }
    if (epochs == 0) throw std::invalid_argument("train config: epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
    if (!(class_weight > 0.0)) {
        throw std::invalid_argument("train config: class_weight must be positive");
    }
}

std::size_t ParameterRefs::total_size() const {
    std::size_t total = 0;
    for (const auto& t : tensors) total += t.size();
    return total;
}

namespace {

// Tensor indices within the trainable_parameters order.
struct ParamLayout {
    int stmt_table = -1;
    int cond_table = -1;
    std::size_t dense_base = 0; // dense[i].weight at dense_base + 2i, bias at +2i+1
    std::size_t norm_base = 0;  // norms[i].gamma at norm_base + 2i, beta at +2i+1
    std::size_t count = 0;
};

ParamLayout param_layout(const ModelBundle& bundle) {
    ParamLayout layout;
    std::size_t next = 0;
    if (bundle.statement_encoder_is_toy) layout.stmt_table = static_cast<int>(next++);
    if (bundle.condition_encoder_is_toy) layout.cond_table = static_cast<int>(next++);
    layout.dense_base = next;
    next += 2 * bundle.head.dense.size();
    layout.norm_base = next;
    next += 2 * bundle.head.norms.size();
    layout.count = next;
    return layout;
}

} // namespace

ParameterRefs trainable_parameters(ModelBundle& bundle) {
    ParameterRefs refs;
    if (bundle.statement_encoder_is_toy) {
        refs.tensors.emplace_back(bundle.statement_encoder.table.data);
        refs.names.emplace_back("statement_table");
    }
    if (bundle.condition_encoder_is_toy) {
        refs.tensors.emplace_back(bundle.condition_encoder.table.data);
        refs.names.emplace_back("condition_table");
    }
    for (std::size_t i = 0; i < bundle.head.dense.size(); ++i) {
        refs.tensors.emplace_back(bundle.head.dense[i].weight.data);
        refs.names.emplace_back("dense" + std::to_string(i) + ".weight");
        refs.tensors.emplace_back(bundle.head.dense[i].bias);
        refs.names.emplace_back("dense" + std::to_string(i) + ".bias");
    }
    for (std::size_t i = 0; i < bundle.head.norms.size(); ++i) {
        refs.tensors.emplace_back(bundle.head.norms[i].gamma);
        refs.names.emplace_back("norm" + std::to_string(i) + ".gamma");
        refs.tensors.emplace_back(bundle.head.norms[i].beta);
        refs.names.emplace_back("norm" + std::to_string(i) + ".beta");
    }
    return refs;
}

void Gradients::accumulate_scaled(const Gradients& other, double scale) {
    if (tensors.size() != other.tensors.size()) {
        throw std::invalid_argument("gradients: tensor count mismatch");
    }
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        if (tensors[t].size() != other.tensors[t].size()) {
            throw std::invalid_argument("gradients: tensor size mismatch");
        }
        for (std::size_t i = 0; i < tensors[t].size(); ++i) {
            tensors[t][i] += scale * other.tensors[t][i];
        }
    }
}

Gradients make_zero_gradients(const ModelBundle& bundle) {
    Gradients grads;
    auto& mutable_bundle = const_cast<ModelBundle&>(bundle);
    for (const auto& span : trainable_parameters(mutable_bundle).tensors) {
        grads.tensors.emplace_back(span.size(), 0.0);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Batch forward/backward.
// ---------------------------------------------------------------------------

namespace {

struct PairContext {
    TokenEmbeddings statement;
    TokenEmbeddings condition;
    DimKDE kde;
    Vector query;
    Vector densities;
    int label = 0;

    const TokenEmbeddings& kde_tokens(KdeSide side) const {
        return side == KdeSide::Statement ? statement : condition;
    }
    const TokenEmbeddings& query_tokens(KdeSide side) const {
        return side == KdeSide::Statement ? condition : statement;
    }
};

PairContext encode_pair(const ModelBundle& bundle, const LabeledPair& pair,
                        const EncoderHooks& hooks, const Vector* bandwidth_override) {
    PairContext ctx;
    ctx.statement = encode_statement(bundle, pair.statement, hooks);
    ctx.condition = encode_condition(bundle, pair.condition, hooks);
    ctx.label = pair.label;
    const TokenEmbeddings& kde_side_tokens = ctx.kde_tokens(bundle.kde_side);
    ctx.kde = bandwidth_override
                  ? build_kde_with_bandwidths(kde_side_tokens, bundle.kernel, *bandwidth_override)
                  : build_kde(kde_side_tokens, bundle.kernel, bundle.bandwidth_rule,
                              bundle.fixed_bandwidth);
    ctx.query = mean_pool(ctx.query_tokens(bundle.kde_side));
    ctx.densities = eval_density(ctx.kde, ctx.query);
    return ctx;
}

struct BatchPass {
    double mean_loss = 0.0;
    std::vector<double> losses;
    std::vector<int> predictions;
    std::vector<int> labels;
};

/// Scatter one token matrix's gradient into its encoder table. Rows encoded
/// without provenance (external embeddings) carry no source rows and receive
/// no gradient.
void scatter_table_gradient(Vector& table_grad, std::size_t table_cols,
                            const TokenEmbeddings& tokens, const Matrix& d_tokens,
                            std::set<std::uint32_t>& touched) {
    if (tokens.source_rows.empty()) return;
    for (std::size_t r = 0; r < d_tokens.rows; ++r) {
        const std::uint32_t row = tokens.source_rows[r];
        touched.insert(row);
        for (std::size_t c = 0; c < table_cols; ++c) {
            table_grad[static_cast<std::size_t>(row) * table_cols + c] += d_tokens(r, c);
        }
    }
}

/// Forward a batch in training mode, compute the mean weighted cross entropy
/// and its gradient for every trainable tensor. `grads` must be zeroed by the
/// caller; touched table rows are recorded for targeted finiteness checks.
BatchPass forward_backward_batch(ModelBundle& bundle, const std::vector<PairContext>& contexts,
                                 double class_weight, Gradients& grads, const ParamLayout& layout,
                                 std::set<std::uint32_t>& touched_stmt_rows,
                                 std::set<std::uint32_t>& touched_cond_rows, bool update_running) {
    const std::size_t batch = contexts.size();
    const std::size_t width = bundle.head.config.input_width;

    Matrix features(batch, width);
    for (std::size_t k = 0; k < batch; ++k) {
        const Vector f = density_features(bundle.head.config, contexts[k].densities);
        std::copy(f.begin(), f.end(), features.row(k).begin());
    }

    HeadCache cache;
    Matrix logits = head_forward(bundle.head, features, /*training=*/true, &cache, update_running);

    BatchPass pass;
    pass.losses.resize(batch);
    pass.predictions.resize(batch);
    pass.labels.resize(batch);
    Matrix d_logits(batch, 2);
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t k = 0; k < batch; ++k) {
        const Vector probs = softmax2({logits(k, 0), logits(k, 1)});
        const int label = contexts[k].label;
        pass.losses[k] = weighted_ce_loss(probs, label, class_weight);
        pass.predictions[k] = probs[1] >= 0.5 ? 1 : 0;
        pass.labels[k] = label;
        pass.mean_loss += pass.losses[k] * inv_batch;
        // d(weighted CE)/d(logits) = w*(p - onehot) for label 1, (p - onehot)
        // for label 0; scaled by 1/B for the batch mean.
        const double w = label == 1 ? class_weight : 1.0;
        d_logits(k, 0) = w * (probs[0] - (label == 0 ? 1.0 : 0.0)) * inv_batch;
        d_logits(k, 1) = w * (probs[1] - (label == 1 ? 1.0 : 0.0)) * inv_batch;
    }

    Matrix d_features(batch, width);
    HeadGradients head_grads = head_backward(bundle.head, cache, d_logits, d_features);

    for (std::size_t i = 0; i < bundle.head.dense.size(); ++i) {
        auto& dw = grads.tensors[layout.dense_base + 2 * i];
        auto& db = grads.tensors[layout.dense_base + 2 * i + 1];
        for (std::size_t n = 0; n < dw.size(); ++n) dw[n] += head_grads.d_weight[i].data[n];
        for (std::size_t n = 0; n < db.size(); ++n) db[n] += head_grads.d_bias[i][n];
    }
    for (std::size_t i = 0; i < bundle.head.norms.size(); ++i) {
        auto& dg = grads.tensors[layout.norm_base + 2 * i];
        auto& dbta = grads.tensors[layout.norm_base + 2 * i + 1];
        for (std::size_t n = 0; n < dg.size(); ++n) dg[n] += head_grads.d_gamma[i][n];
        for (std::size_t n = 0; n < dbta.size(); ++n) dbta[n] += head_grads.d_beta[i][n];
    }

    // Chain each pair's feature gradient back through the clamp/log transform,
    // the density evaluations and mean pooling into the token matrices, then
    // scatter into the encoder tables.
    const bool kde_is_statement = bundle.kde_side == KdeSide::Statement;
    for (std::size_t k = 0; k < batch; ++k) {
        const PairContext& ctx = contexts[k];
        const TokenEmbeddings& kde_tokens = ctx.kde_tokens(bundle.kde_side);
        const TokenEmbeddings& query_tokens = ctx.query_tokens(bundle.kde_side);

        Vector d_density(width);
        for (std::size_t j = 0; j < width; ++j) {
            const double d = ctx.densities[j];
            // Clamp passes gradient strictly inside [0, clamp]; the log
            // transform contributes 1/(clamped + floor).
            double g = d_features(k, j);
            if (d >= bundle.head.config.density_clamp) {
                g = 0.0;
            } else if (bundle.head.config.use_log_density) {
                g /= std::min(d, bundle.head.config.density_clamp) + kLogDensityFloor;
            }
            d_density[j] = g;
        }

        DensityGradients dg = eval_density_gradients(ctx.kde, ctx.query);

        // Query side: query[j] is the mean of the attended token rows.
        const auto query_rows = query_tokens.attended_indices();
        const double inv_attended = 1.0 / static_cast<double>(query_rows.size());
        Matrix d_query_tokens(query_tokens.token_count(), width);
        for (std::size_t j = 0; j < width; ++j) {
            const double dq = d_density[j] * dg.d_query[j] * inv_attended;
            for (const std::size_t r : query_rows) d_query_tokens(r, j) = dq;
        }

        // KDE side: center (i, j) is attended token row i, column j.
        const auto center_rows = kde_tokens.attended_indices();
        Matrix d_kde_tokens(kde_tokens.token_count(), width);
        for (std::size_t i = 0; i < center_rows.size(); ++i) {
            const std::size_t r = center_rows[i];
            for (std::size_t j = 0; j < width; ++j) {
                d_kde_tokens(r, j) = d_density[j] * dg.d_centers(i, j);
            }
        }

        const Matrix& d_stmt = kde_is_statement ? d_kde_tokens : d_query_tokens;
        const Matrix& d_cond = kde_is_statement ? d_query_tokens : d_kde_tokens;
        if (layout.stmt_table >= 0) {
            scatter_table_gradient(grads.tensors[static_cast<std::size_t>(layout.stmt_table)],
                                   width, ctx.statement, d_stmt, touched_stmt_rows);
        }
        if (layout.cond_table >= 0) {
            scatter_table_gradient(grads.tensors[static_cast<std::size_t>(layout.cond_table)],
                                   width, ctx.condition, d_cond, touched_cond_rows);
        }
    }
    return pass;
}

void check_batch_finite(const BatchPass& pass, const Gradients& grads, const ParamLayout& layout,
                        std::size_t table_cols, const std::set<std::uint32_t>& touched_stmt,
                        const std::set<std::uint32_t>& touched_cond, std::size_t batch_index,
                        std::uint64_t epoch_index) {
    const auto fail = [&](const char* what) {
        throw std::runtime_error("training diverged: non-finite " + std::string(what) +
                                 " in batch " + std::to_string(batch_index) + " of epoch " +
                                 std::to_string(epoch_index));
    };
    for (double l : pass.losses) {
        if (!std::isfinite(l)) fail("loss");
    }
    const auto check_rows = [&](int tensor_idx, const std::set<std::uint32_t>& rows) {
        if (tensor_idx < 0) return;
        const auto& g = grads.tensors[static_cast<std::size_t>(tensor_idx)];
        for (const std::uint32_t r : rows) {
            for (std::size_t c = 0; c < table_cols; ++c) {
                if (!std::isfinite(g[static_cast<std::size_t>(r) * table_cols + c])) {
                    fail("gradient");
                }
            }
        }
    };
    check_rows(layout.stmt_table, touched_stmt);
    check_rows(layout.cond_table, touched_cond);
    for (std::size_t t = layout.dense_base; t < layout.count; ++t) {
        if (!all_finite(grads.tensors[t])) fail("gradient");
    }
}

void apply_update(const ParameterRefs& params, const Gradients& grads, const TrainConfig& config,
                  OptimizerState& state) {
    if (state.m.empty()) {
        for (const auto& span : params.tensors) {
            state.m.emplace_back(span.size(), 0.0);
            state.v.emplace_back(span.size(), 0.0);
        }
    }
    ++state.step;
    const double lr = config.learning_rate;
    if (config.optimizer == OptimizerKind::SGD) {
        for (std::size_t t = 0; t < params.tensors.size(); ++t) {
            auto span = params.tensors[t];
            const auto& g = grads.tensors[t];
            for (std::size_t i = 0; i < span.size(); ++i) span[i] -= lr * g[i];
        }
        return;
    }
    const auto step = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(kAdamBeta1, step);
    const double bias2 = 1.0 - std::pow(kAdamBeta2, step);
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        auto span = params.tensors[t];
        const auto& g = grads.tensors[t];
        auto& m = state.m[t];
        auto& v = state.v[t];
        for (std::size_t i = 0; i < span.size(); ++i) {
            m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
            v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
            const double m_hat = m[i] / bias1;
            const double v_hat = v[i] / bias2;
            span[i] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

EpochStats train_epoch(ModelBundle& bundle, const std::vector<LabeledPair>& pairs,
                       const TrainConfig& config, OptimizerState& optimizer,
                       const EncoderHooks& hooks) {
    config.validate();
    bundle.validate();
    if (pairs.empty()) {
        throw std::invalid_argument("train_epoch: empty dataset");
    }
    // The bundle records the weight it was trained with so eval-time losses
    // agree with training.
    bundle.class_weight = config.class_weight;

    const std::size_t n = pairs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 shuffle_rng(bundle.seed + bundle.epochs_trained);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = shuffle_rng.next_below(i + 1);
        std::swap(order[i], order[j]);
    }

    const ParamLayout layout = param_layout(bundle);
    ParameterRefs params = trainable_parameters(bundle);
    Gradients grads = make_zero_gradients(bundle);

    std::vector<int> predictions, labels;
    std::vector<double> losses;
    predictions.reserve(n);
    labels.reserve(n);
    losses.reserve(n);
    double epoch_loss = 0.0;

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
        const std::size_t stop = std::min(start + config.batch_size, n);
        std::vector<PairContext> contexts;
        contexts.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i) {
            contexts.push_back(encode_pair(bundle, pairs[order[i]], hooks, nullptr));
        }
        for (auto& tensor : grads.tensors) std::fill(tensor.begin(), tensor.end(), 0.0);
        std::set<std::uint32_t> touched_stmt, touched_cond;
        const BatchPass pass =
            forward_backward_batch(bundle, contexts, config.class_weight, grads, layout,
                                   touched_stmt, touched_cond, /*update_running=*/true);
        check_batch_finite(pass, grads, layout, bundle.head.config.input_width, touched_stmt,
                           touched_cond, batch_index, bundle.epochs_trained);
        apply_update(params, grads, config, optimizer);

        for (std::size_t k = 0; k < pass.losses.size(); ++k) {
            predictions.push_back(pass.predictions[k]);
            labels.push_back(pass.labels[k]);
            losses.push_back(pass.losses[k]);
            epoch_loss += pass.losses[k];
        }
    }

    ++bundle.epochs_trained;

    EpochStats stats;
    stats.mean_loss = epoch_loss / static_cast<double>(n);
    stats.metrics = compute_metrics(predictions, labels, &losses);
    return stats;
}

std::vector<EpochStats> train_model(ModelBundle& bundle, const std::vector<LabeledPair>& pairs,
                                    const TrainConfig& config, const EncoderHooks& hooks) {
    config.validate();
    OptimizerState optimizer;
    std::vector<EpochStats> history;
    history.reserve(config.epochs);
    for (std::size_t e = 0; e < config.epochs; ++e) {
        history.push_back(train_epoch(bundle, pairs, config, optimizer, hooks));
    }
    return history;
}

MetricsReport evaluate_model(const ModelBundle& bundle, const std::vector<LabeledPair>& pairs,
                             const EncoderHooks& hooks) {
    bundle.validate();
    if (pairs.empty()) {
        throw std::invalid_argument("evaluate_model: empty dataset");
    }
    std::vector<int> predictions, labels;
    std::vector<double> losses;
    predictions.reserve(pairs.size());
    labels.reserve(pairs.size());
    losses.reserve(pairs.size());
    for (const auto& pair : pairs) {
        const TokenEmbeddings statement = encode_statement(bundle, pair.statement, hooks);
        const TokenEmbeddings condition = encode_condition(bundle, pair.condition, hooks);
        const Vector probs = aen_forward(bundle, statement, condition);
        predictions.push_back(probs[1] >= 0.5 ? 1 : 0);
        labels.push_back(pair.label);
        losses.push_back(weighted_ce_loss(probs, pair.label, bundle.class_weight));
    }
    return compute_metrics(predictions, labels, &losses);
}

// ---------------------------------------------------------------------------
// Gradient verification.
// ---------------------------------------------------------------------------

double gradient_check(ModelBundle& bundle, const std::vector<LabeledPair>& batch, double epsilon,
                      const EncoderHooks& hooks, std::vector<double>* per_tensor_max) {
    bundle.validate();
    if (batch.empty() || batch.size() > 8) {
        throw std::invalid_argument("gradient_check: batch size must be between 1 and 8");
    }
    if (!(epsilon >= 1e-7 && epsilon <= 1e-4)) {
        throw std::invalid_argument("gradient_check: epsilon must lie in [1e-7, 1e-4]");
    }

    // Pin each pair's bandwidths at their unperturbed values so the finite
    // differences probe the same constant-bandwidth loss the analytic
    // gradients describe.
    std::vector<Vector> frozen_bandwidths;
    frozen_bandwidths.reserve(batch.size());
    for (const auto& pair : batch) {
        const PairContext ctx = encode_pair(bundle, pair, hooks, nullptr);
        frozen_bandwidths.push_back(ctx.kde.bandwidths);
    }

    const ParamLayout layout = param_layout(bundle);
    const double class_weight = bundle.class_weight;

    const auto batch_contexts = [&]() {
        std::vector<PairContext> contexts;
        contexts.reserve(batch.size());
        for (std::size_t k = 0; k < batch.size(); ++k) {
            contexts.push_back(encode_pair(bundle, batch[k], hooks, &frozen_bandwidths[k]));
        }
        return contexts;
    };

    const auto loss_fn = [&]() {
        const std::vector<PairContext> contexts = batch_contexts();
        Matrix features(contexts.size(), bundle.head.config.input_width);
        for (std::size_t k = 0; k < contexts.size(); ++k) {
            const Vector f = density_features(bundle.head.config, contexts[k].densities);
            std::copy(f.begin(), f.end(), features.row(k).begin());
        }
        const Matrix logits = head_forward(bundle.head, features, /*training=*/true, nullptr,
                                           /*update_running=*/false);
        double loss = 0.0;
        for (std::size_t k = 0; k < contexts.size(); ++k) {
            const Vector probs = softmax2({logits(k, 0), logits(k, 1)});
            loss += weighted_ce_loss(probs, contexts[k].label, class_weight);
        }
        return loss / static_cast<double>(contexts.size());
    };

    // Analytic gradients of the same frozen-bandwidth loss.
    Gradients grads = make_zero_gradients(bundle);
    std::set<std::uint32_t> touched_stmt, touched_cond;
    {
        const std::vector<PairContext> contexts = batch_contexts();
        forward_backward_batch(bundle, contexts, class_weight, grads, layout, touched_stmt,
                               touched_cond, /*update_running=*/false);
    }

    ParameterRefs params = trainable_parameters(bundle);
    const std::size_t table_cols = bundle.head.config.input_width;

    double max_error = 0.0;
    std::vector<double> tensor_errors(params.tensors.size(), 0.0);
    const auto probe = [&](std::size_t tensor_idx, std::size_t element_idx) {
        double& p = params.tensors[tensor_idx][element_idx];
        const double saved = p;
        p = saved + epsilon;
        const double loss_plus = loss_fn();
        p = saved - epsilon;
        const double loss_minus = loss_fn();
        p = saved;
        const double fd = (loss_plus - loss_minus) / (2.0 * epsilon);
        const double analytic = grads.tensors[tensor_idx][element_idx];
        const double denom = std::max(std::abs(fd), std::abs(analytic));
        const double error = denom < 1e-8 ? std::abs(fd - analytic) : std::abs(fd - analytic) / denom;
        tensor_errors[tensor_idx] = std::max(tensor_errors[tensor_idx], error);
        max_error = std::max(max_error, error);
    };

    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        const bool is_stmt_table = layout.stmt_table >= 0 &&
                                   t == static_cast<std::size_t>(layout.stmt_table);
        const bool is_cond_table = layout.cond_table >= 0 &&
                                   t == static_cast<std::size_t>(layout.cond_table);
        if (is_stmt_table || is_cond_table) {
            const auto& touched = is_stmt_table ? touched_stmt : touched_cond;
            for (const std::uint32_t row : touched) {
                for (std::size_t c = 0; c < table_cols; ++c) {
                    probe(t, static_cast<std::size_t>(row) * table_cols + c);
                }
            }
        } else {
            for (std::size_t i = 0; i < params.tensors[t].size(); ++i) probe(t, i);
        }
    }
    if (per_tensor_max) *per_tensor_max = std::move(tensor_errors);
    return max_error;
}

} // namespace aen
