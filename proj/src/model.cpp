// SPDX-License-Identifier: Apache-2.0
#include "leap/model.hpp"

#include <algorithm>
#include <cmath>

namespace leap {

GranularityProfile profile_from_name(const std::string& name) {
    std::string n = name;
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
    if (n == "h32") return {"h32", 32, 1};
    if (n == "s32") return {"s32", 32, 32};
    if (n == "s16") return {"s16", 16, 16};
    if (n == "s8") return {"s8", 8, 8};
    if (n == "s1") return {"s1", 1, 1};
    throw ConfigError("unknown granularity profile '" + name +
                      "' (expected h32, s32, s16, s8, or s1)");
}

void ModelConfig::validate(const GranularityProfile& profile) const {
    if (layers == 0 || hidden == 0 || heads == 0 || ffn == 0 || vocab == 0 || seq_len == 0 ||
        classes < 2) {
        throw ConfigError("model: all dimensions must be positive (and classes >= 2)");
    }
    if (hidden % heads != 0) {
        throw ConfigError("model: head count must divide the hidden size");
    }
    for (std::size_t dim : {hidden}) {
        if (dim % profile.mha_block != 0) {
            throw ConfigError("model: MHA block size must divide the hidden size");
        }
    }
    if (hidden % profile.fc_block != 0 || ffn % profile.fc_block != 0) {
        throw ConfigError("model: FC block size must divide hidden and ffn sizes");
    }
}

namespace {

PrunableMatrix make_prunable(const std::string& name, std::size_t layer,
                             PrunableMatrix::SubLayer kind, std::size_t rows, std::size_t cols,
                             std::size_t block, std::size_t threshold_index, Rng& init_rng,
                             Rng& score_rng) {
    BlockGeometry geom(block);
    auto weight = make_uniform_fanin(rows, cols, rows, init_rng, true);
    // Importance scores start near zero so early gradients decide the ranking.
    auto score = make_uniform(geom.grid_rows(rows), geom.grid_cols(cols), 0.0, 1e-2, score_rng,
                              true);
    return PrunableMatrix(name, layer, kind, weight, score, geom, threshold_index);
}

TensorPtr ones_row(std::size_t n) {
    auto t = make_tensor(1, n, true);
    std::fill(t->values.begin(), t->values.end(), 1.0);
    return t;
}

} // namespace

ToyModel::ToyModel(ModelConfig config, GranularityProfile profile, Rng init_rng, Rng score_rng)
    : config_(config), profile_(profile) {
    config_.validate(profile_);
    const std::size_t h = config_.hidden;

    embedding = make_uniform_fanin(config_.vocab, h, h, init_rng, true);
    positional = make_uniform_fanin(config_.seq_len, h, h, init_rng, true);

    std::size_t index = 0;
    for (std::size_t l = 0; l < config_.layers; ++l) {
        EncoderLayer layer;
        const std::string base = "layer" + std::to_string(l);
        using Sub = PrunableMatrix::SubLayer;
        layer.wq = make_prunable(base + ".attn.wq", l, Sub::mha, h, h, profile_.mha_block,
                                 index++, init_rng, score_rng);
        layer.wk = make_prunable(base + ".attn.wk", l, Sub::mha, h, h, profile_.mha_block,
                                 index++, init_rng, score_rng);
        layer.wv = make_prunable(base + ".attn.wv", l, Sub::mha, h, h, profile_.mha_block,
                                 index++, init_rng, score_rng);
        layer.wo = make_prunable(base + ".attn.wo", l, Sub::mha, h, h, profile_.mha_block,
                                 index++, init_rng, score_rng);
        layer.w1 = make_prunable(base + ".ffn.w1", l, Sub::fc, h, config_.ffn, profile_.fc_block,
                                 index++, init_rng, score_rng);
        layer.w2 = make_prunable(base + ".ffn.w2", l, Sub::fc, config_.ffn, h, profile_.fc_block,
                                 index++, init_rng, score_rng);
        layer.ln1_gamma = ones_row(h);
        layer.ln1_beta = make_tensor(1, h, true);
        layer.ln2_gamma = ones_row(h);
        layer.ln2_beta = make_tensor(1, h, true);
        layers.push_back(std::move(layer));
    }

    final_gamma = ones_row(h);
    final_beta = make_tensor(1, h, true);
    classifier_w = make_uniform_fanin(h, config_.classes, h, init_rng, true);
    classifier_b = make_tensor(1, config_.classes, true);
}

std::vector<PrunableMatrix*> ToyModel::prunable() {
    std::vector<PrunableMatrix*> out;
    for (auto& layer : layers) {
        for (PrunableMatrix* p : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w1,
                                  &layer.w2}) {
            out.push_back(p);
        }
    }
    return out;
}

std::vector<const PrunableMatrix*> ToyModel::prunable() const {
    std::vector<const PrunableMatrix*> out;
    for (const auto& layer : layers) {
        for (const PrunableMatrix* p : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w1,
                                        &layer.w2}) {
            out.push_back(p);
        }
    }
    return out;
}

std::vector<std::size_t> ToyModel::prunable_counts() const {
    std::vector<std::size_t> counts;
    for (const auto* p : prunable()) {
        counts.push_back(p->element_count());
    }
    return counts;
}

std::vector<TensorPtr> ToyModel::parameters() {
    std::vector<TensorPtr> params{embedding, positional};
    for (auto& layer : layers) {
        for (PrunableMatrix* p : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w1,
                                  &layer.w2}) {
            params.push_back(p->weight);
        }
        params.push_back(layer.ln1_gamma);
        params.push_back(layer.ln1_beta);
        params.push_back(layer.ln2_gamma);
        params.push_back(layer.ln2_beta);
    }
    params.push_back(final_gamma);
    params.push_back(final_beta);
    params.push_back(classifier_w);
    params.push_back(classifier_b);
    return params;
}

std::vector<TensorPtr> ToyModel::score_tensors() {
    std::vector<TensorPtr> scores;
    for (auto* p : prunable()) {
        scores.push_back(p->score);
    }
    return scores;
}

TensorPtr ToyModel::linear(Tape& tape, PrunableMatrix& p, const TensorPtr& x, bool masked,
                           const ThresholdBank* bank) {
    if (!masked) {
        return tape.matmul(x, p.weight);
    }
    if (bank != nullptr) {
        SigmaHook hook{bank->sigma, p.threshold_index, bank->temperature};
        return masked_forward(tape, p, x, &hook);
    }
    return masked_forward(tape, p, x);
}

TensorPtr ToyModel::forward(Tape& tape, const Batch& batch, bool masked,
                            const ThresholdBank* bank) {
    if (batch.seq_len != config_.seq_len) {
        throw DimensionError("forward: batch sequence length does not match the model");
    }
    const std::size_t b = batch.batch_size;
    const std::size_t s = config_.seq_len;
    const std::size_t h = config_.hidden;
    const std::size_t head_dim = h / config_.heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    auto x = tape.add(tape.embedding_lookup(embedding, batch.tokens),
                      tape.repeat_rows(positional, b));

    for (auto& layer : layers) {
        // attention sub-layer
        auto z = tape.layer_norm(x, layer.ln1_gamma, layer.ln1_beta);
        auto q = linear(tape, layer.wq, z, masked, bank);
        auto k = linear(tape, layer.wk, z, masked, bank);
        auto v = linear(tape, layer.wv, z, masked, bank);

        std::vector<TensorPtr> per_sample;
        per_sample.reserve(b);
        for (std::size_t i = 0; i < b; ++i) {
            std::vector<TensorPtr> heads;
            heads.reserve(config_.heads);
            for (std::size_t hd = 0; hd < config_.heads; ++hd) {
                auto qs = tape.slice(q, i * s, s, hd * head_dim, head_dim);
                auto ks = tape.slice(k, i * s, s, hd * head_dim, head_dim);
                auto vs = tape.slice(v, i * s, s, hd * head_dim, head_dim);
                auto att = tape.row_softmax(
                    tape.scale(tape.matmul(qs, tape.transpose(ks)), att_scale));
                heads.push_back(tape.matmul(att, vs));
            }
            per_sample.push_back(tape.concat_cols(heads));
        }
        auto attended = tape.concat_rows(per_sample);
        x = tape.add(x, linear(tape, layer.wo, attended, masked, bank));

        // feed-forward sub-layer
        auto z2 = tape.layer_norm(x, layer.ln2_gamma, layer.ln2_beta);
        auto hidden = tape.relu(linear(tape, layer.w1, z2, masked, bank));
        x = tape.add(x, linear(tape, layer.w2, hidden, masked, bank));
    }

    auto normed = tape.layer_norm(x, final_gamma, final_beta);
    auto pooled = tape.mean_pool_rows(normed, s);
    return tape.add_row_bias(tape.matmul(pooled, classifier_w), classifier_b);
}

Objective distill_objective(Tape& tape, const TensorPtr& student_logits,
                            const TensorPtr& teacher_logits, const std::vector<int>& labels,
                            double alpha, ThresholdBank& bank, LambdaMode mode,
                            double lambda_constant, double distill_temperature) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("distillation: alpha must lie in [0, 1]");
    }
    TensorPtr pure;
    auto ce = tape.softmax_cross_entropy(student_logits, labels);
    if (alpha == 0.0) {
        pure = ce;
    } else {
        auto kl = tape.kl_divergence(student_logits, teacher_logits, distill_temperature);
        pure = tape.add(tape.scale(kl, alpha), tape.scale(ce, 1.0 - alpha));
    }
    return leap_objective(tape, pure, bank, mode, lambda_constant);
}

double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t batch = logits.rows(), classes = logits.cols();
    if (labels.size() != batch) {
        throw DimensionError("accuracy: one label per row required");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < batch; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < classes; ++j) {
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        }
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(batch);
}

double evaluate_accuracy(ToyModel& model, const Dataset& data, std::size_t batch_size,
                         bool masked, const ThresholdBank* bank) {
    const std::size_t batches = data.count / batch_size;
    if (batches == 0) throw UsageError("evaluate: dataset smaller than one batch");
    double correct_weighted = 0.0;
    for (std::size_t i = 0; i < batches; ++i) {
        auto batch = nth_batch(data, i, batch_size);
        Tape tape(false);
        auto logits = model.forward(tape, batch, masked, bank);
        correct_weighted += batch_accuracy(*logits, batch.labels);
    }
    return correct_weighted / static_cast<double>(batches);
}

} // namespace leap
