// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "leap/data.hpp"
#include "leap/masking.hpp"
#include "leap/tape.hpp"
#include "leap/thresholds.hpp"

namespace leap {

/// Block sizes per sub-layer family. h32 mixes 32x32 attention blocks with
/// unstructured feed-forward pruning; s* use one square size everywhere.
struct GranularityProfile {
    std::string name = "s1";
    std::size_t mha_block = 1;
    std::size_t fc_block = 1;
};

GranularityProfile profile_from_name(const std::string& name);

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t hidden = 64;
    std::size_t heads = 4;
    std::size_t ffn = 256;
    std::size_t vocab = 32;
    std::size_t seq_len = 16;
    std::size_t classes = 2;

    void validate(const GranularityProfile& profile) const;
};

/// One pre-norm encoder layer; exactly six prunable matrices.
struct EncoderLayer {
    PrunableMatrix wq, wk, wv, wo; // hidden x hidden, MHA geometry
    PrunableMatrix w1, w2;         // hidden x ffn and ffn x hidden, FC geometry
    TensorPtr ln1_gamma, ln1_beta;
    TensorPtr ln2_gamma, ln2_beta;
};

/// Desk-scale pre-norm transformer encoder with a mean-pooled classifier head.
/// The prunable set is exactly the 6L encoder matrices; embeddings, layer
/// norms, and the classifier are trained but never pruned.
class ToyModel {
public:
    ToyModel(ModelConfig config, GranularityProfile profile, Rng init_rng, Rng score_rng);

    const ModelConfig& config() const { return config_; }
    const GranularityProfile& profile() const { return profile_; }

    /// The 6L prunable matrices in fixed order (per layer: wq wk wv wo w1 w2).
    std::vector<PrunableMatrix*> prunable();
    std::vector<const PrunableMatrix*> prunable() const;
    std::vector<std::size_t> prunable_counts() const;

    /// Every tensor in the weight optimization group (prunable weights plus
    /// the never-pruned embeddings, layer norms, and classifier head).
    std::vector<TensorPtr> parameters();
    std::vector<TensorPtr> score_tensors();

    /// Pre-norm encoder forward. With `masked` the six matrices per layer go
    /// through masked_forward (masks must be fresh); `bank` additionally wires
    /// the straight-through keep-fraction gradient into sigma.
    TensorPtr forward(Tape& tape, const Batch& batch, bool masked,
                      const ThresholdBank* bank = nullptr);

    TensorPtr embedding, positional;
    std::vector<EncoderLayer> layers;
    TensorPtr final_gamma, final_beta;
    TensorPtr classifier_w, classifier_b;

private:
    TensorPtr linear(Tape& tape, PrunableMatrix& p, const TensorPtr& x, bool masked,
                     const ThresholdBank* bank);

    ModelConfig config_;
    GranularityProfile profile_;
};

/// alpha * KL(teacher || student) + (1 - alpha) * CE + lambda_reg * L_reg.
/// With alpha = 0 the teacher logits are ignored entirely.
Objective distill_objective(Tape& tape, const TensorPtr& student_logits,
                            const TensorPtr& teacher_logits, const std::vector<int>& labels,
                            double alpha, ThresholdBank& bank, LambdaMode mode,
                            double lambda_constant = 0.0, double distill_temperature = 1.0);

/// Fraction of argmax predictions matching the labels.
double batch_accuracy(const Tensor& logits, const std::vector<int>& labels);

/// Held-out accuracy; runs forwards on a non-recording tape.
double evaluate_accuracy(ToyModel& model, const Dataset& data, std::size_t batch_size,
                         bool masked, const ThresholdBank* bank = nullptr);

} // namespace leap
