// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "leap/tensor.hpp"

namespace leap {

/// Reverse-mode autodiff over dense matrices.
///
/// Every operation allocates a fresh output tensor, never mutates its inputs,
/// and (while recording) appends a node holding the backward rule. backward()
/// zeroes the gradients of all op outputs, seeds the loss with 1 and walks the
/// tape once in reverse, so leaf (parameter) gradients accumulate across calls
/// while intermediate gradients are recomputed per call.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    // ---- matrix ops ----
    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
    TensorPtr transpose(const TensorPtr& a);

    // ---- elementwise ops (same shape, or one operand 1x1 which broadcasts) ----
    TensorPtr add(const TensorPtr& a, const TensorPtr& b);
    TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
    TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
    /// Multiply by a plain (untracked) constant.
    TensorPtr scale(const TensorPtr& a, double c);
    TensorPtr sigmoid(const TensorPtr& a);
    TensorPtr relu(const TensorPtr& a);

    // ---- structural ops ----
    TensorPtr add_row_bias(const TensorPtr& x, const TensorPtr& bias);
    TensorPtr slice(const TensorPtr& x, std::size_t r0, std::size_t nrows, std::size_t c0,
                    std::size_t ncols);
    TensorPtr concat_rows(std::span<const TensorPtr> parts);
    TensorPtr concat_cols(std::span<const TensorPtr> parts);
    TensorPtr repeat_rows(const TensorPtr& x, std::size_t times);
    TensorPtr mean_pool_rows(const TensorPtr& x, std::size_t group);
    TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<int>& ids);

    // ---- reductions ----
    TensorPtr sum_all(const TensorPtr& x);
    /// Fixed linear functional sum_i w[i] * x_flat[i]; the weights are constants.
    TensorPtr weighted_sum(const TensorPtr& x, std::vector<double> weights);

    // ---- normalization / attention ----
    TensorPtr row_softmax(const TensorPtr& x);
    TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                         double eps = 1e-5);

    // ---- losses ----
    /// Mean negative log-likelihood over the batch (rows of `logits`).
    TensorPtr softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels);
    /// KL(teacher || student) over temperature-softened rows, averaged over the batch.
    TensorPtr kl_divergence(const TensorPtr& student_logits, const TensorPtr& teacher_logits,
                            double temperature);

    /// Record a custom node. `out` must already hold its forward values.
    void record(TensorPtr out, std::function<void()> backward_fn);

    void backward(const TensorPtr& loss);
    void clear();
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        TensorPtr out;
        std::function<void()> backward_fn;
    };

    TensorPtr make_output(std::size_t rows, std::size_t cols, bool tracked);
    static void check_finite_values(const Tensor& t, const char* op);

    std::vector<Node> nodes_;
    bool recording_ = true;
};

} // namespace leap
