// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "leap/tape.hpp"
#include "leap/tensor.hpp"

namespace leap {

/// The learnable threshold vector sigma plus everything needed to turn it into
/// per-matrix keep fractions and the global remaining ratio.
struct ThresholdBank {
    TensorPtr sigma; // 1 x n, tracked
    double temperature = 1.0;
    double target_ratio = 1.0;
    double lambda_max = 1.0;
    double lambda_min = 1.0;
    std::vector<std::size_t> element_counts; // d_in^i * d_out^i per matrix

    ThresholdBank(std::size_t n, double temperature, double target_ratio, double lambda_max,
                  double lambda_min, std::vector<std::size_t> element_counts);

    std::size_t size() const { return element_counts.size(); }
    double total_count() const;
    /// sigma_i := value for all i (the usual init is +5T).
    void fill_sigma(double value);

    /// Keep fraction k(sigma_i) of matrix i.
    double density(std::size_t i) const;
    std::vector<double> densities() const;
    /// Count-weighted mean density, i.e. the weight w_i = count_i / N_total of
    /// each matrix in the remaining ratio.
    std::vector<double> count_weights() const;
};

/// k = sigmoid(sigma / T). Throws ConfigError when T <= 0.
double threshold_density(double sigma, double temperature);

/// R(sigma) = sum_i k(sigma_i) count_i / sum_i count_i.
double remaining_ratio(const ThresholdBank& bank);

/// One-sided quadratic: (R - R_target)^2 above the target, 0 below.
double sparsity_reg_loss(double remaining, double target_ratio);

/// lambda = max(lambda_max * reg_loss / (1 - R_target)^2, lambda_min).
/// The loss value enters as a detached scalar; no gradient flows through it.
double adaptive_lambda(double reg_loss_value, const ThresholdBank& bank);

struct RegState {
    double current_ratio = 0.0;
    double reg_loss_value = 0.0;
    double lambda_reg = 0.0;
};

enum class LambdaMode { adaptive, constant };

struct Objective {
    TensorPtr total;    // L_pure + lambda * L_reg
    TensorPtr pure;     // as passed in
    TensorPtr reg_loss; // scalar L_reg(sigma) on the tape
    RegState state;
};

/// Build L_pure + lambda_reg * L_reg(sigma) on the tape. The regularizer path
/// is differentiable in sigma; lambda_reg is a detached scalar taken from
/// adaptive_lambda (adaptive mode) or `lambda_constant` (constant mode).
Objective leap_objective(Tape& tape, const TensorPtr& pure_loss, ThresholdBank& bank,
                         LambdaMode mode, double lambda_constant = 0.0);

} // namespace leap
