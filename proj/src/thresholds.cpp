// SPDX-License-Identifier: Apache-2.0
#include "leap/thresholds.hpp"

#include <cmath>
#include <string>

namespace leap {

ThresholdBank::ThresholdBank(std::size_t n, double temperature_, double target_ratio_,
                             double lambda_max_, double lambda_min_,
                             std::vector<std::size_t> element_counts_)
    : temperature(temperature_), target_ratio(target_ratio_), lambda_max(lambda_max_),
      lambda_min(lambda_min_), element_counts(std::move(element_counts_)) {
    if (n == 0) throw ConfigError("threshold bank needs at least one matrix");
    if (element_counts.size() != n) {
        throw ConfigError("threshold bank: one element count per matrix required");
    }
    for (std::size_t c : element_counts) {
        if (c == 0) throw ConfigError("threshold bank: element counts must be positive");
    }
    if (!(temperature > 0.0)) throw ConfigError("threshold bank: temperature must be positive");
    if (!(target_ratio > 0.0 && target_ratio <= 1.0)) {
        throw ConfigError("threshold bank: target ratio must lie in (0, 1]");
    }
    if (!(lambda_min > 0.0) || !(lambda_max > 0.0)) {
        throw ConfigError("threshold bank: lambda bounds must be positive");
    }
    if (lambda_min > lambda_max) {
        throw ConfigError("threshold bank: lambda_min must not exceed lambda_max");
    }
    sigma = make_tensor(1, n, /*requires_grad=*/true);
}

double ThresholdBank::total_count() const {
    double total = 0.0;
    for (std::size_t c : element_counts) total += static_cast<double>(c);
    return total;
}

void ThresholdBank::fill_sigma(double value) {
    std::fill(sigma->values.begin(), sigma->values.end(), value);
}

double ThresholdBank::density(std::size_t i) const {
    return threshold_density(sigma->values[i], temperature);
}

std::vector<double> ThresholdBank::densities() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = density(i);
    return out;
}

std::vector<double> ThresholdBank::count_weights() const {
    const double total = total_count();
    std::vector<double> w(size());
    for (std::size_t i = 0; i < size(); ++i) {
        w[i] = static_cast<double>(element_counts[i]) / total;
    }
    return w;
}

double threshold_density(double sigma, double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("threshold density: temperature must be positive");
    }
    const double z = sigma / temperature;
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double remaining_ratio(const ThresholdBank& bank) {
    double remain = 0.0;
    for (std::size_t i = 0; i < bank.size(); ++i) {
        remain += bank.density(i) * static_cast<double>(bank.element_counts[i]);
    }
    return remain / bank.total_count();
}

double sparsity_reg_loss(double remaining, double target_ratio) {
    if (remaining < target_ratio) return 0.0;
    const double d = remaining - target_ratio;
    return d * d;
}

double adaptive_lambda(double reg_loss_value, const ThresholdBank& bank) {
    if (reg_loss_value < 0.0) {
        throw ConfigError("adaptive lambda: regularization loss cannot be negative");
    }
    // Zero loss short-circuits to the floor; with target_ratio == 1 this is the
    // only reachable branch because R(sigma) < 1 for finite sigma.
    if (reg_loss_value == 0.0) return bank.lambda_min;
    if (bank.target_ratio >= 1.0) {
        throw ConfigError("adaptive lambda: target ratio 1 makes the scale undefined");
    }
    const double denom = (1.0 - bank.target_ratio) * (1.0 - bank.target_ratio);
    const double lambda = bank.lambda_max * reg_loss_value / denom;
    return std::max(lambda, bank.lambda_min);
}

Objective leap_objective(Tape& tape, const TensorPtr& pure_loss, ThresholdBank& bank,
                         LambdaMode mode, double lambda_constant) {
    if (!pure_loss->is_scalar()) {
        throw UsageError("leap objective: pure loss must be a scalar");
    }
    // L_reg = relu(R - R_target)^2, built from primitives so the backward pass
    // produces the analytic derivative 2(R-Rt) w_i k(1-k)/T on each sigma_i.
    auto scaled = tape.scale(bank.sigma, 1.0 / bank.temperature);
    auto densities = tape.sigmoid(scaled);
    auto ratio = tape.weighted_sum(densities, bank.count_weights());
    auto excess = tape.relu(tape.sub(ratio, make_scalar(bank.target_ratio)));
    auto reg_loss = tape.mul(excess, excess);

    RegState state;
    state.current_ratio = ratio->values[0];
    state.reg_loss_value = reg_loss->values[0];
    switch (mode) {
    case LambdaMode::adaptive:
        state.lambda_reg = adaptive_lambda(state.reg_loss_value, bank);
        break;
    case LambdaMode::constant:
        if (!(lambda_constant > 0.0)) {
            throw ConfigError("leap objective: constant lambda must be positive");
        }
        state.lambda_reg = lambda_constant;
        break;
    }

    Objective obj;
    obj.pure = pure_loss;
    obj.reg_loss = reg_loss;
    obj.state = state;
    obj.total = tape.add(pure_loss, tape.scale(reg_loss, state.lambda_reg));
    return obj;
}

} // namespace leap
