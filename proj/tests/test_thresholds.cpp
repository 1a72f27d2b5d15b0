// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "leap/rng.hpp"
#include "leap/thresholds.hpp"
#include "oracles.hpp"

using namespace leap;

namespace {

double logit(double k) { return std::log(k / (1.0 - k)); }

ThresholdBank toy_bank(double temperature = 32.0, double target = 0.1) {
    // 2 encoder layers at h=64: per layer 4 attention matrices of 64x64 and
    // two feed-forward matrices of 64x256.
    std::vector<std::size_t> counts;
    for (int layer = 0; layer < 2; ++layer) {
        for (int i = 0; i < 4; ++i) counts.push_back(64 * 64);
        counts.push_back(64 * 256);
        counts.push_back(256 * 64);
    }
    ThresholdBank bank(counts.size(), temperature, target, 320.0, 10.0, counts);
    bank.fill_sigma(5.0 * temperature);
    return bank;
}

} // namespace

TEST_CASE("threshold density values") {
    for (double t : {1.0, 16.0, 32.0}) {
        CHECK(threshold_density(0.0, t) == 0.5);
    }
    CHECK(std::fabs(threshold_density(5.0 * 32.0, 32.0) - 0.993307) <= 1e-6);
    CHECK(std::fabs(threshold_density(-5.0 * 32.0, 32.0) - 0.006693) <= 1e-6);
    CHECK(std::fabs(threshold_density(5.0 * 32.0, 32.0) - oracle::sigmoid(5.0)) <= 1e-15);
    CHECK_THROWS_AS(threshold_density(1.0, 0.0), ConfigError);
    CHECK_THROWS_AS(threshold_density(1.0, -2.0), ConfigError);
}

TEST_CASE("remaining ratio is the count-weighted density mean") {
    ThresholdBank even(2, 1.0, 0.5, 1.0, 1.0, {50, 50});
    even.sigma->values = {logit(0.2), logit(0.4)};
    CHECK(remaining_ratio(even) == doctest::Approx(0.3).epsilon(1e-12));

    ThresholdBank uneven(2, 1.0, 0.5, 1.0, 1.0, {100, 300});
    uneven.sigma->values = {logit(0.1), 0.0};
    CHECK(remaining_ratio(uneven) == doctest::Approx(0.4).epsilon(1e-12));

    ThresholdBank dense(3, 2.0, 0.5, 1.0, 1.0, {10, 20, 30});
    dense.fill_sigma(200.0);
    CHECK(remaining_ratio(dense) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("bank construction validates its contract") {
    CHECK_THROWS_AS(ThresholdBank(0, 1.0, 0.5, 1.0, 1.0, {}), ConfigError);
    CHECK_THROWS_AS(ThresholdBank(2, 1.0, 0.5, 1.0, 1.0, {1}), ConfigError);
    CHECK_THROWS_AS(ThresholdBank(1, 0.0, 0.5, 1.0, 1.0, {1}), ConfigError);
    CHECK_THROWS_AS(ThresholdBank(1, 1.0, 0.0, 1.0, 1.0, {1}), ConfigError);
    CHECK_THROWS_AS(ThresholdBank(1, 1.0, 1.5, 1.0, 1.0, {1}), ConfigError);
    CHECK_THROWS_AS(ThresholdBank(1, 1.0, 0.5, 1.0, 2.0, {1}), ConfigError);
    CHECK_THROWS_AS(ThresholdBank(1, 1.0, 0.5, 1.0, 1.0, {0}), ConfigError);
}

TEST_CASE("one-sided quadratic regularization loss") {
    CHECK(sparsity_reg_loss(0.3, 0.3) == 0.0);
    CHECK(sparsity_reg_loss(0.1, 0.3) == 0.0);
    CHECK(sparsity_reg_loss(1.0, 0.1) == doctest::Approx(0.81).epsilon(1e-14));
}

TEST_CASE("adaptive lambda endpoints and hand case") {
    ThresholdBank bank(1, 1.0, 0.3, 320.0, 10.0, {100});

    // R = 1 gives exactly lambda_max
    const double full = (1.0 - 0.3) * (1.0 - 0.3);
    CHECK(adaptive_lambda(full, bank) == 320.0);

    CHECK(adaptive_lambda(0.0, bank) == 10.0);

    const double reg = sparsity_reg_loss(0.65, 0.3); // 0.1225
    CHECK(adaptive_lambda(reg, bank) == doctest::Approx(80.0).epsilon(1e-12));

    ThresholdBank dense_target(1, 1.0, 1.0, 320.0, 10.0, {100});
    CHECK(adaptive_lambda(0.0, dense_target) == 10.0);
    CHECK_THROWS_AS(adaptive_lambda(0.5, dense_target), ConfigError);
}

TEST_CASE("adaptive lambda is nondecreasing and clamped") {
    ThresholdBank bank(1, 1.0, 0.25, 320.0, 10.0, {100});
    Rng rng(9);
    double prev_reg = 0.0, prev_lambda = adaptive_lambda(0.0, bank);
    std::vector<double> regs;
    for (int i = 0; i < 200; ++i) {
        const double r = 0.25 + 0.75 * rng.uniform();
        regs.push_back(sparsity_reg_loss(r, 0.25));
    }
    std::sort(regs.begin(), regs.end());
    for (double reg : regs) {
        const double lambda = adaptive_lambda(reg, bank);
        CHECK(lambda >= prev_lambda);
        CHECK(lambda >= 10.0);
        CHECK(lambda <= 320.0);
        prev_lambda = lambda;
        prev_reg = reg;
    }
    (void)prev_reg;
}

TEST_CASE("remaining ratio rises with every sigma") {
    auto bank = toy_bank();
    Rng rng(4);
    for (auto& v : bank.sigma->values) v = rng.uniform(-100.0, 100.0);
    const double before = remaining_ratio(bank);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const double saved = bank.sigma->values[i];
        bank.sigma->values[i] = saved + 0.5;
        CHECK(remaining_ratio(bank) > before);
        bank.sigma->values[i] = saved;
    }
}

TEST_CASE("objective equals the pure loss below target") {
    auto bank = toy_bank(32.0, 0.5);
    bank.fill_sigma(-5.0 * 32.0); // R ~ 0.0067 < target
    Tape tape;
    auto pure = tape.sum_all(make_tensor(1, 1, {1.234}, true));
    auto obj = leap_objective(tape, pure, bank, LambdaMode::adaptive);
    CHECK(obj.total->scalar() == pure->scalar());
    CHECK(obj.state.reg_loss_value == 0.0);
    CHECK(obj.state.lambda_reg == bank.lambda_min);

    tape.backward(obj.total);
    for (double g : bank.sigma->grad) CHECK(g == 0.0);
}

TEST_CASE("regularizer gradient matches the analytic formula and finite differences") {
    auto bank = toy_bank(32.0, 0.1);
    Rng rng(12);
    for (auto& v : bank.sigma->values) v = rng.uniform(-40.0, 160.0);

    const double ratio = remaining_ratio(bank);
    REQUIRE(ratio > bank.target_ratio);
    const double lambda = adaptive_lambda(sparsity_reg_loss(ratio, bank.target_ratio), bank);

    Tape tape;
    auto pure = tape.sum_all(make_scalar(0.0)); // isolates the regularizer path
    auto obj = leap_objective(tape, pure, bank, LambdaMode::constant, lambda);
    tape.backward(obj.total);

    auto weights = bank.count_weights();
    const double h = 1e-4;
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const double k = bank.density(i);
        const double analytic = lambda * 2.0 * (ratio - bank.target_ratio) * weights[i] * k *
                                (1.0 - k) / bank.temperature;
        CHECK(bank.sigma->grad[i] == doctest::Approx(analytic).epsilon(1e-9));

        // frozen-lambda finite difference of lambda * max(R - Rt, 0)^2
        const double saved = bank.sigma->values[i];
        bank.sigma->values[i] = saved + h;
        const double up = lambda * sparsity_reg_loss(remaining_ratio(bank), bank.target_ratio);
        bank.sigma->values[i] = saved - h;
        const double down = lambda * sparsity_reg_loss(remaining_ratio(bank), bank.target_ratio);
        bank.sigma->values[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        CHECK(oracle::grad_close(fd, bank.sigma->grad[i], 1e-6, 1e-12));
    }
}

TEST_CASE("equal thresholds and counts give equal regularizer gradients") {
    ThresholdBank bank(4, 16.0, 0.2, 320.0, 10.0, {64, 64, 64, 64});
    bank.fill_sigma(40.0);
    Tape tape;
    auto pure = tape.sum_all(make_scalar(0.0));
    auto obj = leap_objective(tape, pure, bank, LambdaMode::adaptive);
    tape.backward(obj.total);
    for (std::size_t i = 1; i < bank.size(); ++i) {
        CHECK(bank.sigma->grad[i] == bank.sigma->grad[0]);
    }
}

TEST_CASE("lambda input is detached: gradients change only by the multiplier") {
    auto bank = toy_bank(32.0, 0.1);
    bank.fill_sigma(20.0);

    auto grads_for = [&](double lambda) {
        for (auto& g : bank.sigma->grad) g = 0.0;
        Tape tape;
        auto pure = tape.sum_all(make_scalar(0.0));
        auto obj = leap_objective(tape, pure, bank, LambdaMode::constant, lambda);
        tape.backward(obj.total);
        return bank.sigma->grad;
    };

    const double reg = sparsity_reg_loss(remaining_ratio(bank), bank.target_ratio);
    const double lambda_a = adaptive_lambda(reg, bank);
    const double lambda_b = adaptive_lambda(reg + 0.01, bank); // perturbed detached input
    auto ga = grads_for(lambda_a);
    auto gb = grads_for(lambda_b);
    for (std::size_t i = 0; i < ga.size(); ++i) {
        CHECK(gb[i] == doctest::Approx(ga[i] * (lambda_b / lambda_a)).epsilon(1e-12));
    }
}

TEST_CASE("closed regularizer dynamics reach the target ratio") {
    auto bank = toy_bank(32.0, 0.1);
    const double lr = 30.0;
    auto weights = bank.count_weights();

    bool reached = false;
    long iters = 0;
    for (; iters < 200000; ++iters) {
        const double ratio = remaining_ratio(bank);
        if (std::fabs(ratio - bank.target_ratio) <= 1e-3) {
            reached = true;
            break;
        }
        const double reg = sparsity_reg_loss(ratio, bank.target_ratio);
        const double lambda = adaptive_lambda(reg, bank);
        const double excess = ratio > bank.target_ratio ? ratio - bank.target_ratio : 0.0;
        for (std::size_t i = 0; i < bank.size(); ++i) {
            const double k = bank.density(i);
            const double g =
                lambda * 2.0 * excess * weights[i] * k * (1.0 - k) / bank.temperature;
            bank.sigma->values[i] -= lr * g;
        }
    }
    INFO("iterations: ", iters);
    CHECK(reached);
}
