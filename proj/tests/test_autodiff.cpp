// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include <array>
#include <functional>
#include <vector>
#include "leap/rng.hpp"
#include "leap/tape.hpp"
#include "oracles.hpp"

using namespace leap;

namespace {

// Evaluates `build` from scratch and finite-difference checks the gradient of
// every entry of every parameter against one backward pass.
void check_gradients(const std::vector<TensorPtr>& params,
                     const std::function<TensorPtr(Tape&)>& build, double step = 1e-4,
                     double rel = 1e-4, double abs_floor = 1e-6) {
    Tape tape;
    auto loss = build(tape);
    tape.backward(loss);

    for (const auto& p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double saved = p->values[i];
            p->values[i] = saved + step;
            Tape tp(false);
            const double up = build(tp)->scalar();
            p->values[i] = saved - step;
            Tape tm(false);
            const double down = build(tm)->scalar();
            p->values[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            INFO("param entry ", i, " fd=", fd, " grad=", p->grad[i]);
            CHECK(oracle::grad_close(fd, p->grad[i], rel, abs_floor));
        }
    }
}

TensorPtr random_tensor(std::size_t r, std::size_t c, Rng& rng, bool grad = true) {
    auto t = make_tensor(r, c, grad);
    for (auto& v : t->values) v = rng.uniform(-1.0, 1.0);
    return t;
}

} // namespace

TEST_CASE("matmul identity and scalar cases") {
    Tape tape;
    auto eye = make_tensor(2, 2, {1, 0, 0, 1});
    auto b = make_tensor(2, 2, {3, 4, 5, 6});
    auto prod = tape.matmul(eye, b);
    CHECK(prod->values == std::vector<double>{3, 4, 5, 6});

    auto x = make_scalar(2.0);
    auto y = make_scalar(3.0);
    CHECK(tape.matmul(x, y)->values[0] == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle on random 3x4 by 4x2") {
    Rng rng(11);
    auto a = random_tensor(3, 4, rng, false);
    auto b = random_tensor(4, 2, rng, false);
    Tape tape;
    auto got = tape.matmul(a, b);
    auto want = oracle::matmul(a->values, b->values, 3, 4, 2);
    for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(std::fabs(got->values[i] - want[i]) <= 1e-12);
    }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Tape tape;
    auto a = make_tensor(2, 3);
    auto b = make_tensor(2, 3);
    CHECK_THROWS_AS(tape.matmul(a, b), DimensionError);
}

TEST_CASE("elementwise basics") {
    Tape tape;
    auto a = make_tensor(1, 2, {1, 2});
    auto b = make_tensor(1, 2, {3, 4});
    CHECK(tape.add(a, b)->values == std::vector<double>{4, 6});
    CHECK(tape.sub(b, a)->values == std::vector<double>{2, 2});
    CHECK(tape.mul(a, b)->values == std::vector<double>{3, 8});

    auto s = make_scalar(2.0);
    CHECK(tape.mul(a, s)->values == std::vector<double>{2, 4});
    CHECK(tape.add(s, b)->values == std::vector<double>{5, 6});

    auto c = make_tensor(2, 1, {1, 2});
    CHECK_THROWS_AS(tape.add(a, c), DimensionError);
}

TEST_CASE("sigmoid values against high-precision oracle") {
    Tape tape;
    auto x = make_tensor(1, 3, {0.0, 5.0, -5.0});
    auto y = tape.sigmoid(x);
    CHECK(y->values[0] == 0.5);
    CHECK(std::fabs(y->values[1] - 0.993307) <= 1e-6);
    CHECK(std::fabs(y->values[1] - oracle::sigmoid(5.0)) <= 1e-12);
    CHECK(std::fabs(y->values[2] - oracle::sigmoid(-5.0)) <= 1e-12);
}

TEST_CASE("cross entropy closed-form values") {
    Tape tape;
    auto uniform = make_tensor(1, 2, {0.7, 0.7});
    CHECK(tape.softmax_cross_entropy(uniform, {0})->scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    auto confident = make_tensor(1, 2, {10.0, -10.0});
    const double want = std::log1p(std::exp(-20.0)); // 2.0612e-9
    CHECK(tape.softmax_cross_entropy(confident, {0})->scalar() ==
          doctest::Approx(want).epsilon(1e-9));

    CHECK_THROWS_AS(tape.softmax_cross_entropy(confident, {2}), InputError);
    CHECK_THROWS_AS(tape.softmax_cross_entropy(confident, {-1}), InputError);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(7);
    auto logits = random_tensor(3, 4, rng);
    std::vector<int> labels{1, 3, 0};
    check_gradients({logits},
                    [&](Tape& t) { return t.softmax_cross_entropy(logits, labels); }, 1e-5,
                    1e-6, 1e-6);
}

TEST_CASE("kl divergence values and properties") {
    Tape tape;
    auto a = make_tensor(1, 2, {0.3, -0.2});
    CHECK(tape.kl_divergence(a, a, 1.0)->scalar() == doctest::Approx(0.0).epsilon(1e-15));

    // direct summation oracle for teacher [1,0], student [0,1]
    auto student = make_tensor(1, 2, {0.0, 1.0});
    auto teacher = make_tensor(1, 2, {1.0, 0.0});
    const double t0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    const double t1 = 1.0 / (std::exp(1.0) + 1.0);
    const double s0 = 1.0 / (1.0 + std::exp(1.0));
    const double s1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    const double want = t0 * std::log(t0 / s0) + t1 * std::log(t1 / s1);
    CHECK(std::fabs(tape.kl_divergence(student, teacher, 1.0)->scalar() - want) <= 1e-9);

    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        auto s = random_tensor(2, 5, rng, false);
        auto t = random_tensor(2, 5, rng, false);
        CHECK(tape.kl_divergence(s, t, 2.0)->scalar() >= -1e-15);
    }

    auto bad = make_tensor(1, 3);
    CHECK_THROWS_AS(tape.kl_divergence(student, bad, 1.0), DimensionError);
    CHECK_THROWS_AS(tape.kl_divergence(student, teacher, 0.0), ConfigError);
}

TEST_CASE("kl divergence gradients (both sides) match finite differences") {
    Rng rng(13);
    auto student = random_tensor(2, 3, rng);
    auto teacher = random_tensor(2, 3, rng);
    check_gradients({student, teacher},
                    [&](Tape& t) { return t.kl_divergence(student, teacher, 2.0); });
}

TEST_CASE("backward on linear and quadratic forms") {
    auto w = make_tensor(2, 2, {0.5, -1.0, 2.0, 0.25}, true);
    {
        Tape tape;
        auto loss = tape.sum_all(w);
        tape.backward(loss);
        for (double g : w->grad) CHECK(g == 1.0);
    }
    w->zero_grad();
    {
        Tape tape;
        auto loss = tape.scale(tape.sum_all(tape.mul(w, w)), 0.5);
        tape.backward(loss);
        for (std::size_t i = 0; i < w->size(); ++i) {
            CHECK(w->grad[i] == doctest::Approx(w->values[i]).epsilon(1e-15));
        }
    }
}

TEST_CASE("backward validates its input") {
    Tape tape;
    auto w = make_tensor(2, 2, true);
    auto y = tape.scale(w, 2.0);
    CHECK_THROWS_AS(tape.backward(y), UsageError);   // non-scalar
    CHECK_THROWS_AS(tape.backward(w), UsageError);   // leaf, not from an op
}

TEST_CASE("repeated backward accumulates leaf gradients") {
    auto w = make_tensor(1, 2, {1.0, 2.0}, true);
    Tape tape;
    auto loss = tape.scale(tape.sum_all(tape.mul(w, w)), 0.5); // grad = w
    tape.backward(loss);
    tape.backward(loss);
    CHECK(w->grad[0] == doctest::Approx(2.0 * w->values[0]).epsilon(1e-15));
    CHECK(w->grad[1] == doctest::Approx(2.0 * w->values[1]).epsilon(1e-15));
}

TEST_CASE("composite MLP gradient matches finite differences") {
    Rng rng(21);
    auto x = random_tensor(4, 3, rng, false);
    auto w1 = random_tensor(3, 5, rng);
    auto b1 = random_tensor(1, 5, rng);
    auto w2 = random_tensor(5, 2, rng);
    std::vector<int> labels{0, 1, 1, 0};

    check_gradients({w1, b1, w2}, [&](Tape& t) {
        auto h = t.relu(t.add_row_bias(t.matmul(x, w1), b1));
        auto logits = t.matmul(h, w2);
        return t.softmax_cross_entropy(logits, labels);
    });
}

TEST_CASE("structural and normalization ops match finite differences") {
    Rng rng(5);
    auto x = random_tensor(4, 6, rng);
    auto gamma = random_tensor(1, 6, rng);
    auto beta = random_tensor(1, 6, rng);
    auto table = random_tensor(7, 6, rng);
    std::vector<int> ids{3, 0, 6, 3};
    std::vector<double> weights;
    for (std::size_t i = 0; i < 24; ++i) weights.push_back(0.01 * static_cast<double>(i + 1));

    check_gradients({x, gamma, beta, table}, [&](Tape& t) {
        auto ln = t.layer_norm(x, gamma, beta);
        auto sm = t.row_softmax(t.slice(ln, 0, 4, 0, 4));
        auto emb = t.embedding_lookup(table, ids);
        auto joined = t.concat_cols(std::array<TensorPtr, 2>{sm, emb});
        auto stacked = t.concat_rows(std::array<TensorPtr, 2>{joined, joined});
        auto pooled = t.mean_pool_rows(stacked, 2);
        auto rep = t.repeat_rows(t.transpose(pooled), 2);
        auto gated = t.mul(t.sigmoid(rep), rep);
        return t.weighted_sum(gated, std::vector<double>(gated->size(), 0.5));
    });
}

TEST_CASE("backward through a tape is deterministic") {
    Rng rng(99);
    auto w1 = random_tensor(6, 6, rng);
    auto w2 = random_tensor(6, 3, rng);
    auto x = random_tensor(5, 6, rng, false);
    std::vector<int> labels{0, 2, 1, 0, 2};

    auto run = [&](std::vector<double>& g1, std::vector<double>& g2) {
        w1->zero_grad();
        w2->zero_grad();
        Tape t;
        auto loss = t.softmax_cross_entropy(t.matmul(t.relu(t.matmul(x, w1)), w2), labels);
        t.backward(loss);
        g1 = w1->grad;
        g2 = w2->grad;
    };
    std::vector<double> a1, a2, b1, b2;
    run(a1, a2);
    run(b1, b2);
    CHECK(std::memcmp(a1.data(), b1.data(), a1.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a2.data(), b2.data(), a2.size() * sizeof(double)) == 0);
}

TEST_CASE("recorded operations do not mutate their inputs") {
    Rng rng(42);
    auto a = random_tensor(3, 3, rng);
    auto b = random_tensor(3, 3, rng);
    const auto a_before = a->values;
    const auto b_before = b->values;

    Tape tape;
    auto out = tape.sum_all(tape.mul(tape.sigmoid(tape.matmul(a, b)), a));
    tape.backward(out);
    CHECK(a->values == a_before);
    CHECK(b->values == b_before);
}
