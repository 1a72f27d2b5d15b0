// SPDX-License-Identifier: Apache-2.0
//
// Independent reference computations used by the test suites. Everything here
// deliberately avoids the library's own kernels: plain triple loops, full
// sorts, long-double series. Keep it that way so the oracles stay meaningful.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "leap/tensor.hpp"

namespace oracle {

// Plain i-j-k triple loop product, the classic textbook order.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) {
                acc += a[i * k + l] * b[l * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    return c;
}

// Long-double logistic, our high-precision sigmoid reference.
inline double sigmoid(double x) {
    const long double xl = x;
    return static_cast<double>(1.0L / (1.0L + std::exp(-xl)));
}

// Full-sort Top-K reference: keep the `kept` largest, lower flat index first.
inline std::vector<std::uint8_t> topk(const std::vector<double>& scores, std::size_t kept) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b]; // stable sort preserves index order on ties
    });
    std::vector<std::uint8_t> mask(scores.size(), 0);
    for (std::size_t i = 0; i < kept && i < scores.size(); ++i) {
        mask[order[i]] = 1;
    }
    return mask;
}

// Central finite difference of f at x with step h.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// True when grad matches a finite-difference estimate within rel (with an
// absolute floor for near-zero derivatives).
inline bool grad_close(double fd, double grad, double rel, double abs_floor) {
    const double diff = std::fabs(fd - grad);
    if (diff <= abs_floor) return true;
    return diff <= rel * std::max(std::fabs(fd), std::fabs(grad));
}

} // namespace oracle
