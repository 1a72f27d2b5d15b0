// SPDX-License-Identifier: Apache-2.0
#include "leap/tensor.hpp"

#include <cmath>
#include <string>

namespace leap {

Tensor::Tensor(std::size_t rows, std::size_t cols, bool req_grad)
    : requires_grad(req_grad), rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0) {
        throw DimensionError("tensor dimensions must be positive");
    }
    values.assign(rows * cols, 0.0);
    if (requires_grad) {
        grad.assign(rows * cols, 0.0);
    }
}

double Tensor::scalar() const {
    if (!is_scalar()) {
        throw UsageError("scalar() called on a non-scalar tensor");
    }
    return values[0];
}

void Tensor::zero_grad() {
    if (!grad.empty()) {
        std::fill(grad.begin(), grad.end(), 0.0);
    }
}

void Tensor::check_finite(const char* what) const {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw TrainingError(std::string("non-finite value in ") + what);
        }
    }
}

TensorPtr make_tensor(std::size_t rows, std::size_t cols, bool requires_grad) {
    return std::make_shared<Tensor>(rows, cols, requires_grad);
}

TensorPtr make_tensor(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
    auto t = std::make_shared<Tensor>(rows, cols, requires_grad);
    if (values.size() != rows * cols) {
        throw DimensionError("value count does not match tensor shape");
    }
    t->values = std::move(values);
    return t;
}

TensorPtr make_scalar(double value, bool requires_grad) {
    auto t = std::make_shared<Tensor>(1, 1, requires_grad);
    t->values[0] = value;
    return t;
}

TensorPtr make_uniform_fanin(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng,
                             bool requires_grad) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return make_uniform(rows, cols, -a, a, rng, requires_grad);
}

TensorPtr make_uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng,
                       bool requires_grad) {
    auto t = std::make_shared<Tensor>(rows, cols, requires_grad);
    for (double& v : t->values) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

} // namespace leap
