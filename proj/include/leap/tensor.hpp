// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "leap/errors.hpp"
#include "leap/rng.hpp"

namespace leap {

/// Dense row-major matrix of doubles with an optional gradient buffer.
/// Rank is at most 2; scalars are 1x1 and vectors 1xN.
class Tensor {
public:
    Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values.size(); }
    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& at(std::size_t r, std::size_t c) { return values[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols_ + c]; }
    double& grad_at(std::size_t r, std::size_t c) { return grad[r * cols_ + c]; }
    double grad_at(std::size_t r, std::size_t c) const { return grad[r * cols_ + c]; }

    double scalar() const;

    bool requires_grad = false;
    /// Set by the tape when this tensor is the output of a recorded op.
    bool from_op = false;

    void zero_grad();
    /// Throws if any stored value is NaN or infinite.
    void check_finite(const char* what) const;

    std::vector<double> values;
    std::vector<double> grad; // same length as values when requires_grad

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::size_t rows, std::size_t cols, bool requires_grad = false);
TensorPtr make_tensor(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad = false);
TensorPtr make_scalar(double value, bool requires_grad = false);

/// Weight initialization: uniform in (-a, a) with a = 1/sqrt(fan_in).
TensorPtr make_uniform_fanin(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng,
                             bool requires_grad = true);

/// Uniform in [lo, hi).
TensorPtr make_uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng,
                       bool requires_grad = true);

} // namespace leap
