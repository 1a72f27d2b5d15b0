// SPDX-License-Identifier: Apache-2.0
#include "leap/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace leap {

namespace {

// c += a * b, fixed i-k-j order so each output element accumulates in a
// deterministic sequence.
void matmul_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// c += a * b^T  (a: m x n, b: k x n, c: m x k)
void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* crow = c + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const double* brow = b + l * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                acc += arow[j] * brow[j];
            }
            crow[l] += acc;
        }
    }
}

// c += a^T * b  (a: m x k, b: m x n, c: k x n)
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            double* crow = c + l * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

enum class EwKind { add, sub, mul };

} // namespace

TensorPtr Tape::make_output(std::size_t rows, std::size_t cols, bool tracked) {
    return std::make_shared<Tensor>(rows, cols, tracked);
}

void Tape::check_finite_values(const Tensor& t, const char* op) {
    for (double v : t.values) {
        if (!std::isfinite(v)) {
            throw TrainingError(std::string("non-finite value produced by ") + op);
        }
    }
}

void Tape::record(TensorPtr out, std::function<void()> backward_fn) {
    out->from_op = true;
    if (recording_) {
        nodes_.push_back(Node{std::move(out), std::move(backward_fn)});
    }
}

TensorPtr Tape::matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->cols() != b->rows()) {
        throw DimensionError("matmul: inner dimensions disagree (" + std::to_string(a->cols()) +
                             " vs " + std::to_string(b->rows()) + ")");
    }
    const std::size_t m = a->rows(), k = a->cols(), n = b->cols();
    const bool tracked = recording_ && (a->requires_grad || b->requires_grad);
    auto out = make_output(m, n, tracked);
    matmul_acc(a->values.data(), b->values.data(), out->values.data(), m, k, n);
    check_finite_values(*out, "matmul");
    if (!tracked) return out;

    record(out, [a, b, out, m, k, n] {
        if (a->requires_grad) {
            matmul_nt_acc(out->grad.data(), b->values.data(), a->grad.data(), m, n, k);
        }
        if (b->requires_grad) {
            matmul_tn_acc(a->values.data(), out->grad.data(), b->grad.data(), m, k, n);
        }
    });
    return out;
}

TensorPtr Tape::transpose(const TensorPtr& a) {
    const std::size_t m = a->rows(), n = a->cols();
    const bool tracked = recording_ && a->requires_grad;
    auto out = make_output(n, m, tracked);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out->values[j * m + i] = a->values[i * n + j];
        }
    }
    if (!tracked) return out;
    record(out, [a, out, m, n] {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                a->grad[i * n + j] += out->grad[j * m + i];
            }
        }
    });
    return out;
}

namespace {

void check_ew_shapes(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b) && !a.is_scalar() && !b.is_scalar()) {
        throw DimensionError(std::string(op) +
                             ": shapes differ and neither operand is a scalar");
    }
}

} // namespace

// Shared elementwise forward/backward for add/sub/mul with 1x1 broadcasting.
static TensorPtr elementwise(Tape& tape, bool recording, const TensorPtr& a, const TensorPtr& b,
                             EwKind kind, const char* name) {
    check_ew_shapes(*a, *b, name);
    const Tensor& big = a->is_scalar() && !b->is_scalar() ? *b : *a;
    const std::size_t rows = big.rows(), cols = big.cols(), size = rows * cols;
    const bool a_scalar = a->is_scalar() && size > 1;
    const bool b_scalar = b->is_scalar() && size > 1;
    const bool tracked = recording && (a->requires_grad || b->requires_grad);
    auto out = std::make_shared<Tensor>(rows, cols, tracked);

    for (std::size_t i = 0; i < size; ++i) {
        const double av = a_scalar ? a->values[0] : a->values[i];
        const double bv = b_scalar ? b->values[0] : b->values[i];
        switch (kind) {
        case EwKind::add: out->values[i] = av + bv; break;
        case EwKind::sub: out->values[i] = av - bv; break;
        case EwKind::mul: out->values[i] = av * bv; break;
        }
    }
    out->check_finite(name);
    if (!tracked) return out;

    tape.record(out, [a, b, out, kind, a_scalar, b_scalar, size] {
        for (std::size_t i = 0; i < size; ++i) {
            const double g = out->grad[i];
            const double av = a_scalar ? a->values[0] : a->values[i];
            const double bv = b_scalar ? b->values[0] : b->values[i];
            double ga = 0.0, gb = 0.0;
            switch (kind) {
            case EwKind::add: ga = g; gb = g; break;
            case EwKind::sub: ga = g; gb = -g; break;
            case EwKind::mul: ga = g * bv; gb = g * av; break;
            }
            if (a->requires_grad) a->grad[a_scalar ? 0 : i] += ga;
            if (b->requires_grad) b->grad[b_scalar ? 0 : i] += gb;
        }
    });
    return out;
}

TensorPtr Tape::add(const TensorPtr& a, const TensorPtr& b) {
    return elementwise(*this, recording_, a, b, EwKind::add, "add");
}

TensorPtr Tape::sub(const TensorPtr& a, const TensorPtr& b) {
    return elementwise(*this, recording_, a, b, EwKind::sub, "sub");
}

TensorPtr Tape::mul(const TensorPtr& a, const TensorPtr& b) {
    return elementwise(*this, recording_, a, b, EwKind::mul, "mul");
}

TensorPtr Tape::scale(const TensorPtr& a, double c) {
    const bool tracked = recording_ && a->requires_grad;
    auto out = make_output(a->rows(), a->cols(), tracked);
    for (std::size_t i = 0; i < a->size(); ++i) {
        out->values[i] = a->values[i] * c;
    }
    check_finite_values(*out, "scale");
    if (!tracked) return out;
    record(out, [a, out, c] {
        for (std::size_t i = 0; i < a->size(); ++i) {
            a->grad[i] += c * out->grad[i];
        }
    });
    return out;
}

TensorPtr Tape::sigmoid(const TensorPtr& a) {
    const bool tracked = recording_ && a->requires_grad;
    auto out = make_output(a->rows(), a->cols(), tracked);
    for (std::size_t i = 0; i < a->size(); ++i) {
        const double x = a->values[i];
        // Branch keeps exp() argument non-positive for stability.
        out->values[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                  : std::exp(x) / (1.0 + std::exp(x));
    }
    if (!tracked) return out;
    record(out, [a, out] {
        for (std::size_t i = 0; i < a->size(); ++i) {
            const double y = out->values[i];
            a->grad[i] += out->grad[i] * y * (1.0 - y);
        }
    });
    return out;
}

TensorPtr Tape::relu(const TensorPtr& a) {
    const bool tracked = recording_ && a->requires_grad;
    auto out = make_output(a->rows(), a->cols(), tracked);
    for (std::size_t i = 0; i < a->size(); ++i) {
        out->values[i] = a->values[i] > 0.0 ? a->values[i] : 0.0;
    }
    if (!tracked) return out;
    record(out, [a, out] {
        for (std::size_t i = 0; i < a->size(); ++i) {
            if (a->values[i] > 0.0) {
                a->grad[i] += out->grad[i];
            }
        }
    });
    return out;
}

TensorPtr Tape::add_row_bias(const TensorPtr& x, const TensorPtr& bias) {
    if (bias->rows() != 1 || bias->cols() != x->cols()) {
        throw DimensionError("add_row_bias: bias must be 1 x cols(x)");
    }
    const std::size_t rows = x->rows(), cols = x->cols();
    const bool tracked = recording_ && (x->requires_grad || bias->requires_grad);
    auto out = make_output(rows, cols, tracked);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out->values[i * cols + j] = x->values[i * cols + j] + bias->values[j];
        }
    }
    if (!tracked) return out;
    record(out, [x, bias, out, rows, cols] {
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                const double g = out->grad[i * cols + j];
                if (x->requires_grad) x->grad[i * cols + j] += g;
                if (bias->requires_grad) bias->grad[j] += g;
            }
        }
    });
    return out;
}

TensorPtr Tape::slice(const TensorPtr& x, std::size_t r0, std::size_t nrows, std::size_t c0,
                      std::size_t ncols) {
    if (r0 + nrows > x->rows() || c0 + ncols > x->cols() || nrows == 0 || ncols == 0) {
        throw DimensionError("slice: window out of bounds");
    }
    const std::size_t xc = x->cols();
    const bool tracked = recording_ && x->requires_grad;
    auto out = make_output(nrows, ncols, tracked);
    for (std::size_t i = 0; i < nrows; ++i) {
        const double* src = x->values.data() + (r0 + i) * xc + c0;
        std::copy(src, src + ncols, out->values.data() + i * ncols);
    }
    if (!tracked) return out;
    record(out, [x, out, r0, c0, nrows, ncols, xc] {
        for (std::size_t i = 0; i < nrows; ++i) {
            double* dst = x->grad.data() + (r0 + i) * xc + c0;
            const double* src = out->grad.data() + i * ncols;
            for (std::size_t j = 0; j < ncols; ++j) {
                dst[j] += src[j];
            }
        }
    });
    return out;
}

TensorPtr Tape::concat_rows(std::span<const TensorPtr> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t cols = parts[0]->cols();
    std::size_t rows = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p->cols() != cols) throw DimensionError("concat_rows: column counts differ");
        rows += p->rows();
        any_grad = any_grad || p->requires_grad;
    }
    const bool tracked = recording_ && any_grad;
    auto out = make_output(rows, cols, tracked);
    std::size_t r = 0;
    for (const auto& p : parts) {
        std::copy(p->values.begin(), p->values.end(), out->values.begin() + r * cols);
        r += p->rows();
    }
    if (!tracked) return out;
    std::vector<TensorPtr> held(parts.begin(), parts.end());
    record(out, [held = std::move(held), out, cols] {
        std::size_t r = 0;
        for (const auto& p : held) {
            if (p->requires_grad) {
                const double* src = out->grad.data() + r * cols;
                for (std::size_t i = 0; i < p->size(); ++i) {
                    p->grad[i] += src[i];
                }
            }
            r += p->rows();
        }
    });
    return out;
}

TensorPtr Tape::concat_cols(std::span<const TensorPtr> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t rows = parts[0]->rows();
    std::size_t cols = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p->rows() != rows) throw DimensionError("concat_cols: row counts differ");
        cols += p->cols();
        any_grad = any_grad || p->requires_grad;
    }
    const bool tracked = recording_ && any_grad;
    auto out = make_output(rows, cols, tracked);
    std::size_t c = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p->cols();
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy(p->values.begin() + i * pc, p->values.begin() + (i + 1) * pc,
                      out->values.begin() + i * cols + c);
        }
        c += pc;
    }
    if (!tracked) return out;
    std::vector<TensorPtr> held(parts.begin(), parts.end());
    record(out, [held = std::move(held), out, rows, cols] {
        std::size_t c = 0;
        for (const auto& p : held) {
            const std::size_t pc = p->cols();
            if (p->requires_grad) {
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < pc; ++j) {
                        p->grad[i * pc + j] += out->grad[i * cols + c + j];
                    }
                }
            }
            c += pc;
        }
    });
    return out;
}

TensorPtr Tape::repeat_rows(const TensorPtr& x, std::size_t times) {
    if (times == 0) throw DimensionError("repeat_rows: times must be positive");
    const std::size_t rows = x->rows(), cols = x->cols();
    const bool tracked = recording_ && x->requires_grad;
    auto out = make_output(rows * times, cols, tracked);
    for (std::size_t t = 0; t < times; ++t) {
        std::copy(x->values.begin(), x->values.end(), out->values.begin() + t * rows * cols);
    }
    if (!tracked) return out;
    record(out, [x, out, rows, cols, times] {
        for (std::size_t t = 0; t < times; ++t) {
            const double* src = out->grad.data() + t * rows * cols;
            for (std::size_t i = 0; i < rows * cols; ++i) {
                x->grad[i] += src[i];
            }
        }
    });
    return out;
}

TensorPtr Tape::mean_pool_rows(const TensorPtr& x, std::size_t group) {
    if (group == 0 || x->rows() % group != 0) {
        throw DimensionError("mean_pool_rows: group must divide the row count");
    }
    const std::size_t out_rows = x->rows() / group, cols = x->cols();
    const double inv = 1.0 / static_cast<double>(group);
    const bool tracked = recording_ && x->requires_grad;
    auto out = make_output(out_rows, cols, tracked);
    for (std::size_t g = 0; g < out_rows; ++g) {
        double* dst = out->values.data() + g * cols;
        for (std::size_t r = 0; r < group; ++r) {
            const double* src = x->values.data() + (g * group + r) * cols;
            for (std::size_t j = 0; j < cols; ++j) {
                dst[j] += src[j];
            }
        }
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j] *= inv;
        }
    }
    if (!tracked) return out;
    record(out, [x, out, out_rows, cols, group, inv] {
        for (std::size_t g = 0; g < out_rows; ++g) {
            const double* src = out->grad.data() + g * cols;
            for (std::size_t r = 0; r < group; ++r) {
                double* dst = x->grad.data() + (g * group + r) * cols;
                for (std::size_t j = 0; j < cols; ++j) {
                    dst[j] += src[j] * inv;
                }
            }
        }
    });
    return out;
}

TensorPtr Tape::embedding_lookup(const TensorPtr& table, const std::vector<int>& ids) {
    const std::size_t vocab = table->rows(), dim = table->cols();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw InputError("embedding_lookup: token index " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(vocab));
        }
    }
    if (ids.empty()) throw DimensionError("embedding_lookup: empty index list");
    const bool tracked = recording_ && table->requires_grad;
    auto out = make_output(ids.size(), dim, tracked);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = table->values.data() + static_cast<std::size_t>(ids[i]) * dim;
        std::copy(src, src + dim, out->values.data() + i * dim);
    }
    if (!tracked) return out;
    record(out, [table, out, ids, dim] {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double* dst = table->grad.data() + static_cast<std::size_t>(ids[i]) * dim;
            const double* src = out->grad.data() + i * dim;
            for (std::size_t j = 0; j < dim; ++j) {
                dst[j] += src[j];
            }
        }
    });
    return out;
}

TensorPtr Tape::sum_all(const TensorPtr& x) {
    const bool tracked = recording_ && x->requires_grad;
    auto out = make_output(1, 1, tracked);
    double acc = 0.0;
    for (double v : x->values) acc += v;
    out->values[0] = acc;
    check_finite_values(*out, "sum_all");
    if (!tracked) return out;
    record(out, [x, out] {
        const double g = out->grad[0];
        for (double& gv : x->grad) gv += g;
    });
    return out;
}

TensorPtr Tape::weighted_sum(const TensorPtr& x, std::vector<double> weights) {
    if (weights.size() != x->size()) {
        throw DimensionError("weighted_sum: weight count does not match tensor size");
    }
    const bool tracked = recording_ && x->requires_grad;
    auto out = make_output(1, 1, tracked);
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i] * x->values[i];
    }
    out->values[0] = acc;
    check_finite_values(*out, "weighted_sum");
    if (!tracked) return out;
    record(out, [x, out, weights = std::move(weights)] {
        const double g = out->grad[0];
        for (std::size_t i = 0; i < weights.size(); ++i) {
            x->grad[i] += weights[i] * g;
        }
    });
    return out;
}

TensorPtr Tape::row_softmax(const TensorPtr& x) {
    const std::size_t rows = x->rows(), cols = x->cols();
    const bool tracked = recording_ && x->requires_grad;
    auto out = make_output(rows, cols, tracked);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* src = x->values.data() + i * cols;
        double* dst = out->values.data() + i * cols;
        const double m = *std::max_element(src, src + cols);
        double denom = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j] = std::exp(src[j] - m);
            denom += dst[j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j] /= denom;
        }
    }
    if (!tracked) return out;
    record(out, [x, out, rows, cols] {
        for (std::size_t i = 0; i < rows; ++i) {
            const double* p = out->values.data() + i * cols;
            const double* gp = out->grad.data() + i * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                dot += gp[j] * p[j];
            }
            double* gx = x->grad.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) {
                gx[j] += p[j] * (gp[j] - dot);
            }
        }
    });
    return out;
}

TensorPtr Tape::layer_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                           double eps) {
    const std::size_t rows = x->rows(), cols = x->cols();
    if (gamma->rows() != 1 || gamma->cols() != cols || beta->rows() != 1 ||
        beta->cols() != cols) {
        throw DimensionError("layer_norm: gamma/beta must be 1 x cols(x)");
    }
    const bool tracked =
        recording_ && (x->requires_grad || gamma->requires_grad || beta->requires_grad);
    auto out = make_output(rows, cols, tracked);
    // Saved normalized rows and inverse stddevs for the backward rule.
    auto xhat = std::make_shared<std::vector<double>>(rows * cols);
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* src = x->values.data() + i * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += src[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = src[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        double* xh = xhat->data() + i * cols;
        double* dst = out->values.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            xh[j] = (src[j] - mean) * is;
            dst[j] = gamma->values[j] * xh[j] + beta->values[j];
        }
    }
    check_finite_values(*out, "layer_norm");
    if (!tracked) return out;
    record(out, [x, gamma, beta, out, xhat, inv_std, rows, cols] {
        const double invc = 1.0 / static_cast<double>(cols);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* gy = out->grad.data() + i * cols;
            const double* xh = xhat->data() + i * cols;
            double mean_a = 0.0, mean_ax = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                const double a = gamma->values[j] * gy[j];
                mean_a += a;
                mean_ax += a * xh[j];
                if (gamma->requires_grad) gamma->grad[j] += gy[j] * xh[j];
                if (beta->requires_grad) beta->grad[j] += gy[j];
            }
            mean_a *= invc;
            mean_ax *= invc;
            if (x->requires_grad) {
                const double is = (*inv_std)[i];
                double* gx = x->grad.data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j) {
                    const double a = gamma->values[j] * gy[j];
                    gx[j] += is * (a - mean_a - xh[j] * mean_ax);
                }
            }
        }
    });
    return out;
}

TensorPtr Tape::softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels) {
    const std::size_t batch = logits->rows(), classes = logits->cols();
    if (labels.size() != batch) {
        throw DimensionError("softmax_cross_entropy: one label per logit row required");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw InputError("softmax_cross_entropy: label " + std::to_string(y) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
    }
    const bool tracked = recording_ && logits->requires_grad;
    auto out = make_output(1, 1, tracked);
    // log-sum-exp per row with max subtraction
    auto probs = std::make_shared<std::vector<double>>(batch * classes);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double* z = logits->values.data() + i * classes;
        const double m = *std::max_element(z, z + classes);
        double denom = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            denom += std::exp(z[j] - m);
        }
        const double lse = m + std::log(denom);
        loss += lse - z[static_cast<std::size_t>(labels[i])];
        double* p = probs->data() + i * classes;
        for (std::size_t j = 0; j < classes; ++j) {
            p[j] = std::exp(z[j] - lse);
        }
    }
    out->values[0] = loss / static_cast<double>(batch);
    check_finite_values(*out, "softmax_cross_entropy");
    if (!tracked) return out;
    record(out, [logits, out, probs, labels, batch, classes] {
        const double g = out->grad[0] / static_cast<double>(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            const double* p = probs->data() + i * classes;
            double* gz = logits->grad.data() + i * classes;
            for (std::size_t j = 0; j < classes; ++j) {
                const double onehot = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                gz[j] += g * (p[j] - onehot);
            }
        }
    });
    return out;
}

TensorPtr Tape::kl_divergence(const TensorPtr& student_logits, const TensorPtr& teacher_logits,
                              double temperature) {
    if (!student_logits->same_shape(*teacher_logits)) {
        throw DimensionError("kl_divergence: logit shapes differ");
    }
    if (!(temperature > 0.0)) {
        throw ConfigError("kl_divergence: temperature must be positive");
    }
    const std::size_t batch = student_logits->rows(), classes = student_logits->cols();
    const bool tracked =
        recording_ && (student_logits->requires_grad || teacher_logits->requires_grad);
    auto out = make_output(1, 1, tracked);

    // Log-softmax for both sides; teacher probabilities recovered by exp so that
    // vanished probabilities contribute exactly zero.
    auto log_s = std::make_shared<std::vector<double>>(batch * classes);
    auto log_t = std::make_shared<std::vector<double>>(batch * classes);
    auto row_kl = std::make_shared<std::vector<double>>(batch);
    auto log_softmax_rows = [&](const Tensor& z, std::vector<double>& dst) {
        for (std::size_t i = 0; i < batch; ++i) {
            const double* src = z.values.data() + i * classes;
            double m = -1e300;
            for (std::size_t j = 0; j < classes; ++j) {
                m = std::max(m, src[j] / temperature);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < classes; ++j) {
                denom += std::exp(src[j] / temperature - m);
            }
            const double lse = m + std::log(denom);
            for (std::size_t j = 0; j < classes; ++j) {
                dst[i * classes + j] = src[j] / temperature - lse;
            }
        }
    };
    log_softmax_rows(*student_logits, *log_s);
    log_softmax_rows(*teacher_logits, *log_t);

    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        double kl = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            const double lt = (*log_t)[i * classes + j];
            kl += std::exp(lt) * (lt - (*log_s)[i * classes + j]);
        }
        (*row_kl)[i] = kl;
        total += kl;
    }
    out->values[0] = total / static_cast<double>(batch);
    check_finite_values(*out, "kl_divergence");
    if (!tracked) return out;

    record(out, [student_logits, teacher_logits, out, log_s, log_t, row_kl, batch, classes,
                 temperature] {
        const double g = out->grad[0] / (static_cast<double>(batch) * temperature);
        for (std::size_t i = 0; i < batch; ++i) {
            for (std::size_t j = 0; j < classes; ++j) {
                const double lt = (*log_t)[i * classes + j];
                const double ls = (*log_s)[i * classes + j];
                const double t = std::exp(lt);
                if (student_logits->requires_grad) {
                    const double s = std::exp(ls);
                    student_logits->grad[i * classes + j] += g * (s - t);
                }
                if (teacher_logits->requires_grad) {
                    teacher_logits->grad[i * classes + j] += g * t * ((lt - ls) - (*row_kl)[i]);
                }
            }
        }
    });
    return out;
}

void Tape::backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw UsageError("backward: loss must be a scalar tensor");
    }
    if (!loss->from_op || !loss->requires_grad) {
        throw UsageError("backward: loss must be produced by recorded operations");
    }
    // Fresh intermediate gradients per traversal; leaf gradients accumulate.
    for (auto& node : nodes_) {
        node.out->zero_grad();
    }
    loss->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward_fn();
    }
}

void Tape::clear() {
    nodes_.clear();
}

} // namespace leap
