// SPDX-License-Identifier: Apache-2.0
#include "leap/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace leap {

BlockGeometry::BlockGeometry(std::size_t d) : block(d) {
    if (d == 0) {
        throw DimensionError("block size must be positive");
    }
}

std::size_t BlockGeometry::grid_rows(std::size_t weight_rows) const {
    if (weight_rows % block != 0) {
        throw DimensionError("block size " + std::to_string(block) +
                             " does not divide weight rows " + std::to_string(weight_rows));
    }
    return weight_rows / block;
}

std::size_t BlockGeometry::grid_cols(std::size_t weight_cols) const {
    if (weight_cols % block != 0) {
        throw DimensionError("block size " + std::to_string(block) +
                             " does not divide weight cols " + std::to_string(weight_cols));
    }
    return weight_cols / block;
}

std::size_t MaskGrid::ones() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

MaskGrid topk_mask(const Tensor& score, double keep_fraction) {
    if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) {
        throw InputError("topk_mask: keep fraction must lie in [0, 1]");
    }
    for (double v : score.values) {
        if (!std::isfinite(v)) {
            throw InputError("topk_mask: scores must be finite");
        }
    }
    const std::size_t n = score.size();
    const auto kept = static_cast<std::size_t>(
        std::llround(keep_fraction * static_cast<double>(n)));

    MaskGrid mask;
    mask.rows = score.rows();
    mask.cols = score.cols();
    mask.bits.assign(n, 0);
    if (kept == 0) return mask;
    if (kept >= n) {
        std::fill(mask.bits.begin(), mask.bits.end(), std::uint8_t{1});
        return mask;
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (score.values[a] != score.values[b]) return score.values[a] > score.values[b];
        return a < b; // ties: lower flat index kept first
    });
    for (std::size_t i = 0; i < kept; ++i) {
        mask.bits[order[i]] = 1;
    }
    return mask;
}

std::vector<std::uint8_t> expand_block_mask(const MaskGrid& mask, BlockGeometry geometry,
                                            std::size_t weight_rows, std::size_t weight_cols) {
    const std::size_t d = geometry.block;
    if (mask.rows * d != weight_rows || mask.cols * d != weight_cols) {
        throw DimensionError("expand_block_mask: mask grid does not match weight shape");
    }
    std::vector<std::uint8_t> expanded(weight_rows * weight_cols);
    for (std::size_t r = 0; r < weight_rows; ++r) {
        const std::uint8_t* mrow = mask.bits.data() + (r / d) * mask.cols;
        std::uint8_t* erow = expanded.data() + r * weight_cols;
        for (std::size_t c = 0; c < weight_cols; ++c) {
            erow[c] = mrow[c / d];
        }
    }
    return expanded;
}

PrunableMatrix::PrunableMatrix(std::string name_, std::size_t layer_, SubLayer sublayer_,
                               TensorPtr weight_, TensorPtr score_, BlockGeometry geometry_,
                               std::size_t threshold_index_)
    : name(std::move(name_)), layer(layer_), sublayer(sublayer_), weight(std::move(weight_)),
      score(std::move(score_)), geometry(geometry_), threshold_index(threshold_index_) {
    const std::size_t r = geometry.grid_rows(weight->rows());
    const std::size_t c = geometry.grid_cols(weight->cols());
    if (score->rows() != r || score->cols() != c) {
        throw DimensionError("prunable matrix: score grid must be " + std::to_string(r) + "x" +
                             std::to_string(c));
    }
    mask.rows = r;
    mask.cols = c;
    mask.bits.assign(r * c, 1); // all-one initialization
    stale = true;
}

double PrunableMatrix::mask_density() const {
    return static_cast<double>(mask.ones()) / static_cast<double>(mask.bits.size());
}

void refresh_mask(PrunableMatrix& p, double keep_fraction) {
    p.mask = topk_mask(*p.score, keep_fraction);
    p.stale = false;
}

TensorPtr masked_forward(Tape& tape, PrunableMatrix& p, const TensorPtr& input,
                         const SigmaHook* hook) {
    if (p.stale) {
        throw UsageError("masked_forward: mask for '" + p.name +
                         "' is stale; refresh it before the forward pass");
    }
    if (input->cols() != p.weight->rows()) {
        throw DimensionError("masked_forward: input columns must equal weight rows");
    }
    const std::size_t m = input->rows();
    const std::size_t din = p.weight->rows();
    const std::size_t dout = p.weight->cols();

    auto expanded = std::make_shared<std::vector<std::uint8_t>>(
        expand_block_mask(p.mask, p.geometry, din, dout));

    // masked weight, kept for both the forward product and grad(input)
    auto masked = std::make_shared<std::vector<double>>(din * dout);
    for (std::size_t i = 0; i < din * dout; ++i) {
        (*masked)[i] = (*expanded)[i] ? p.weight->values[i] : 0.0;
    }

    const bool tracked = tape.recording() &&
                         (input->requires_grad || p.weight->requires_grad ||
                          (p.score && p.score->requires_grad) || (hook && hook->sigma));
    auto out = make_tensor(m, dout, tracked);
    {
        // out = input * masked
        for (std::size_t i = 0; i < m; ++i) {
            const double* xrow = input->values.data() + i * din;
            double* orow = out->values.data() + i * dout;
            for (std::size_t l = 0; l < din; ++l) {
                const double xv = xrow[l];
                const double* wrow = masked->data() + l * dout;
                for (std::size_t j = 0; j < dout; ++j) {
                    orow[j] += xv * wrow[j];
                }
            }
        }
    }
    out->check_finite("masked_forward");
    if (!tracked) return out;

    TensorPtr weight = p.weight;
    TensorPtr score = p.score;
    const BlockGeometry geometry = p.geometry;
    TensorPtr sigma = hook ? hook->sigma : nullptr;
    const std::size_t sigma_index = hook ? hook->index : 0;
    double dk_dsigma = 0.0;
    if (sigma) {
        const double t = hook->temperature;
        const double z = sigma->values[sigma_index] / t;
        const double k = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        dk_dsigma = k * (1.0 - k) / t;
    }

    tape.record(out, [input, weight, score, sigma, sigma_index, dk_dsigma, expanded, masked, out,
                      m, din, dout, geometry] {
        // grad(input) += dY * masked^T
        if (input->requires_grad) {
            for (std::size_t i = 0; i < m; ++i) {
                const double* gyrow = out->grad.data() + i * dout;
                double* girow = input->grad.data() + i * din;
                for (std::size_t l = 0; l < din; ++l) {
                    const double* wrow = masked->data() + l * dout;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < dout; ++j) {
                        acc += gyrow[j] * wrow[j];
                    }
                    girow[l] += acc;
                }
            }
        }

        const bool need_score = score && score->requires_grad;
        const bool need_sigma = static_cast<bool>(sigma);
        if (!weight->requires_grad && !need_score && !need_sigma) return;

        // G = input^T * dY, the standard (dense) weight gradient
        std::vector<double> g(din * dout, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double* xrow = input->values.data() + i * din;
            const double* gyrow = out->grad.data() + i * dout;
            for (std::size_t l = 0; l < din; ++l) {
                const double xv = xrow[l];
                double* grow = g.data() + l * dout;
                for (std::size_t j = 0; j < dout; ++j) {
                    grow[j] += xv * gyrow[j];
                }
            }
        }

        if (weight->requires_grad) {
            for (std::size_t i = 0; i < din * dout; ++i) {
                if ((*expanded)[i]) {
                    weight->grad[i] += g[i];
                }
            }
        }

        if (need_score || need_sigma) {
            // Straight-through: block sums of W ⊙ G over every block, kept or not.
            const std::size_t d = geometry.block;
            const std::size_t grid_cols = dout / d;
            double total = 0.0;
            for (std::size_t r = 0; r < din; ++r) {
                const double* wrow = weight->values.data() + r * dout;
                const double* grow = g.data() + r * dout;
                const std::size_t br = r / d;
                for (std::size_t c = 0; c < dout; ++c) {
                    const double contrib = wrow[c] * grow[c];
                    if (need_score) {
                        score->grad[br * grid_cols + c / d] += contrib;
                    }
                    total += contrib;
                }
            }
            if (need_sigma && sigma->requires_grad) {
                sigma->grad[sigma_index] += total * dk_dsigma;
            }
        }
    });
    return out;
}

MaskSet::MaskSet(std::vector<PrunableMatrix*> ms) : matrices(std::move(ms)) {
    std::set<const PrunableMatrix*> seen;
    for (const auto* p : matrices) {
        if (p == nullptr || !seen.insert(p).second) {
            throw UsageError("mask set must reference each prunable matrix exactly once");
        }
    }
}

void MaskSet::mark_all_stale() {
    for (auto* p : matrices) {
        p->stale = true;
    }
}

} // namespace leap
