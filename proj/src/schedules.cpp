// SPDX-License-Identifier: Apache-2.0
#include "leap/schedules.hpp"

#include <cmath>

namespace leap {

void ScheduleParams::validate() const {
    if (!(s0 >= 0.0 && s0 < 1.0)) throw ConfigError("schedule: s0 must lie in [0, 1)");
    if (!(sf > 0.0 && sf <= 1.0)) throw ConfigError("schedule: sf must lie in (0, 1]");
    if (s0 > sf) throw ConfigError("schedule: s0 must not exceed sf");
    if (tc < 0) throw ConfigError("schedule: cool-down steps must be nonnegative");
    if (!(t0 >= 0 && t0 < tf - tc)) {
        throw ConfigError("schedule: need 0 <= t0 < tf - tc");
    }
}

double cubic_sparsity(long t, const ScheduleParams& p) {
    p.validate();
    if (t < 0) throw ConfigError("schedule: step must be nonnegative");
    if (t < p.t0) return p.s0;
    const long ramp_end = p.tf - p.tc;
    if (t >= ramp_end) return p.sf;
    const double u = static_cast<double>(t - p.t0) / static_cast<double>(ramp_end - p.t0);
    const double rest = 1.0 - u;
    return p.sf + (p.s0 - p.sf) * rest * rest * rest;
}

MaskGrid magnitude_keep_mask(const Tensor& weight, double sparsity, BlockGeometry geometry) {
    if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
        throw InputError("magnitude mask: sparsity must lie in [0, 1]");
    }
    const std::size_t r = geometry.grid_rows(weight.rows());
    const std::size_t c = geometry.grid_cols(weight.cols());
    const std::size_t d = geometry.block;

    Tensor aggregate(r, c);
    for (std::size_t i = 0; i < weight.rows(); ++i) {
        for (std::size_t j = 0; j < weight.cols(); ++j) {
            aggregate.at(i / d, j / d) += std::fabs(weight.at(i, j));
        }
    }
    return topk_mask(aggregate, 1.0 - sparsity);
}

void magnitude_refresh(PrunableMatrix& p, double sparsity) {
    p.mask = magnitude_keep_mask(*p.weight, sparsity, p.geometry);
    p.stale = false;
}

void soft_threshold_refresh(PrunableMatrix& p, double threshold) {
    const std::size_t n = p.score->size();
    p.mask.rows = p.score->rows();
    p.mask.cols = p.score->cols();
    p.mask.bits.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = p.score->values[i];
        const double f = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        p.mask.bits[i] = f > threshold ? 1 : 0;
    }
    p.stale = false;
}

TensorPtr soft_threshold_penalty(Tape& tape, const std::vector<PrunableMatrix*>& matrices) {
    if (matrices.empty()) throw UsageError("soft threshold penalty: no matrices");
    std::size_t total = 0;
    TensorPtr acc;
    for (auto* p : matrices) {
        total += p->score->size();
        auto s = tape.sum_all(tape.sigmoid(p->score));
        acc = acc ? tape.add(acc, s) : s;
    }
    return tape.scale(acc, 1.0 / static_cast<double>(total));
}

} // namespace leap
