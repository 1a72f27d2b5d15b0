// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "leap/masking.hpp"

namespace leap {

/// Parameters of the cubic sparsity ramp: hold s0 during warmup, ramp to sf
/// over [t0, tf - tc], hold sf through the cool-down tail.
struct ScheduleParams {
    double s0 = 0.0;
    double sf = 0.0;
    long t0 = 0;
    long tc = 0;
    long tf = 0;

    void validate() const;
};

double cubic_sparsity(long t, const ScheduleParams& p);

/// Hard-threshold baseline: block aggregate = sum of |w| per block, then Top-K
/// with keep fraction 1 - sparsity.
MaskGrid magnitude_keep_mask(const Tensor& weight, double sparsity, BlockGeometry geometry);

/// Refresh a prunable matrix from weight magnitudes instead of its scores.
void magnitude_refresh(PrunableMatrix& p, double sparsity);

/// Soft-threshold baseline: mask entry = 1 iff sigmoid(score) > threshold
/// (strict comparison).
void soft_threshold_refresh(PrunableMatrix& p, double threshold);

/// Score penalty of the soft-threshold baseline: mean of sigmoid over every
/// score entry of every matrix, built on the tape.
TensorPtr soft_threshold_penalty(Tape& tape, const std::vector<PrunableMatrix*>& matrices);

} // namespace leap
