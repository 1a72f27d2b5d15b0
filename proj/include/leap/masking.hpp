// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "leap/tape.hpp"
#include "leap/tensor.hpp"

namespace leap {

/// Square d x d pruning blocks. d = 1 is unstructured pruning.
struct BlockGeometry {
    std::size_t block = 1;

    BlockGeometry() = default;
    explicit BlockGeometry(std::size_t d);

    std::size_t grid_rows(std::size_t weight_rows) const;
    std::size_t grid_cols(std::size_t weight_cols) const;
};

/// Binary mask on the block grid of one weight matrix.
struct MaskGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> bits; // rows*cols entries in {0,1}

    std::size_t ones() const;
};

/// Keep the round(keep_fraction * n) largest scores; ties broken by ascending
/// row-major flat index (the lower index wins a spot first).
MaskGrid topk_mask(const Tensor& score, double keep_fraction);

/// Replicate every grid entry over its d x d block.
std::vector<std::uint8_t> expand_block_mask(const MaskGrid& mask, BlockGeometry geometry,
                                            std::size_t weight_rows, std::size_t weight_cols);

/// One prunable weight matrix: weights, learnable importance scores at block
/// resolution, the current mask, and the index of its threshold in the bank.
struct PrunableMatrix {
    std::string name;
    std::size_t layer = 0;
    enum class SubLayer { mha, fc } sublayer = SubLayer::fc;

    TensorPtr weight; // d_in x d_out
    TensorPtr score;  // r x c
    BlockGeometry geometry;
    std::size_t threshold_index = 0;
    MaskGrid mask;
    bool stale = true;

    PrunableMatrix() = default;
    PrunableMatrix(std::string name, std::size_t layer, SubLayer sublayer, TensorPtr weight,
                   TensorPtr score, BlockGeometry geometry, std::size_t threshold_index);

    std::size_t element_count() const { return weight->size(); }
    /// Fraction of weights kept by the current mask.
    double mask_density() const;
};

/// Recompute the mask from the importance scores and clear the stale flag.
void refresh_mask(PrunableMatrix& p, double keep_fraction);

/// Couples a masked forward to one learnable threshold so the straight-through
/// keep-fraction gradient lands on sigma[index].
struct SigmaHook {
    TensorPtr sigma;
    std::size_t index = 0;
    double temperature = 1.0;
};

/// input (m x d_in) times the masked weight (expand(mask) ⊙ W), with the
/// straight-through backward contract:
///   grad(weight) = expanded_mask ⊙ G          (G = standard matmul backward)
///   grad(score)  = per-block sums of W ⊙ G    (Top-K treated as identity)
///   grad(sigma)  = sum over all blocks of the above, chained through
///                  dk/dsigma = k(1-k)/T       (only when `hook` is given)
TensorPtr masked_forward(Tape& tape, PrunableMatrix& p, const TensorPtr& input,
                         const SigmaHook* hook = nullptr);

/// All masks of a model, refreshed together once per optimization step.
struct MaskSet {
    std::vector<PrunableMatrix*> matrices;
    std::size_t refresh_count = 0;

    explicit MaskSet(std::vector<PrunableMatrix*> ms = {});

    template <typename KeepFn> // KeepFn: size_t index -> double keep fraction
    void refresh_all(KeepFn keep) {
        for (std::size_t i = 0; i < matrices.size(); ++i) {
            refresh_mask(*matrices[i], keep(i));
        }
        ++refresh_count;
    }
    void mark_all_stale();
};

} // namespace leap
