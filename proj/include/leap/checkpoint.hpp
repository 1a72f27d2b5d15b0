// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "leap/model.hpp"

namespace leap {

/// Little-endian binary checkpoint:
///
///   magic "LPCK" | u32 version | u32 meta_len | meta (JSON, UTF-8)
///   u32 tensor_count | per tensor: u16 name_len, name, u32 rows, u32 cols
///   tensor payloads, row-major f64, in table order
///   u32 sigma_count | sigma payload (f64)
///   u32 score_count | per score: u16 name_len, name, u32 rows, u32 cols
///   score payloads, row-major f64, in table order
///
/// The meta JSON carries the model dimensions, granularity profile, threshold
/// hyperparameters, and the prunable-matrix table (name, layer, sub-layer,
/// element count). Dense (teacher) checkpoints have zero sigma and score
/// entries.
struct CheckpointData {
    nlohmann::ordered_json meta;
    std::vector<std::pair<std::string, TensorPtr>> tensors;
    std::vector<double> sigma;
    std::vector<std::pair<std::string, TensorPtr>> scores;

    bool has_thresholds() const { return !sigma.empty(); }
};

void save_checkpoint(const std::string& path, ToyModel& model, const ThresholdBank* bank,
                     const nlohmann::ordered_json& extra_meta = {});

CheckpointData load_checkpoint(const std::string& path);

/// Rebuild a model (dimensions and profile from the meta) and copy every
/// stored tensor into it. Scores are restored when present.
ToyModel model_from_checkpoint(const CheckpointData& data);

/// Restore only the named parameter tensors into an existing model (used to
/// warm-start a student from a dense teacher). Scores and sigma are left as
/// they are.
void load_parameters_into(ToyModel& model, const CheckpointData& data);

/// Bank with the checkpoint's temperature/target/lambda settings and sigma.
ThresholdBank bank_from_checkpoint(const CheckpointData& data);

} // namespace leap
