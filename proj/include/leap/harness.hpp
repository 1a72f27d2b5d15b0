// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "leap/checkpoint.hpp"
#include "leap/model.hpp"
#include "leap/schedules.hpp"

namespace leap {

enum class Method { leap, leap_constant_lambda, hard_cubic, soft_constant };

Method method_from_name(const std::string& name);
std::string method_name(Method m);

/// Full description of one training run. Loaded from a JSON file; every field
/// has a default so partial configs are fine. validate() rejects bad values
/// with a field-named diagnostic.
struct RunConfig {
    std::string method = "leap";
    std::string profile = "s1";
    std::string task = "parity";
    double target_density = 0.10;
    double temperature = 32.0;
    double lambda_max = 320.0;
    double lambda_min = 10.0;
    /// Coefficient for the constant-lambda modes; 0 means "use lambda_max".
    double lambda_constant = 0.0;
    double alpha = 0.9;
    double distill_temperature = 1.0;
    long epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 17;
    double lr_weights = 0.1;
    /// Shared learning rate of the sigma/score group. Plain SGD at desk scale
    /// needs a far larger value here than adaptive optimizers would.
    double lr_thresholds = 400.0;
    /// Negative means "one epoch".
    long warmup_steps = -1;
    std::size_t train_examples = 6144;
    std::size_t eval_examples = 512;
    /// Baseline schedule; tf <= 0 resolves to the total step count, t0 < 0 to
    /// one epoch, tc < 0 to a tenth of the run, sf <= 0 to 1 - target_density.
    ScheduleParams schedule{0.0, 0.0, -1, -1, 0};
    ModelConfig model;
    std::string output_dir = "runs/out";
    std::string teacher_checkpoint;
    std::string init_checkpoint;
    long log_every = 20;
    double teacher_min_accuracy = 0.97;

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);
    nlohmann::ordered_json to_json() const;
    void validate() const;

    Method method_kind() const { return method_from_name(method); }
    TaskConfig task_config() const;
    double effective_lambda_constant() const {
        return lambda_constant > 0.0 ? lambda_constant : lambda_max;
    }
};

/// One metrics line. The wall-clock time goes to a timing sidecar so the
/// metrics stream itself is bit-reproducible.
struct MetricsRecord {
    long step = 0;
    long epoch = 0;
    double l_pure = 0.0;
    double l_reg = 0.0;
    double lambda_reg = 0.0;
    double r_sigma = 0.0;
    std::vector<double> densities;
    double train_acc = 0.0;
    std::optional<double> eval_acc;
    double objective = 0.0;
    double wall_ms = 0.0;
};

struct RunSummary {
    double final_eval_accuracy = 0.0;
    double final_r = 0.0;
    std::vector<std::string> matrix_names;
    std::vector<double> densities;
    long steps = 0;
    long epochs = 0;
    double final_l_pure = 0.0;
    double final_objective = 0.0;
    double wall_ms_total = 0.0;
    std::string checkpoint_path;
    bool converged = true; // teacher runs only
};

/// Train per the config; writes config.json, metrics.jsonl, timing.jsonl,
/// summary.json, and checkpoint.bin into the output directory.
RunSummary run_training(const RunConfig& config);

/// Train a dense model on the task until it clears teacher_min_accuracy
/// (early-stopping at an epoch boundary) and write teacher.bin. Throws
/// TrainingError with the final accuracy when it never converges.
RunSummary train_teacher(const RunConfig& config);

struct DensityRow {
    std::string name;
    long layer = 0;
    std::string sublayer;
    double density = 0.0;
};

struct GroupMean {
    long layer = 0;
    std::string sublayer;
    double density = 0.0;
};

struct DensityReport {
    std::vector<DensityRow> rows;
    std::vector<GroupMean> group_means; // count-weighted within the group
    double weighted_mean = 0.0;         // equals R(sigma)
};

DensityReport report_layer_densities(const std::string& checkpoint_path);
void write_density_csv(std::ostream& out, const DensityReport& report);

struct SweepRow {
    std::string value;
    bool ok = false;
    std::string error;
    RunSummary summary;
};

struct SweepResult {
    std::string axis;
    std::vector<SweepRow> rows;
};

/// One run per axis value (shared seed); failures are recorded per row and the
/// sweep continues. Writes sweep.csv under the template's output directory.
SweepResult sweep(const RunConfig& base, const std::string& axis,
                  const std::vector<std::string>& values);
void write_sweep_csv(std::ostream& out, const SweepResult& result);

} // namespace leap
