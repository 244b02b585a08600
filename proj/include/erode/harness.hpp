#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "erode/attack.hpp"
#include "erode/dataset.hpp"
#include "erode/model.hpp"

namespace erode {

using json = nlohmann::ordered_json;

// Source x target success-rate matrix with metadata; the harness's output.
struct TransferReport {
    std::vector<std::string> sources;
    std::vector<std::string> targets;
    std::vector<std::vector<double>> matrix;      // success rate in [0, 1]
    std::vector<std::vector<bool>> white_box;     // target is a source member
    std::vector<double> wall_time_s;              // attack time per source config
    std::vector<std::uint64_t> seeds;
    int eval_count = 0;
    json config_snapshot;
};

struct SweepPoint {
    double value = 0.0;
    double mean_black_box = 0.0;
    double mean_white_box = 0.0;
    double mean_clean_loss = 0.0;
    bool has_clean_loss = false;
};

struct SweepResult {
    std::string param;  // lambda_u | lambda_b | gamma
    std::vector<SweepPoint> points;
    std::vector<std::uint64_t> seeds;
    json config_snapshot;
};

enum class ReportFormat { Csv, Json };

// Eval-split indices whose clean prediction matches the label under every
// listed model. Throws SelectionError when the intersection is empty.
std::vector<int> select_correct(const std::vector<const Model*>& models, const Dataset& data);

// Per-example run_attack with master seeds derived from the dataset index,
// so rows are independent of batch order and worker count.
Tensor attack_batch(const EnsembleSpec& ensemble, const Dataset& data, const std::vector<int>& indices,
                    const AttackSpec& spec, int workers = 1);

// Fraction of adversarial examples the target misclassifies (clean forward).
double success_rate(const Model& target, const Tensor& adv_batch, const std::vector<int>& labels);

struct TransferOptions {
    int eval_count = 200;
    int workers = 1;
    std::vector<std::uint64_t> seeds{1};  // master seeds averaged per cell
};

TransferReport transfer_matrix(const std::vector<EnsembleSpec>& sources,
                               const std::vector<const Model*>& targets, const Dataset& data,
                               const AttackSpec& spec, const TransferOptions& options,
                               json config_snapshot = json::object());

// Reruns the transfer experiment for each grid value of one erosion
// parameter; lambda_u sweeps also record the mean clean loss per value.
SweepResult sweep_erosion_param(const std::vector<EnsembleSpec>& sources,
                                const std::vector<const Model*>& targets, const Dataset& data,
                                const AttackSpec& spec, const std::string& param,
                                const std::vector<double>& grid, const TransferOptions& options,
                                int loss_draws = 200, json config_snapshot = json::object());

// Mean clean-data loss of eroded virtual models per lambda_u grid value,
// isolating the uniform stage: DsneResidual with gamma=1 for residual
// models, DsnePlain with lambda_b=0 for plain ones.
std::vector<std::pair<double, double>> clean_loss_curve(const Model& model, const Dataset& data,
                                                        const std::vector<double>& grid, int draws,
                                                        std::uint64_t seed = 0, int workers = 1);

void write_report(const TransferReport& report, const std::string& path, ReportFormat format);
void write_report(const SweepResult& result, const std::string& path, ReportFormat format);
TransferReport read_transfer_report(const std::string& path);
SweepResult read_sweep_result(const std::string& path);

// Wall times are not reproducible across runs, so they live in a sidecar
// file rather than the deterministic report artifacts.
void write_timing(const TransferReport& report, const std::string& path);

}  // namespace erode
