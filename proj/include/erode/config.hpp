#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "erode/attack.hpp"
#include "erode/harness.hpp"
#include "erode/train.hpp"

namespace erode {

struct ModelConfig {
    std::string name;
    ArchitectureSpec arch;
    std::uint64_t seed = 0;
};

// The fully validated experiment description. parse_config fills every
// default, rejects unknown keys, and the resolved form is echoed into every
// report so a run can be reproduced from its artifacts alone.
struct ExperimentConfig {
    // dataset
    std::uint64_t dataset_seed = 2024;
    int classes = 4;
    int per_class = 300;
    Shape shape{1, 16, 16};

    // zoo
    std::vector<ModelConfig> models;
    TrainConfig train;

    // attack
    double epsilon = 16.0;
    int iterations = 10;
    std::optional<double> alpha;  // defaults to epsilon / iterations
    double mu = 1.0;
    bool momentum = true;
    bool ti_enabled = false;
    int ti_size = 5;
    double ti_sigma = 3.0;
    std::uint64_t master_seed = 1234;
    std::map<std::string, ErosionSpec> erosion;  // per source model name

    // harness
    std::vector<std::vector<std::string>> sources;
    std::vector<std::string> targets;
    int eval_count = 200;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string out_dir = "out";
    bool emit_csv = true;
    bool emit_json = true;
    int workers = 1;
    int image_dump_count = 4;
    std::string sweep_param = "gamma";
    std::vector<double> sweep_grid{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    int sweep_loss_draws = 200;

    AttackSpec attack_spec() const;  // with the TI kernel materialized
    ErosionSpec erosion_for(const std::string& model_name) const;
    const ModelConfig& model_config(const std::string& name) const;
    json resolved() const;
    void validate() const;
};

// The built-in desk experiment: six source models (three plain, three
// residual) plus three held-out targets on a synthetic 4-class dataset.
ExperimentConfig default_config();

// Parses and validates a config JSON document; `overrides` carries CLI flag
// values which take precedence over the file, which beats the defaults.
ExperimentConfig parse_config_json(const json& document, const json& overrides = json::object());
ExperimentConfig parse_config_file(const std::string& path, const json& overrides = json::object());

}  // namespace erode
