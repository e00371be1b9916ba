#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcfg/losses.hpp"
#include "dcfg/track_model.hpp"

namespace dcfg {

/// Malformed configuration or command line; maps to the usage exit code.
class ConfigError : public Error {
public:
    using Error::Error;
};

struct OptimizerConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    /// Global gradient-norm ceiling; 0 disables clipping.
    double grad_clip = 0.0;
};

/// How training pairs are cut from the training sequences.
struct SamplingConfig {
    /// Search frame is 1..max_frame_gap frames after the template frame.
    int max_frame_gap = 10;
    /// Search window centre is displaced from the target by up to this many
    /// pixels per axis.
    double max_shift = 12.0;
};

struct EvalConfig {
    double center_threshold = 20.0;
    /// Template crops for the group-correlation measurement are taken every
    /// this many frames of each evaluation sequence.
    int diversity_every = 10;
    /// Group count used for that measurement when the model has fewer than two.
    int diversity_groups = 8;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::uint64_t suite_seed = 2024;
    /// Exported suite to read; empty means generate from suite_seed in memory.
    std::string data_dir;
    int steps = 2000;
    /// Checkpoint cadence in steps; 0 saves only the final weights.
    int checkpoint_every = 500;
    bool use_dcfg_loss = true;
    TrackerConfig tracker;
    LossConfig loss;
    OptimizerConfig optimizer;
    SamplingConfig sampling;
    EvalConfig eval;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys and wrong types throw
/// ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" to `j`. The key must already exist; the value is
/// parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults, then the optional JSON file, then the overrides in order.
RunConfig resolve_run_config(const std::filesystem::path& config_file, const std::vector<std::string>& overrides);

std::string to_string(NormMode mode);
NormMode norm_mode_from_string(const std::string& name);

}  // namespace dcfg
