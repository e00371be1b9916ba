#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dcfg/evaluation.hpp"
#include "dcfg/run_config.hpp"

namespace dcfg {

struct AblationVariant {
    std::string label;
    /// Numeric position on the axis (N, g, or the row index).
    double x = 0.0;
    RunConfig config;
};

/// components: baseline / dccfg / dccfg_dcfg_loss
/// dcfg_loss:  without_dcfg_loss / with_dcfg_loss
/// groups:     n0 n1 n2 n4 n8 n16 (feature group count)
/// cfgb_groups: g1 g2 g4 g8 (pointwise group count inside the blocks)
std::vector<std::string> ablation_axes();
std::vector<AblationVariant> ablation_variants(const RunConfig& base, const std::string& axis);

struct AblationRow {
    std::string variant;
    double x = 0.0;
    int seed_index = 0;
    std::uint64_t seed = 0;
    MetricSummary aggregate;
    MetricSummary clean;
    MetricSummary distractor;
    double diversity = 0.0;
    int diversity_groups = 0;
    /// Mean total loss over the last 10% of steps.
    double final_loss = 0.0;
    /// Wall time of training plus evaluation; kept out of the CSV and table.
    double seconds = 0.0;
};

struct AblationOptions {
    int seeds = 3;
    /// When set, each run gets out_dir/runs/<variant>/seed_<k> with its
    /// config, training log, final checkpoint and evaluation report.
    std::filesystem::path out_dir;
    std::function<void(const std::string&)> log;
};

/// Trains and evaluates every variant for seeds base.seed, base.seed+1, ...
/// Variants share seeds, so rows with the same seed_index are paired.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& axis,
                                      const std::vector<SyntheticSequence>& suite, const AblationOptions& options);

/// One line per run followed by per-variant means over seeds.
std::string format_ablation_table(const std::vector<AblationRow>& rows);
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);
/// Seed-averaged precision, DI precision, success and diversity against x.
void write_ablation_plot(const std::vector<AblationRow>& rows, const std::string& axis,
                         const std::filesystem::path& path);

}  // namespace dcfg
