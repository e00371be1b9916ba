#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dcfg {

/// A 1x1 (pointwise) convolution over an H x W map. `groups` = 1 is dense.
struct LayerCostSpec {
    std::int64_t height = 1;
    std::int64_t width = 1;
    std::int64_t in_channels = 1;
    std::int64_t out_channels = 1;
    std::int64_t groups = 1;

    /// Throws ShapeError unless every field is positive and the group count
    /// divides both channel counts.
    void validate() const;
};

/// Both counts are in elements, not bytes.
struct CostReport {
    std::int64_t flops = 0;
    std::int64_t mac = 0;
    double bound = 0.0;
    bool at_bound = false;
};

/// H*W*C_in*C_out / g.
std::int64_t flops(const LayerCostSpec& spec);

/// H*W*(C_in + C_out) + C_in*C_out / g: input and output maps plus weights.
std::int64_t mac(const LayerCostSpec& spec);

/// 2*sqrt(H*W*F) + F/(H*W), attained by a dense layer with C_in == C_out.
double mac_lower_bound(std::int64_t height, std::int64_t width, std::int64_t flops);

CostReport cost_report(const LayerCostSpec& spec);

/// Group count used by the feature blocks in this project.
inline constexpr std::int64_t kDefaultGroups = 8;

struct SweepRow {
    LayerCostSpec spec;
    CostReport report;
    bool default_groups = false;
};

/// Every (C_in, C_out, g) with g from `group_values` whose FLOPs equal
/// `flops_budget` exactly, sorted by MAC (ties by g, then C_in). An empty
/// result means the budget is not representable.
std::vector<SweepRow> sweep(std::int64_t height, std::int64_t width, std::int64_t flops_budget,
                            const std::vector<std::int64_t>& group_values);

std::string format_cost_table(const std::vector<SweepRow>& rows);
void write_cost_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

}  // namespace dcfg
