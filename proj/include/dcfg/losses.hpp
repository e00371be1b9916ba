#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dcfg/track_model.hpp"

namespace dcfg {

struct LossConfig {
    /// Weight of the unsuppressed tracking loss.
    double mu = 4.0;
    double lambda_iou = 1.0;
    double lambda_l1 = 1.0;
    double eps_corr = 1e-8;
    /// Cells within this Euclidean radius (in cells) of the target cell are positives.
    int positive_radius = 2;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double l_cfgb = 0.0;
    double l_norm = 0.0;
    double l_dcfg = 0.0;
    double l_cls = 0.0;  // of the unsuppressed head
    double l_reg = 0.0;
};

enum : std::int8_t { kNegative = 0, kPositive = 1, kIgnore = -1 };

/// Response-map labels, row-major over the grid.
struct LabelMap {
    int size = 0;
    std::vector<std::int8_t> labels;
    int center_row = 0;
    int center_col = 0;
};

/// `gt` is in search-patch coordinates.
LabelMap assign_labels(const ResponseGrid& grid, const BBox& gt, int radius);

/// Mean binary cross-entropy of sigmoid(logits) over non-ignored cells,
/// probabilities clamped to [1e-7, 1 - 1e-7]. Throws if every cell is ignored.
Tensor cls_loss(const Tensor& logits, std::span<const std::int8_t> labels);

/// Mean over positive cells of lambda_iou * (1 - IoU) + lambda_l1 * L1, where
/// L1 is the mean absolute corner difference divided by `search_size`.
/// Returns a zero constant when there are no positives.
Tensor reg_loss(const Tensor& reg, const ResponseGrid& grid, const BBox& gt, std::span<const std::int8_t> labels,
                double search_size, double lambda_iou, double lambda_l1);

struct TrackLoss {
    Tensor total;
    Tensor cls;
    Tensor reg;
};

TrackLoss track_loss(const HeadOutput& head, const BBox& gt, const ResponseGrid& grid, const LossConfig& cfg,
                     double search_size);

/// [N,N] Pearson correlations of the flattened maps, population statistics:
/// cov_ij / (sd_i * sd_j + eps).
Tensor corr_matrix(const std::vector<Tensor>& maps, double eps = 1e-8);

/// Frobenius norm of corr_matrix(maps) - I; zero for fewer than two maps.
Tensor dcfg_loss(const std::vector<Tensor>& maps, double eps = 1e-8);

/// Mean |off-diagonal| of corr_matrix(maps); 0 for fewer than two maps.
double mean_abs_offdiag(const std::vector<Tensor>& maps, double eps = 1e-8);

struct TotalLoss {
    Tensor total;
    LossBreakdown parts;
};

/// l_cfgb sums the tracking loss of every group head of every branch,
/// l_norm is the tracking loss of the fused unsuppressed output and l_dcfg
/// sums the diversity loss of each branch's group maps.
/// total = l_cfgb + mu * l_norm + l_dcfg.
TotalLoss total_loss(const PairForward& forward, const BBox& gt, const ResponseGrid& grid, const LossConfig& cfg,
                     double search_size, bool use_dcfg_loss = true);

}  // namespace dcfg
