#include "dcfg/metrics.hpp"

#include <cmath>

namespace dcfg {

namespace {

void check_lengths(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    if (pred.empty() || pred.size() != gt.size()) {
        throw ShapeError("metrics: need equal, non-empty prediction and ground-truth lists (got " +
                         std::to_string(pred.size()) + " and " + std::to_string(gt.size()) + ")");
    }
}

constexpr int kNormIntervals = 50;
constexpr double kNormRange = 0.5;
constexpr int kOverlapThresholds = 21;

}  // namespace

double center_error(const BBox& pred, const BBox& gt) { return std::hypot(pred.cx - gt.cx, pred.cy - gt.cy); }

double precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt, double threshold) {
    check_lengths(pred, gt);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hits += center_error(pred[i], gt[i]) <= threshold;
    }
    return static_cast<double>(hits) / pred.size();
}

double norm_precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    check_lengths(pred, gt);
    std::vector<double> dist(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!(gt[i].w > 0.0) || !(gt[i].h > 0.0)) {
            throw ShapeError("norm_precision: ground-truth box " + std::to_string(i) + " has zero size");
        }
        dist[i] = std::hypot((pred[i].cx - gt[i].cx) / gt[i].w, (pred[i].cy - gt[i].cy) / gt[i].h);
    }
    // thresholds k * 0.5 / 50; the step-function area over 0.5 is the mean hit rate
    std::size_t hits = 0;
    for (int k = 0; k < kNormIntervals; ++k) {
        const double t = k * kNormRange / kNormIntervals;
        for (double d : dist) {
            hits += d <= t;
        }
    }
    return static_cast<double>(hits) / (static_cast<double>(kNormIntervals) * static_cast<double>(dist.size()));
}

double success_auc(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    check_lengths(pred, gt);
    std::vector<double> overlap(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        overlap[i] = iou(pred[i], gt[i]);
    }
    double total = 0.0;
    for (int k = 0; k + 1 < kOverlapThresholds; ++k) {
        const double t = k / static_cast<double>(kOverlapThresholds - 1);
        std::size_t hits = 0;
        for (double o : overlap) {
            hits += o >= t;
        }
        total += static_cast<double>(hits) / overlap.size();
    }
    return total / kOverlapThresholds;
}

}  // namespace dcfg
