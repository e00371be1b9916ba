#pragma once

#include <vector>

#include "dcfg/track_model.hpp"

namespace dcfg {

inline constexpr double kDefaultCenterThreshold = 20.0;

/// Fraction of frames whose centre error is at most `threshold` pixels.
double precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt,
                 double threshold = kDefaultCenterThreshold);

/// Centre error divided per axis by the ground-truth width and height. The
/// success curve over thresholds 0, 0.01, ..., 0.5 is integrated as a step
/// function (left sums over 50 intervals) and divided by 0.5.
double norm_precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt);

/// Average over the 21 overlap thresholds 0, 0.05, ..., 1 of the fraction
/// of frames with IoU >= t. The threshold 1 is treated as never met, so
/// perfect tracking scores 20/21.
double success_auc(const std::vector<BBox>& pred, const std::vector<BBox>& gt);

double center_error(const BBox& pred, const BBox& gt);

}  // namespace dcfg
