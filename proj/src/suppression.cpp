#include "dcfg/suppression.hpp"

#include <cmath>
#include <numbers>

#include "dcfg/ops.hpp"

namespace dcfg {

std::string to_string(MaskMode mode) {
    return mode == MaskMode::unnormalized ? "unnormalized" : "peak_normalized";
}

MaskMode mask_mode_from_string(const std::string& name) {
    if (name == "unnormalized") {
        return MaskMode::unnormalized;
    }
    if (name == "peak_normalized") {
        return MaskMode::peak_normalized;
    }
    throw ShapeError("unknown mask mode '" + name + "' (expected unnormalized or peak_normalized)");
}

PeakSearch locate_peak(const Tensor& group) {
    Tensor compressed = channel_mean(group);
    const int w = group.dim(2);
    auto v = compressed.data();
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return {Peak{static_cast<int>(best) / w, static_cast<int>(best) % w}, compressed};
}

SuppressionMask build_mask(Peak peak, int height, int width, double sigma, MaskMode mode) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw ShapeError("build_mask: sigma must be positive, got " + std::to_string(sigma));
    }
    if (height < 1 || width < 1) {
        throw ShapeError("build_mask: empty grid");
    }
    const double two_var = 2.0 * sigma * sigma;
    const double amplitude = mode == MaskMode::unnormalized ? 1.0 / (std::numbers::pi * two_var) : 1.0;
    std::vector<double> grid(static_cast<std::size_t>(height) * width);
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            const double di = i - peak.row;
            const double dj = j - peak.col;
            grid[static_cast<std::size_t>(i) * width + j] = 1.0 - amplitude * std::exp(-(di * di + dj * dj) / two_var);
        }
    }
    return {Tensor::from({height, width}, std::move(grid)), peak, sigma, mode};
}

GroupedTemplateFeatures partition_groups(const Tensor& features, int n_groups, int mask_group, double alpha) {
    if (features.rank() != 3) {
        throw ShapeError("partition_groups: expected [C,H,W] features");
    }
    const int c = features.dim(0);
    if (n_groups < 1 || c % n_groups != 0) {
        throw ShapeError("partition_groups: " + std::to_string(n_groups) + " groups do not divide " +
                         std::to_string(c) + " channels");
    }
    if (mask_group < 0 || mask_group >= n_groups) {
        throw ShapeError("partition_groups: mask group index out of range");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ShapeError("partition_groups: alpha must lie in [0,1]");
    }
    GroupedTemplateFeatures out;
    out.mask_group = mask_group;
    out.alpha = alpha;
    const int per = c / n_groups;
    for (int k = 0; k < n_groups; ++k) {
        Tensor g = n_groups == 1 ? features : slice_channels(features, k * per, per);
        out.compressed.push_back(channel_mean(g));
        out.groups.push_back(std::move(g));
    }
    return out;
}

const std::vector<Tensor>& suppress(GroupedTemplateFeatures& features, const SuppressionMask& mask) {
    if (features.groups.empty()) {
        throw ShapeError("suppress: no feature groups");
    }
    if (!(features.alpha >= 0.0 && features.alpha <= 1.0)) {
        throw ShapeError("suppress: alpha must lie in [0,1]");
    }
    const Tensor& probe = features.groups.front();
    if (mask.grid.rank() != 2 || mask.grid.dim(0) != probe.dim(1) || mask.grid.dim(1) != probe.dim(2)) {
        throw ShapeError("suppress: mask " + shape_str(mask.grid.shape()) + " does not match features " +
                         shape_str(probe.shape()));
    }
    features.suppressed.clear();
    for (int k = 0; k < features.size(); ++k) {
        const Tensor& g = features.groups[static_cast<std::size_t>(k)];
        features.suppressed.push_back(k == features.mask_group ? mul(g, mask.grid) : mul(g, features.alpha));
    }
    return features.suppressed;
}

}  // namespace dcfg
