#pragma once

#include <string>
#include <vector>

#include "dcfg/tensor.hpp"

namespace dcfg {

enum class MaskMode {
    /// M = 1 - exp(-d^2 / 2 sigma^2) / (2 pi sigma^2), the Gaussian as written.
    unnormalized,
    /// M = 1 - exp(-d^2 / 2 sigma^2); the peak cell is fully suppressed.
    peak_normalized,
};

std::string to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& name);

/// Feature-map cell; `row` indexes H, `col` indexes W.
struct Peak {
    int row = 0;
    int col = 0;
    bool operator==(const Peak&) const = default;
};

struct SuppressionMask {
    Tensor grid;  // [H,W]
    Peak peak;
    double sigma = 2.0;
    MaskMode mode = MaskMode::peak_normalized;
};

struct PeakSearch {
    Peak peak;
    Tensor compressed;  // [1,H,W] channel mean of the searched group
};

/// Channel-mean compression followed by argmax. Ties resolve to the first
/// maximum in row-major order.
PeakSearch locate_peak(const Tensor& group);

/// Gaussian suppression mask centred on `peak`. Throws for sigma <= 0.
SuppressionMask build_mask(Peak peak, int height, int width, double sigma, MaskMode mode);

/// Template features split into N contiguous channel groups. Exactly one
/// group (mask_group) takes the spatial mask, the rest are scaled by alpha.
struct GroupedTemplateFeatures {
    std::vector<Tensor> groups;
    int mask_group = 0;
    double alpha = 0.7;
    std::vector<Tensor> compressed;  // channel mean of each group, [1,H,W]
    std::vector<Tensor> suppressed;  // filled by suppress()

    int size() const { return static_cast<int>(groups.size()); }
};

/// Group k owns channels [k*C/N, (k+1)*C/N).
GroupedTemplateFeatures partition_groups(const Tensor& features, int n_groups, int mask_group, double alpha);

/// mask * group for the mask group, alpha * group for every other group.
/// Stores the result in `features.suppressed` and returns it.
const std::vector<Tensor>& suppress(GroupedTemplateFeatures& features, const SuppressionMask& mask);

}  // namespace dcfg
