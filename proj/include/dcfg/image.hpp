#pragma once

#include <vector>

#include "dcfg/tensor.hpp"

namespace dcfg {

/// Grayscale frame with values in [0,1], row-major. Pixel (x, y) covers the
/// continuous square [x, x+1) x [y, y+1).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int w, int h, double fill = 0.0);
    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double mean() const;
};

/// Square integer crop. The window's top-left frame pixel is `origin_x`,
/// `origin_y`; pixels outside the frame take the frame mean.
struct Patch {
    int origin_x = 0;
    int origin_y = 0;
    int size = 0;
    Tensor pixels;  // [1,size,size], standardised
};

/// Window of `size` pixels centred on (cx, cy). The centre is first clamped
/// into the frame. Values are standardised by the patch's own mean and
/// standard deviation (floored at one 8-bit grey level, 1/255).
Patch crop_patch(const Image& frame, double cx, double cy, int size);

}  // namespace dcfg
