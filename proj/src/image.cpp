#include "dcfg/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dcfg {

Image::Image(int w, int h, double fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0), fill) {
    if (w < 1 || h < 1) {
        throw ShapeError("image dimensions must be positive");
    }
}

double Image::mean() const {
    return pixels.empty() ? 0.0 : std::accumulate(pixels.begin(), pixels.end(), 0.0) / pixels.size();
}

Patch crop_patch(const Image& frame, double cx, double cy, int size) {
    if (size < 1) {
        throw ShapeError("crop_patch: size must be positive");
    }
    if (!std::isfinite(cx) || !std::isfinite(cy)) {
        throw NumericError("crop_patch: non-finite centre");
    }
    cx = std::clamp(cx, 0.0, static_cast<double>(frame.width));
    cy = std::clamp(cy, 0.0, static_cast<double>(frame.height));
    Patch p;
    p.size = size;
    p.origin_x = static_cast<int>(std::lround(cx - size / 2.0));
    p.origin_y = static_cast<int>(std::lround(cy - size / 2.0));

    const double fill = frame.mean();
    std::vector<double> v(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y) {
        const int fy = p.origin_y + y;
        for (int x = 0; x < size; ++x) {
            const int fx = p.origin_x + x;
            const bool inside = fx >= 0 && fx < frame.width && fy >= 0 && fy < frame.height;
            v[static_cast<std::size_t>(y) * size + x] = inside ? frame.at(fx, fy) : fill;
        }
    }
    const double mu = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double ss = 0.0;
    for (double x : v) {
        ss += (x - mu) * (x - mu);
    }
    const double sd = std::max(std::sqrt(ss / v.size()), 1.0 / 255.0);
    for (double& x : v) {
        x = (x - mu) / sd;
    }
    p.pixels = Tensor::from({1, size, size}, std::move(v));
    return p;
}

}  // namespace dcfg
