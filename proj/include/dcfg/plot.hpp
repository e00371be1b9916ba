#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace dcfg {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<PlotSeries> series;
    /// Optional fixed y range; used when lo < hi.
    double y_lo = 0.0;
    double y_hi = 0.0;
    bool markers = true;
};

/// Self-contained SVG line chart. Output depends only on the argument.
std::string render_line_plot(const PlotSpec& spec);
void write_line_plot(const PlotSpec& spec, const std::filesystem::path& path);

}  // namespace dcfg
