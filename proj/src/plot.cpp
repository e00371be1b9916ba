#include "dcfg/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "dcfg/tensor.hpp"

namespace dcfg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 160.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<':
                out += "&lt;";
                break;
            case '>':
                out += "&gt;";
                break;
            case '&':
                out += "&amp;";
                break;
            case '"':
                out += "&quot;";
                break;
            default:
                out += c;
        }
    }
    return out;
}

}  // namespace

std::string render_line_plot(const PlotSpec& spec) {
    double x_lo = std::numeric_limits<double>::infinity();
    double x_hi = -x_lo;
    double y_lo = x_lo;
    double y_hi = -x_lo;
    for (const PlotSeries& s : spec.series) {
        if (s.x.size() != s.y.size()) {
            throw ShapeError("plot: series '" + s.label + "' has mismatched x and y lengths");
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                x_lo = std::min(x_lo, s.x[i]);
                x_hi = std::max(x_hi, s.x[i]);
                y_lo = std::min(y_lo, s.y[i]);
                y_hi = std::max(y_hi, s.y[i]);
            }
        }
    }
    if (!std::isfinite(x_lo)) {
        x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
    }
    if (spec.y_lo < spec.y_hi) {
        y_lo = spec.y_lo;
        y_hi = spec.y_hi;
    }
    if (x_hi <= x_lo) {
        x_lo -= 0.5, x_hi += 0.5;
    }
    if (y_hi <= y_lo) {
        const double pad = std::max(std::abs(y_lo) * 0.05, 0.5);
        y_lo -= pad, y_hi += pad;
    }
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    auto sx = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * plot_w; };
    auto sy = [&](double y) { return kTop + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << px(kLeft + plot_w / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
        << escape(spec.title) << "</text>\n";
    svg << "<rect x=\"" << px(kLeft) << "\" y=\"" << px(kTop) << "\" width=\"" << px(plot_w) << "\" height=\""
        << px(plot_h) << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x_lo + (x_hi - x_lo) * i / 4.0;
        const double fy = y_lo + (y_hi - y_lo) * i / 4.0;
        svg << "<line x1=\"" << px(sx(fx)) << "\" y1=\"" << px(kTop) << "\" x2=\"" << px(sx(fx)) << "\" y2=\""
            << px(kTop + plot_h) << "\" stroke=\"#ddd\"/>\n";
        svg << "<line x1=\"" << px(kLeft) << "\" y1=\"" << px(sy(fy)) << "\" x2=\"" << px(kLeft + plot_w)
            << "\" y2=\"" << px(sy(fy)) << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << px(sx(fx)) << "\" y=\"" << px(kTop + plot_h + 16)
            << "\" text-anchor=\"middle\">" << num(fx) << "</text>\n";
        svg << "<text x=\"" << px(kLeft - 6) << "\" y=\"" << px(sy(fy) + 4) << "\" text-anchor=\"end\">"
            << num(fy) << "</text>\n";
    }
    svg << "<text x=\"" << px(kLeft + plot_w / 2) << "\" y=\"" << px(kHeight - 12)
        << "\" text-anchor=\"middle\">" << escape(spec.x_label) << "</text>\n";
    svg << "<text transform=\"translate(16," << px(kTop + plot_h / 2)
        << ") rotate(-90)\" text-anchor=\"middle\">" << escape(spec.y_label) << "</text>\n";

    for (std::size_t k = 0; k < spec.series.size(); ++k) {
        const PlotSeries& s = spec.series[k];
        const char* colour = kPalette[k % std::size(kPalette)];
        svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                svg << px(sx(s.x[i])) << ',' << px(sy(s.y[i])) << ' ';
            }
        }
        svg << "\"/>\n";
        if (spec.markers) {
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                    svg << "<circle cx=\"" << px(sx(s.x[i])) << "\" cy=\"" << px(sy(s.y[i]))
                        << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
                }
            }
        }
        const double ly = kTop + 12 + 18.0 * static_cast<double>(k);
        svg << "<line x1=\"" << px(kLeft + plot_w + 12) << "\" y1=\"" << px(ly) << "\" x2=\""
            << px(kLeft + plot_w + 32) << "\" y2=\"" << px(ly) << "\" stroke=\"" << colour
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << px(kLeft + plot_w + 38) << "\" y=\"" << px(ly + 4) << "\">" << escape(s.label)
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_line_plot(const PlotSpec& spec, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << render_line_plot(spec);
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

}  // namespace dcfg
