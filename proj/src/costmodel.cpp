#include "dcfg/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dcfg/tensor.hpp"

namespace dcfg {

namespace {

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
    std::int64_t r = 0;
    if (__builtin_mul_overflow(a, b, &r)) {
        throw ShapeError("cost model: layer too large for 64-bit counts");
    }
    return r;
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
    std::int64_t r = 0;
    if (__builtin_add_overflow(a, b, &r)) {
        throw ShapeError("cost model: layer too large for 64-bit counts");
    }
    return r;
}

}  // namespace

void LayerCostSpec::validate() const {
    if (height < 1 || width < 1 || in_channels < 1 || out_channels < 1 || groups < 1) {
        throw ShapeError("cost model: all layer dimensions must be positive");
    }
    if (in_channels % groups != 0 || out_channels % groups != 0) {
        throw ShapeError("cost model: " + std::to_string(groups) + " groups do not divide " +
                         std::to_string(in_channels) + "->" + std::to_string(out_channels) + " channels");
    }
}

std::int64_t flops(const LayerCostSpec& s) {
    s.validate();
    const std::int64_t hw = checked_mul(s.height, s.width);
    return checked_mul(checked_mul(hw, s.in_channels), s.out_channels / s.groups);
}

std::int64_t mac(const LayerCostSpec& s) {
    s.validate();
    const std::int64_t hw = checked_mul(s.height, s.width);
    const std::int64_t maps = checked_mul(hw, checked_add(s.in_channels, s.out_channels));
    return checked_add(maps, checked_mul(s.in_channels, s.out_channels / s.groups));
}

double mac_lower_bound(std::int64_t height, std::int64_t width, std::int64_t f) {
    if (height < 1 || width < 1 || f < 1) {
        throw ShapeError("mac_lower_bound: H, W and F must be positive");
    }
    const double hw = static_cast<double>(height) * static_cast<double>(width);
    return 2.0 * std::sqrt(hw * static_cast<double>(f)) + static_cast<double>(f) / hw;
}

CostReport cost_report(const LayerCostSpec& spec) {
    CostReport r;
    r.flops = flops(spec);
    r.mac = mac(spec);
    r.bound = mac_lower_bound(spec.height, spec.width, r.flops);
    r.at_bound = std::abs(static_cast<double>(r.mac) - r.bound) <= 1e-9 * std::max(1.0, r.bound);
    return r;
}

std::vector<SweepRow> sweep(std::int64_t height, std::int64_t width, std::int64_t budget,
                            const std::vector<std::int64_t>& group_values) {
    if (height < 1 || width < 1 || budget < 1) {
        throw ShapeError("sweep: H, W and the FLOPs budget must be positive");
    }
    const std::int64_t hw = checked_mul(height, width);
    std::vector<SweepRow> rows;
    if (budget % hw != 0) {
        return rows;
    }
    // F = HW * C_in * (C_out / g), so C_in * C_out = (F / HW) * g
    const std::int64_t per_pixel = budget / hw;
    for (std::int64_t g : group_values) {
        if (g < 1) {
            throw ShapeError("sweep: group counts must be positive");
        }
        const std::int64_t product = checked_mul(per_pixel, g);
        for (std::int64_t cin = g; cin <= product; cin += g) {
            if (product % cin != 0) {
                continue;
            }
            const std::int64_t cout = product / cin;
            if (cout % g != 0) {
                continue;
            }
            SweepRow row;
            row.spec = LayerCostSpec{height, width, cin, cout, g};
            row.report = cost_report(row.spec);
            row.default_groups = g == kDefaultGroups;
            rows.push_back(row);
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.report.mac != b.report.mac) {
            return a.report.mac < b.report.mac;
        }
        if (a.spec.groups != b.spec.groups) {
            return a.spec.groups < b.spec.groups;
        }
        return a.spec.in_channels < b.spec.in_channels;
    });
    return rows;
}

std::string format_cost_table(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    char line[192];
    std::snprintf(line, sizeof line, "%5s %5s %7s %7s %4s %14s %12s %16s %8s\n", "H", "W", "C_in", "C_out", "g",
                  "FLOPs", "MAC", "bound", "note");
    out << line;
    if (rows.empty()) {
        out << "(no channel split meets the FLOPs budget)\n";
    }
    for (const SweepRow& r : rows) {
        std::string note = r.report.at_bound ? "balanced" : "";
        if (r.default_groups) {
            note += note.empty() ? "g=8" : ",g=8";
        }
        std::snprintf(line, sizeof line, "%5lld %5lld %7lld %7lld %4lld %14lld %12lld %16.3f %8s\n",
                      static_cast<long long>(r.spec.height), static_cast<long long>(r.spec.width),
                      static_cast<long long>(r.spec.in_channels), static_cast<long long>(r.spec.out_channels),
                      static_cast<long long>(r.spec.groups), static_cast<long long>(r.report.flops),
                      static_cast<long long>(r.report.mac), r.report.bound, note.c_str());
        out << line;
    }
    return out.str();
}

void write_cost_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "H,W,C_in,C_out,g,flops,mac,bound,at_bound,default_groups\n";
    char bound[64];
    for (const SweepRow& r : rows) {
        std::snprintf(bound, sizeof bound, "%.6f", r.report.bound);
        out << r.spec.height << ',' << r.spec.width << ',' << r.spec.in_channels << ',' << r.spec.out_channels << ','
            << r.spec.groups << ',' << r.report.flops << ',' << r.report.mac << ',' << bound << ','
            << (r.report.at_bound ? 1 : 0) << ',' << (r.default_groups ? 1 : 0) << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

}  // namespace dcfg
