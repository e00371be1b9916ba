#include "dcfg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dcfg {

namespace {

using Grads = std::vector<std::vector<double>>;

constexpr double kProbFloor = 1e-7;

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct MapStats {
    std::vector<double> centered;
    double sd = 0.0;
};

MapStats map_stats(std::span<const double> v) {
    MapStats s;
    double mu = 0.0;
    for (double x : v) {
        mu += x;
    }
    mu /= static_cast<double>(v.size());
    s.centered.resize(v.size());
    double ss = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s.centered[i] = v[i] - mu;
        ss += s.centered[i] * s.centered[i];
    }
    s.sd = std::sqrt(ss / static_cast<double>(v.size()));
    return s;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

}  // namespace

void LossConfig::validate() const {
    if (!(mu >= 0.0) || !(lambda_iou >= 0.0) || !(lambda_l1 >= 0.0)) {
        throw ShapeError("loss weights must be non-negative");
    }
    if (!(eps_corr > 0.0)) {
        throw ShapeError("eps_corr must be positive");
    }
    if (positive_radius < 0) {
        throw ShapeError("positive radius must be >= 0");
    }
}

LabelMap assign_labels(const ResponseGrid& grid, const BBox& gt, int radius) {
    if (radius < 0) {
        throw ShapeError("assign_labels: negative radius");
    }
    LabelMap m;
    m.size = grid.size;
    m.center_row = grid.nearest_cell(gt.cy);
    m.center_col = grid.nearest_cell(gt.cx);
    m.labels.assign(static_cast<std::size_t>(grid.size) * grid.size, kNegative);
    for (int i = 0; i < grid.size; ++i) {
        for (int j = 0; j < grid.size; ++j) {
            const int di = i - m.center_row;
            const int dj = j - m.center_col;
            if (di * di + dj * dj <= radius * radius) {
                m.labels[static_cast<std::size_t>(i) * grid.size + j] = kPositive;
            }
        }
    }
    return m;
}

Tensor cls_loss(const Tensor& logits, std::span<const std::int8_t> labels) {
    if (logits.numel() != labels.size()) {
        throw ShapeError("cls_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.numel()) + " logits");
    }
    auto z = logits.data();
    std::size_t n = 0;
    double total = 0.0;
    std::vector<double> slope(z.size(), 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (labels[i] == kIgnore) {
            continue;
        }
        ++n;
        const double y = labels[i] == kPositive ? 1.0 : 0.0;
        const double p = sigmoid(z[i]);
        const double pc = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
        total -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
        if (p == pc) {
            slope[i] = p - y;
        }
    }
    if (n == 0) {
        throw ShapeError("cls_loss: every cell is ignored");
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (double& s : slope) {
        s *= inv_n;
    }
    return OpRecorder::make("cls_loss", {1}, {total * inv_n}, {logits},
                            [slope = std::move(slope)](std::span<const double> go) {
                                Grads g(1, slope);
                                for (double& x : g[0]) {
                                    x *= go[0];
                                }
                                return g;
                            });
}

Tensor reg_loss(const Tensor& reg, const ResponseGrid& grid, const BBox& gt, std::span<const std::int8_t> labels,
                double search_size, double lambda_iou, double lambda_l1) {
    if (reg.rank() != 3 || reg.dim(0) != 4) {
        throw ShapeError("reg_loss: expected a [4,H,W] map, got " + shape_str(reg.shape()));
    }
    const int hm = reg.dim(1);
    const int wm = reg.dim(2);
    const std::size_t plane = static_cast<std::size_t>(hm) * wm;
    if (labels.size() != plane) {
        throw ShapeError("reg_loss: label count does not match the map");
    }
    if (!(search_size > 0.0)) {
        throw ShapeError("reg_loss: search size must be positive");
    }
    std::size_t n_pos = 0;
    for (auto l : labels) {
        n_pos += l == kPositive ? 1 : 0;
    }
    if (n_pos == 0) {
        return Tensor::scalar(0.0);
    }

    auto v = reg.data();
    const double gx1 = gt.x1(), gy1 = gt.y1(), gx2 = gt.x2(), gy2 = gt.y2();
    const double area_g = gt.w * gt.h;
    const double inv_n = 1.0 / static_cast<double>(n_pos);
    double total = 0.0;
    std::vector<double> slope(v.size(), 0.0);
    for (int row = 0; row < hm; ++row) {
        for (int col = 0; col < wm; ++col) {
            const std::size_t cell = static_cast<std::size_t>(row) * wm + col;
            if (labels[cell] != kPositive) {
                continue;
            }
            const double px = grid.cell_center(col);
            const double py = grid.cell_center(row);
            const double l = v[cell], t = v[plane + cell], r = v[2 * plane + cell], b = v[3 * plane + cell];
            const double x1 = px - l, y1 = py - t, x2 = px + r, y2 = py + b;

            const double iw = std::min(x2, gx2) - std::max(x1, gx1);
            const double ih = std::min(y2, gy2) - std::max(y1, gy1);
            const bool overlap = iw > 0.0 && ih > 0.0;
            const double inter = overlap ? iw * ih : 0.0;
            const double area_p = (x2 - x1) * (y2 - y1);
            const double uni = area_p + area_g - inter;
            const double iou_v = inter / uni;

            // d IoU / d corner, through the intersection and the predicted area
            const double d_inter = (uni + inter) / (uni * uni);
            const double d_area = -inter / (uni * uni);
            double g_x1 = d_area * -(y2 - y1), g_x2 = d_area * (y2 - y1);
            double g_y1 = d_area * -(x2 - x1), g_y2 = d_area * (x2 - x1);
            if (overlap) {
                if (x2 < gx2) g_x2 += d_inter * ih;
                if (x1 > gx1) g_x1 -= d_inter * ih;
                if (y2 < gy2) g_y2 += d_inter * iw;
                if (y1 > gy1) g_y1 -= d_inter * iw;
            }

            const double dx1 = x1 - gx1, dy1 = y1 - gy1, dx2 = x2 - gx2, dy2 = y2 - gy2;
            const double l1 = (std::abs(dx1) + std::abs(dy1) + std::abs(dx2) + std::abs(dy2)) / (4.0 * search_size);
            total += lambda_iou * (1.0 - iou_v) + lambda_l1 * l1;

            auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
            const double k1 = lambda_l1 / (4.0 * search_size);
            // loss slope w.r.t. each corner
            const double s_x1 = -lambda_iou * g_x1 + k1 * sgn(dx1);
            const double s_y1 = -lambda_iou * g_y1 + k1 * sgn(dy1);
            const double s_x2 = -lambda_iou * g_x2 + k1 * sgn(dx2);
            const double s_y2 = -lambda_iou * g_y2 + k1 * sgn(dy2);
            slope[cell] = -s_x1 * inv_n;
            slope[plane + cell] = -s_y1 * inv_n;
            slope[2 * plane + cell] = s_x2 * inv_n;
            slope[3 * plane + cell] = s_y2 * inv_n;
        }
    }
    return OpRecorder::make("reg_loss", {1}, {total * inv_n}, {reg},
                            [slope = std::move(slope)](std::span<const double> go) {
                                Grads g(1, slope);
                                for (double& x : g[0]) {
                                    x *= go[0];
                                }
                                return g;
                            });
}

TrackLoss track_loss(const HeadOutput& head, const BBox& gt, const ResponseGrid& grid, const LossConfig& cfg,
                     double search_size) {
    if (head.cls.dim(1) != grid.size || head.cls.dim(2) != grid.size) {
        throw ShapeError("track_loss: head output does not match the response grid");
    }
    LabelMap labels = assign_labels(grid, gt, cfg.positive_radius);
    TrackLoss out;
    out.cls = cls_loss(head.cls, labels.labels);
    out.reg = reg_loss(head.reg, grid, gt, labels.labels, search_size, cfg.lambda_iou, cfg.lambda_l1);
    out.total = add(out.cls, out.reg);
    return out;
}

Tensor corr_matrix(const std::vector<Tensor>& maps, double eps) {
    if (maps.empty()) {
        throw ShapeError("corr_matrix: no maps");
    }
    const std::size_t m = maps.front().numel();
    for (const Tensor& t : maps) {
        if (t.shape() != maps.front().shape()) {
            throw ShapeError("corr_matrix: maps differ in shape");
        }
    }
    const int n = static_cast<int>(maps.size());
    std::vector<MapStats> stats;
    for (const Tensor& t : maps) {
        stats.push_back(map_stats(t.data()));
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    std::vector<double> cov(static_cast<std::size_t>(n) * n);
    std::vector<double> out(cov.size());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * n + j;
            cov[k] = dot(stats[i].centered, stats[j].centered) * inv_m;
            out[k] = cov[k] / (stats[i].sd * stats[j].sd + eps);
        }
    }
    return OpRecorder::make(
        "corr_matrix", {n, n}, std::move(out), maps,
        [=, stats = std::move(stats), cov = std::move(cov)](std::span<const double> go) {
            Grads grads(static_cast<std::size_t>(n), std::vector<double>(m, 0.0));
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    const std::size_t k = static_cast<std::size_t>(i) * n + j;
                    if (go[k] == 0.0) {
                        continue;
                    }
                    const double denom = stats[i].sd * stats[j].sd + eps;
                    const double a = go[k] / denom * inv_m;
                    const double b = go[k] * cov[k] / (denom * denom) * inv_m;
                    // d cov_ij / d f_i = centered_j / M,  d sd_i / d f_i = centered_i / (M sd_i)
                    const double bi = stats[i].sd > 0.0 ? b * stats[j].sd / stats[i].sd : 0.0;
                    const double bj = stats[j].sd > 0.0 ? b * stats[i].sd / stats[j].sd : 0.0;
                    for (std::size_t p = 0; p < m; ++p) {
                        grads[i][p] += a * stats[j].centered[p] - bi * stats[i].centered[p];
                        grads[j][p] += a * stats[i].centered[p] - bj * stats[j].centered[p];
                    }
                }
            }
            return grads;
        });
}

Tensor dcfg_loss(const std::vector<Tensor>& maps, double eps) {
    if (maps.size() < 2) {
        return Tensor::scalar(0.0);
    }
    Tensor c = corr_matrix(maps, eps);
    const int n = c.dim(0);
    auto v = c.data();
    std::vector<double> dev(v.begin(), v.end());
    for (int i = 0; i < n; ++i) {
        dev[static_cast<std::size_t>(i) * n + i] -= 1.0;
    }
    double ss = 0.0;
    for (double d : dev) {
        ss += d * d;
    }
    const double norm = std::sqrt(ss);
    return OpRecorder::make("dcfg_loss", {1}, {norm}, {c},
                            [dev = std::move(dev), norm](std::span<const double> go) {
                                Grads g(1, std::vector<double>(dev.size(), 0.0));
                                if (norm > 0.0) {
                                    for (std::size_t i = 0; i < dev.size(); ++i) {
                                        g[0][i] = go[0] * dev[i] / norm;
                                    }
                                }
                                return g;
                            });
}

double mean_abs_offdiag(const std::vector<Tensor>& maps, double eps) {
    if (maps.size() < 2) {
        return 0.0;
    }
    NoGradGuard no_grad;
    Tensor c = corr_matrix(maps, eps);
    const int n = c.dim(0);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i != j) {
                s += std::abs(c.data()[static_cast<std::size_t>(i) * n + j]);
            }
        }
    }
    return s / (n * (n - 1.0));
}

TotalLoss total_loss(const PairForward& forward, const BBox& gt, const ResponseGrid& grid, const LossConfig& cfg,
                     double search_size, bool use_dcfg_loss) {
    TotalLoss out;
    TrackLoss norm = track_loss(forward.fused, gt, grid, cfg, search_size);
    Tensor total = mul(norm.total, cfg.mu);
    out.parts.l_norm = norm.total.item();
    out.parts.l_cls = norm.cls.item();
    out.parts.l_reg = norm.reg.item();

    for (const auto& branch_groups : forward.groups) {
        for (const HeadOutput& h : branch_groups) {
            Tensor l = track_loss(h, gt, grid, cfg, search_size).total;
            out.parts.l_cfgb += l.item();
            total = add(total, l);
        }
    }
    if (use_dcfg_loss) {
        for (const auto& maps : forward.compressed) {
            if (maps.size() < 2) {
                continue;
            }
            Tensor l = dcfg_loss(maps, cfg.eps_corr);
            out.parts.l_dcfg += l.item();
            total = add(total, l);
        }
    }
    out.total = total;
    out.parts.total = total.item();
    return out;
}

}  // namespace dcfg
