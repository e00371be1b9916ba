#include "dcfg/kernels.hpp"

#include <algorithm>
#include <cstddef>

namespace dcfg::kernels::parallel {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr long kParallelWork = 1L << 15;

long conv_work(const ConvGeometry& g) {
    return static_cast<long>(g.out_c) * g.out_h * g.out_w * g.in_per_group() * g.k * g.k;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
    const int ipg = g.in_per_group();
    const int opg = g.out_per_group();
    const int kk = g.k * g.k;
    const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
    const double* in_p = in.data();
    const double* w_p = weight.data();
    double* out_p = out.data();
    const bool has_bias = !bias.empty();

#pragma omp parallel for collapse(2) schedule(static) if (conv_work(g) >= kParallelWork)
    for (int oc = 0; oc < g.out_c; ++oc) {
        for (int oy = 0; oy < g.out_h; ++oy) {
            const int ic0 = (oc / opg) * ipg;
            const int y0 = oy * g.stride - g.pad;
            const int ky_lo = std::max(0, -y0);
            const int ky_hi = std::min(g.k, g.in_h - y0);
            double* row = out_p + (static_cast<std::size_t>(oc) * g.out_h + oy) * g.out_w;
            for (int ox = 0; ox < g.out_w; ++ox) {
                const int x0 = ox * g.stride - g.pad;
                const int kx_lo = std::max(0, -x0);
                const int kx_hi = std::min(g.k, g.in_w - x0);
                double acc = has_bias ? bias[oc] : 0.0;
                for (int icg = 0; icg < ipg; ++icg) {
                    const double* plane = in_p + (ic0 + icg) * in_plane;
                    const double* wk = w_p + (static_cast<std::size_t>(oc) * ipg + icg) * kk;
                    for (int ky = ky_lo; ky < ky_hi; ++ky) {
                        const double* irow = plane + static_cast<std::size_t>(y0 + ky) * g.in_w + x0;
                        const double* wrow = wk + ky * g.k;
                        for (int kx = kx_lo; kx < kx_hi; ++kx) {
                            acc += irow[kx] * wrow[kx];
                        }
                    }
                }
                row[ox] = acc;
            }
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
    const int ipg = g.in_per_group();
    const int opg = g.out_per_group();
    const int kk = g.k * g.k;
    const double* go_p = grad_out.data();
    const double* w_p = weight.data();
    double* gi_p = grad_in.data();

#pragma omp parallel for collapse(2) schedule(static) if (conv_work(g) >= kParallelWork)
    for (int ic = 0; ic < g.in_c; ++ic) {
        for (int iy = 0; iy < g.in_h; ++iy) {
            const int grp = ic / ipg;
            const int icg = ic % ipg;
            for (int ix = 0; ix < g.in_w; ++ix) {
                double acc = 0.0;
                for (int oc = grp * opg; oc < (grp + 1) * opg; ++oc) {
                    const double* wk = w_p + (static_cast<std::size_t>(oc) * ipg + icg) * kk;
                    const double* go_plane = go_p + static_cast<std::size_t>(oc) * g.out_h * g.out_w;
                    for (int ky = 0; ky < g.k; ++ky) {
                        const int ny = iy + g.pad - ky;
                        if (ny < 0 || ny % g.stride != 0) {
                            continue;
                        }
                        const int oy = ny / g.stride;
                        if (oy >= g.out_h) {
                            continue;
                        }
                        for (int kx = 0; kx < g.k; ++kx) {
                            const int nx = ix + g.pad - kx;
                            if (nx < 0 || nx % g.stride != 0) {
                                continue;
                            }
                            const int ox = nx / g.stride;
                            if (ox >= g.out_w) {
                                continue;
                            }
                            acc += go_plane[static_cast<std::size_t>(oy) * g.out_w + ox] * wk[ky * g.k + kx];
                        }
                    }
                }
                gi_p[(static_cast<std::size_t>(ic) * g.in_h + iy) * g.in_w + ix] = acc;
            }
        }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> grad_out,
                            std::span<const double> in, std::span<double> grad_weight) {
    const int ipg = g.in_per_group();
    const int opg = g.out_per_group();
    const double* go_p = grad_out.data();
    const double* in_p = in.data();
    double* gw_p = grad_weight.data();

#pragma omp parallel for collapse(2) schedule(static) if (conv_work(g) >= kParallelWork)
    for (int oc = 0; oc < g.out_c; ++oc) {
        for (int icg = 0; icg < ipg; ++icg) {
            const int ic = (oc / opg) * ipg + icg;
            const double* go_plane = go_p + static_cast<std::size_t>(oc) * g.out_h * g.out_w;
            const double* in_plane = in_p + static_cast<std::size_t>(ic) * g.in_h * g.in_w;
            for (int ky = 0; ky < g.k; ++ky) {
                for (int kx = 0; kx < g.k; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < g.out_h; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.in_h) {
                            continue;
                        }
                        const double* gorow = go_plane + static_cast<std::size_t>(oy) * g.out_w;
                        const double* inrow = in_plane + static_cast<std::size_t>(iy) * g.in_w;
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix < 0 || ix >= g.in_w) {
                                continue;
                            }
                            acc += gorow[ox] * inrow[ix];
                        }
                    }
                    gw_p[((static_cast<std::size_t>(oc) * ipg + icg) * g.k + ky) * g.k + kx] = acc;
                }
            }
        }
    }
}

void xcorr_forward(const XcorrGeometry& g, std::span<const double> tmpl, std::span<const double> search,
                   std::span<double> out) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    const long work = static_cast<long>(g.channels) * oh * ow * g.t_h * g.t_w;

#pragma omp parallel for collapse(2) schedule(static) if (work >= kParallelWork)
    for (int c = 0; c < g.channels; ++c) {
        for (int y = 0; y < oh; ++y) {
            const double* t = tmpl.data() + static_cast<std::size_t>(c) * g.t_h * g.t_w;
            const double* s = search.data() + static_cast<std::size_t>(c) * g.s_h * g.s_w;
            double* row = out.data() + (static_cast<std::size_t>(c) * oh + y) * ow;
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int ty = 0; ty < g.t_h; ++ty) {
                    const double* srow = s + static_cast<std::size_t>(y + ty) * g.s_w + x;
                    const double* trow = t + static_cast<std::size_t>(ty) * g.t_w;
                    for (int tx = 0; tx < g.t_w; ++tx) {
                        acc += trow[tx] * srow[tx];
                    }
                }
                row[x] = acc;
            }
        }
    }
}

void xcorr_backward(const XcorrGeometry& g, std::span<const double> grad_out, std::span<const double> tmpl,
                    std::span<const double> search, std::span<double> grad_tmpl,
                    std::span<double> grad_search) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    const long work = static_cast<long>(g.channels) * oh * ow * g.t_h * g.t_w;

    // Each channel owns disjoint slices of both gradient buffers.
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
    for (int c = 0; c < g.channels; ++c) {
        const std::size_t t_plane = static_cast<std::size_t>(g.t_h) * g.t_w;
        const std::size_t s_plane = static_cast<std::size_t>(g.s_h) * g.s_w;
        const double* t = tmpl.data() + c * t_plane;
        const double* s = search.data() + c * s_plane;
        const double* go = grad_out.data() + static_cast<std::size_t>(c) * oh * ow;
        double* gt = grad_tmpl.data() + c * t_plane;
        double* gs = grad_search.data() + c * s_plane;
        std::fill(gt, gt + t_plane, 0.0);
        std::fill(gs, gs + s_plane, 0.0);
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const double v = go[static_cast<std::size_t>(y) * ow + x];
                for (int ty = 0; ty < g.t_h; ++ty) {
                    const std::size_t srow = static_cast<std::size_t>(y + ty) * g.s_w + x;
                    const std::size_t trow = static_cast<std::size_t>(ty) * g.t_w;
                    for (int tx = 0; tx < g.t_w; ++tx) {
                        gt[trow + tx] += v * s[srow + tx];
                        gs[srow + tx] += v * t[trow + tx];
                    }
                }
            }
        }
    }
}

}  // namespace dcfg::kernels::parallel
