#include "dcfg/kernels.hpp"

#include <algorithm>
#include <cstddef>

namespace dcfg::kernels::reference {

namespace {

std::size_t idx3(int c, int y, int x, int h, int w) {
    return (static_cast<std::size_t>(c) * h + y) * w + x;
}

std::size_t widx(const ConvGeometry& g, int oc, int icg, int ky, int kx) {
    return ((static_cast<std::size_t>(oc) * g.in_per_group() + icg) * g.k + ky) * g.k + kx;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
    const int ipg = g.in_per_group();
    const int opg = g.out_per_group();
    for (int oc = 0; oc < g.out_c; ++oc) {
        const int ic0 = (oc / opg) * ipg;
        for (int oy = 0; oy < g.out_h; ++oy) {
            for (int ox = 0; ox < g.out_w; ++ox) {
                double acc = bias.empty() ? 0.0 : bias[oc];
                for (int icg = 0; icg < ipg; ++icg) {
                    for (int ky = 0; ky < g.k; ++ky) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.in_h) {
                            continue;
                        }
                        for (int kx = 0; kx < g.k; ++kx) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix < 0 || ix >= g.in_w) {
                                continue;
                            }
                            acc += in[idx3(ic0 + icg, iy, ix, g.in_h, g.in_w)] * weight[widx(g, oc, icg, ky, kx)];
                        }
                    }
                }
                out[idx3(oc, oy, ox, g.out_h, g.out_w)] = acc;
            }
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
    std::fill(grad_in.begin(), grad_in.end(), 0.0);
    const int ipg = g.in_per_group();
    const int opg = g.out_per_group();
    for (int oc = 0; oc < g.out_c; ++oc) {
        const int ic0 = (oc / opg) * ipg;
        for (int oy = 0; oy < g.out_h; ++oy) {
            for (int ox = 0; ox < g.out_w; ++ox) {
                const double go = grad_out[idx3(oc, oy, ox, g.out_h, g.out_w)];
                for (int icg = 0; icg < ipg; ++icg) {
                    for (int ky = 0; ky < g.k; ++ky) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.in_h) {
                            continue;
                        }
                        for (int kx = 0; kx < g.k; ++kx) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix < 0 || ix >= g.in_w) {
                                continue;
                            }
                            grad_in[idx3(ic0 + icg, iy, ix, g.in_h, g.in_w)] += go * weight[widx(g, oc, icg, ky, kx)];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> grad_out,
                            std::span<const double> in, std::span<double> grad_weight) {
    const int ipg = g.in_per_group();
    const int opg = g.out_per_group();
    for (int oc = 0; oc < g.out_c; ++oc) {
        const int ic0 = (oc / opg) * ipg;
        for (int icg = 0; icg < ipg; ++icg) {
            for (int ky = 0; ky < g.k; ++ky) {
                for (int kx = 0; kx < g.k; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < g.out_h; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.in_h) {
                            continue;
                        }
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix < 0 || ix >= g.in_w) {
                                continue;
                            }
                            acc += grad_out[idx3(oc, oy, ox, g.out_h, g.out_w)] *
                                   in[idx3(ic0 + icg, iy, ix, g.in_h, g.in_w)];
                        }
                    }
                    grad_weight[widx(g, oc, icg, ky, kx)] = acc;
                }
            }
        }
    }
}

void xcorr_forward(const XcorrGeometry& g, std::span<const double> tmpl, std::span<const double> search,
                   std::span<double> out) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    for (int c = 0; c < g.channels; ++c) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int ty = 0; ty < g.t_h; ++ty) {
                    for (int tx = 0; tx < g.t_w; ++tx) {
                        acc += tmpl[idx3(c, ty, tx, g.t_h, g.t_w)] * search[idx3(c, y + ty, x + tx, g.s_h, g.s_w)];
                    }
                }
                out[idx3(c, y, x, oh, ow)] = acc;
            }
        }
    }
}

void xcorr_backward(const XcorrGeometry& g, std::span<const double> grad_out, std::span<const double> tmpl,
                    std::span<const double> search, std::span<double> grad_tmpl,
                    std::span<double> grad_search) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    std::fill(grad_tmpl.begin(), grad_tmpl.end(), 0.0);
    std::fill(grad_search.begin(), grad_search.end(), 0.0);
    for (int c = 0; c < g.channels; ++c) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const double go = grad_out[idx3(c, y, x, oh, ow)];
                for (int ty = 0; ty < g.t_h; ++ty) {
                    for (int tx = 0; tx < g.t_w; ++tx) {
                        grad_tmpl[idx3(c, ty, tx, g.t_h, g.t_w)] += go * search[idx3(c, y + ty, x + tx, g.s_h, g.s_w)];
                        grad_search[idx3(c, y + ty, x + tx, g.s_h, g.s_w)] += go * tmpl[idx3(c, ty, tx, g.t_h, g.t_w)];
                    }
                }
            }
        }
    }
}

}  // namespace dcfg::kernels::reference
