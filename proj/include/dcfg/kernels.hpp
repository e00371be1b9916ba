#pragma once

#include <span>

// Raw conv2d / depthwise cross-correlation loops over contiguous
// [C,H,W] buffers. `reference` is the plain serial version kept as the
// oracle for tests and the benchmark baseline; `parallel` is what the ops
// call. Forward kernels in both namespaces accumulate in the same order, so
// their outputs are bit-identical regardless of thread count.

namespace dcfg::kernels {

struct ConvGeometry {
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;
    int k = 1, stride = 1, pad = 0, groups = 1;

    int in_per_group() const { return in_c / groups; }
    int out_per_group() const { return out_c / groups; }
};

struct XcorrGeometry {
    int channels = 0;
    int t_h = 0, t_w = 0;  // template
    int s_h = 0, s_w = 0;  // search
    int out_h() const { return s_h - t_h + 1; }
    int out_w() const { return s_w - t_w + 1; }
};

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> grad_out,
                            std::span<const double> in, std::span<double> grad_weight);

void xcorr_forward(const XcorrGeometry& g, std::span<const double> tmpl, std::span<const double> search,
                   std::span<double> out);
void xcorr_backward(const XcorrGeometry& g, std::span<const double> grad_out, std::span<const double> tmpl,
                    std::span<const double> search, std::span<double> grad_tmpl,
                    std::span<double> grad_search);

}  // namespace reference

namespace parallel {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> grad_out,
                            std::span<const double> in, std::span<double> grad_weight);

void xcorr_forward(const XcorrGeometry& g, std::span<const double> tmpl, std::span<const double> search,
                   std::span<double> out);
void xcorr_backward(const XcorrGeometry& g, std::span<const double> grad_out, std::span<const double> tmpl,
                    std::span<const double> search, std::span<double> grad_tmpl,
                    std::span<double> grad_search);

}  // namespace parallel

}  // namespace dcfg::kernels
