#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dcfg/tensor.hpp"

namespace dcfg {

/// Per-channel affine parameters and running statistics of a BN layer.
struct BatchNorm {
    Tensor gamma;  // [C], learnable
    Tensor beta;   // [C], learnable
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    explicit BatchNorm(int channels = 0);
    int channels() const { return static_cast<int>(running_mean.size()); }
};

// 2-D convolution over [C,H,W] or [B,C,H,W]. Weight is
// [C_out, C_in/groups, k, k]; `bias` may be an undefined Tensor.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding,
              int groups);

int conv_out_extent(int in, int k, int stride, int padding);

/// out[i] = in[perm[i]] along channels.
Tensor channel_shuffle(const Tensor& input, std::span<const int> perm);
std::vector<int> invert_permutation(std::span<const int> perm);

std::pair<Tensor, Tensor> split_channels(const Tensor& input, int c0);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor concat_channels(const std::vector<Tensor>& parts);

/// Channels [begin, begin + count) of a [C,H,W] tensor.
Tensor slice_channels(const Tensor& input, int begin, int count);

/// Zero-pads along channels: `before` empty channels, input, `after` empty channels.
Tensor pad_channels(const Tensor& input, int before, int after);

/// [C,H,W] -> [1,H,W], mean over channels.
Tensor channel_mean(const Tensor& input);

// Elementwise product / sum. `rhs` may have the same shape as `input` or be
// an [H,W] map broadcast over the channels of a [C,H,W] input.
Tensor mul(const Tensor& input, const Tensor& rhs);
Tensor mul(const Tensor& input, double scalar);
Tensor add(const Tensor& input, const Tensor& rhs);
Tensor add(const Tensor& input, double scalar);

/// max(0, x); the subgradient at 0 is 0.
Tensor relu(const Tensor& input);
Tensor exp(const Tensor& input);

/// Training mode normalises with per-channel batch statistics over every
/// non-channel axis and, unless `update_running` is false, updates bn's
/// running statistics; eval mode uses them.
Tensor batch_norm(const Tensor& input, BatchNorm& bn, bool training, bool update_running = true);

/// How the batch_norm layers of a network behave during one forward pass.
enum class NormMode {
    train,        // batch statistics; running statistics updated
    batch_stats,  // batch statistics; running statistics left alone
    running,      // running statistics
};

Tensor batch_norm(const Tensor& input, BatchNorm& bn, NormMode mode);

Tensor sum(const Tensor& input);
Tensor mean(const Tensor& input);

/// Softmax of a rank-1 tensor.
Tensor softmax(const Tensor& logits);

/// sum_b weights[b] * xs[b]; all xs share one shape, weights is [B].
Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& weights);

}  // namespace dcfg
