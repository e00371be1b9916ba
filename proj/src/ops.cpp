#include "dcfg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dcfg/kernels.hpp"

namespace dcfg {

namespace {

using Grads = std::vector<std::vector<double>>;

void require_rank3(const Tensor& t, const char* op) {
    if (t.rank() != 3) {
        throw ShapeError(std::string(op) + ": expected [C,H,W], got " + shape_str(t.shape()));
    }
}

std::size_t plane_size(const Tensor& t) { return static_cast<std::size_t>(t.dim(1)) * t.dim(2); }

}  // namespace

BatchNorm::BatchNorm(int channels)
    : running_mean(static_cast<std::size_t>(std::max(channels, 0)), 0.0),
      running_var(static_cast<std::size_t>(std::max(channels, 0)), 1.0) {
    if (channels > 0) {
        gamma = Tensor::full({channels}, 1.0, true);
        beta = Tensor::zeros({channels}, true);
    }
}

int conv_out_extent(int in, int k, int stride, int padding) { return (in + 2 * padding - k) / stride + 1; }

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding,
              int groups) {
    const int rank = input.rank();
    if (rank != 3 && rank != 4) {
        throw ShapeError("conv2d: input must be [C,H,W] or [B,C,H,W], got " + shape_str(input.shape()));
    }
    if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
        throw ShapeError("conv2d: weight must be [C_out,C_in/g,k,k], got " + shape_str(weight.shape()));
    }
    if (stride < 1 || padding < 0 || groups < 1) {
        throw ShapeError("conv2d: stride >= 1, padding >= 0 and groups >= 1 required");
    }
    const int batch = rank == 4 ? input.dim(0) : 1;
    kernels::ConvGeometry g;
    g.in_c = input.dim(-3);
    g.in_h = input.dim(-2);
    g.in_w = input.dim(-1);
    g.out_c = weight.dim(0);
    g.k = weight.dim(2);
    g.stride = stride;
    g.pad = padding;
    g.groups = groups;
    if (g.in_c % groups != 0 || g.out_c % groups != 0) {
        throw ShapeError("conv2d: channel counts " + std::to_string(g.in_c) + "->" + std::to_string(g.out_c) +
                         " not divisible by groups=" + std::to_string(groups));
    }
    if (weight.dim(1) != g.in_c / groups) {
        throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels per group, input provides " + std::to_string(g.in_c / groups));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_c)) {
        throw ShapeError("conv2d: bias must be [C_out]");
    }
    g.out_h = conv_out_extent(g.in_h, g.k, stride, padding);
    g.out_w = conv_out_extent(g.in_w, g.k, stride, padding);
    if (g.out_h < 1 || g.out_w < 1) {
        throw ShapeError("conv2d: kernel larger than padded input " + shape_str(input.shape()));
    }

    const std::size_t in_n = static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w;
    const std::size_t out_n = static_cast<std::size_t>(g.out_c) * g.out_h * g.out_w;
    std::vector<double> out(out_n * batch);
    std::span<const double> bias_span = bias.defined() ? bias.data() : std::span<const double>{};
    for (int b = 0; b < batch; ++b) {
        kernels::parallel::conv2d_forward(g, input.data().subspan(b * in_n, in_n), weight.data(), bias_span,
                                          std::span<double>(out).subspan(b * out_n, out_n));
    }
    Shape out_shape = rank == 4 ? Shape{batch, g.out_c, g.out_h, g.out_w} : Shape{g.out_c, g.out_h, g.out_w};

    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    const bool need_in = input.requires_grad();
    const bool need_w = weight.requires_grad();
    const bool need_b = bias.defined() && bias.requires_grad();
    return OpRecorder::make(
        "conv2d", out_shape, std::move(out), inputs,
        [=](std::span<const double> go) {
            Grads grads(bias.defined() ? 3 : 2);
            if (need_in) {
                grads[0].assign(in_n * batch, 0.0);
                for (int b = 0; b < batch; ++b) {
                    kernels::parallel::conv2d_backward_input(g, go.subspan(b * out_n, out_n), weight.data(),
                                                             std::span<double>(grads[0]).subspan(b * in_n, in_n));
                }
            }
            if (need_w) {
                grads[1].assign(weight.numel(), 0.0);
                std::vector<double> scratch(weight.numel());
                for (int b = 0; b < batch; ++b) {
                    kernels::parallel::conv2d_backward_weight(g, go.subspan(b * out_n, out_n),
                                                              input.data().subspan(b * in_n, in_n), scratch);
                    for (std::size_t i = 0; i < scratch.size(); ++i) {
                        grads[1][i] += scratch[i];
                    }
                }
            }
            if (need_b) {
                grads[2].assign(g.out_c, 0.0);
                const std::size_t plane = static_cast<std::size_t>(g.out_h) * g.out_w;
                for (int b = 0; b < batch; ++b) {
                    for (int oc = 0; oc < g.out_c; ++oc) {
                        const double* p = go.data() + b * out_n + oc * plane;
                        grads[2][oc] += std::accumulate(p, p + plane, 0.0);
                    }
                }
            }
            return grads;
        });
}

std::vector<int> invert_permutation(std::span<const int> perm) {
    std::vector<int> inv(perm.size(), -1);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const int p = perm[i];
        if (p < 0 || p >= static_cast<int>(perm.size()) || inv[p] != -1) {
            throw ShapeError("channel permutation is not a permutation of 0..C-1");
        }
        inv[p] = static_cast<int>(i);
    }
    return inv;
}

Tensor channel_shuffle(const Tensor& input, std::span<const int> perm) {
    require_rank3(input, "channel_shuffle");
    const int c = input.dim(0);
    if (static_cast<int>(perm.size()) != c) {
        throw ShapeError("channel_shuffle: permutation length " + std::to_string(perm.size()) +
                         " != channel count " + std::to_string(c));
    }
    std::vector<int> inv = invert_permutation(perm);
    const std::size_t plane = plane_size(input);
    std::vector<double> out(input.numel());
    auto src = input.data();
    for (int i = 0; i < c; ++i) {
        std::copy_n(src.begin() + perm[i] * plane, plane, out.begin() + i * plane);
    }
    return OpRecorder::make("channel_shuffle", input.shape(), std::move(out), {input},
                            [inv, plane](std::span<const double> go) {
                                Grads grads(1, std::vector<double>(go.size()));
                                for (std::size_t j = 0; j < inv.size(); ++j) {
                                    std::copy_n(go.begin() + inv[j] * plane, plane, grads[0].begin() + j * plane);
                                }
                                return grads;
                            });
}

std::pair<Tensor, Tensor> split_channels(const Tensor& input, int c0) {
    require_rank3(input, "split_channels");
    const int c = input.dim(0);
    if (c0 <= 0 || c0 >= c) {
        throw ShapeError("split_channels: need 0 < c0 < C, got c0=" + std::to_string(c0) + ", C=" + std::to_string(c));
    }
    const std::size_t plane = plane_size(input);
    const std::size_t n0 = c0 * plane;
    auto src = input.data();
    std::vector<double> a(src.begin(), src.begin() + n0);
    std::vector<double> b(src.begin() + n0, src.end());
    const std::size_t total = input.numel();
    Tensor first = OpRecorder::make("split_channels", {c0, input.dim(1), input.dim(2)}, std::move(a), {input},
                                    [n0, total](std::span<const double> go) {
                                        Grads grads(1, std::vector<double>(total, 0.0));
                                        std::copy(go.begin(), go.end(), grads[0].begin());
                                        return grads;
                                    });
    Tensor second = OpRecorder::make("split_channels", {c - c0, input.dim(1), input.dim(2)}, std::move(b), {input},
                                     [n0, total](std::span<const double> go) {
                                         Grads grads(1, std::vector<double>(total, 0.0));
                                         std::copy(go.begin(), go.end(), grads[0].begin() + n0);
                                         return grads;
                                     });
    return {first, second};
}

Tensor concat_channels(const Tensor& a, const Tensor& b) { return concat_channels(std::vector<Tensor>{a, b}); }

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_channels: nothing to concatenate");
    }
    int channels = 0;
    for (const Tensor& p : parts) {
        require_rank3(p, "concat_channels");
        if (p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2)) {
            throw ShapeError("concat_channels: spatial mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        channels += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(channels) * plane_size(parts[0]));
    std::vector<std::size_t> sizes;
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        sizes.push_back(p.numel());
    }
    return OpRecorder::make("concat_channels", {channels, parts[0].dim(1), parts[0].dim(2)}, std::move(out), parts,
                            [sizes](std::span<const double> go) {
                                Grads grads;
                                std::size_t off = 0;
                                for (std::size_t n : sizes) {
                                    grads.emplace_back(go.begin() + off, go.begin() + off + n);
                                    off += n;
                                }
                                return grads;
                            });
}

Tensor slice_channels(const Tensor& input, int begin, int count) {
    require_rank3(input, "slice_channels");
    if (begin < 0 || count < 1 || begin + count > input.dim(0)) {
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + std::to_string(input.dim(0)) + " channels");
    }
    const std::size_t plane = plane_size(input);
    const std::size_t off = begin * plane;
    const std::size_t n = count * plane;
    const std::size_t total = input.numel();
    std::vector<double> out(input.data().begin() + off, input.data().begin() + off + n);
    return OpRecorder::make("slice_channels", {count, input.dim(1), input.dim(2)}, std::move(out), {input},
                            [off, total](std::span<const double> go) {
                                Grads grads(1, std::vector<double>(total, 0.0));
                                std::copy(go.begin(), go.end(), grads[0].begin() + off);
                                return grads;
                            });
}

Tensor pad_channels(const Tensor& input, int before, int after) {
    require_rank3(input, "pad_channels");
    if (before < 0 || after < 0) {
        throw ShapeError("pad_channels: negative padding");
    }
    const std::size_t plane = plane_size(input);
    const int c = input.dim(0) + before + after;
    std::vector<double> out(static_cast<std::size_t>(c) * plane, 0.0);
    std::copy(input.data().begin(), input.data().end(), out.begin() + before * plane);
    const std::size_t off = before * plane;
    const std::size_t n = input.numel();
    return OpRecorder::make("pad_channels", {c, input.dim(1), input.dim(2)}, std::move(out), {input},
                            [off, n](std::span<const double> go) {
                                return Grads{std::vector<double>(go.begin() + off, go.begin() + off + n)};
                            });
}

Tensor channel_mean(const Tensor& input) {
    require_rank3(input, "channel_mean");
    const int c = input.dim(0);
    const std::size_t plane = plane_size(input);
    std::vector<double> out(plane, 0.0);
    auto src = input.data();
    for (int ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) {
            out[i] += src[ch * plane + i];
        }
    }
    const double inv_c = 1.0 / c;
    for (double& v : out) {
        v *= inv_c;
    }
    return OpRecorder::make("channel_mean", {1, input.dim(1), input.dim(2)}, std::move(out), {input},
                            [c, plane, inv_c](std::span<const double> go) {
                                Grads grads(1, std::vector<double>(c * plane));
                                for (int ch = 0; ch < c; ++ch) {
                                    for (std::size_t i = 0; i < plane; ++i) {
                                        grads[0][ch * plane + i] = go[i] * inv_c;
                                    }
                                }
                                return grads;
                            });
}

namespace {

enum class Broadcast { same, spatial_map };

Broadcast classify(const Tensor& input, const Tensor& rhs, const char* op) {
    if (input.shape() == rhs.shape()) {
        return Broadcast::same;
    }
    if (input.rank() == 3 && rhs.rank() == 2 && rhs.dim(0) == input.dim(1) && rhs.dim(1) == input.dim(2)) {
        return Broadcast::spatial_map;
    }
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(rhs.shape()) + " onto " +
                     shape_str(input.shape()));
}

}  // namespace

Tensor mul(const Tensor& input, const Tensor& rhs) {
    const Broadcast mode = classify(input, rhs, "mul");
    const std::size_t n = input.numel();
    const std::size_t m = rhs.numel();
    auto x = input.data();
    auto r = rhs.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = x[i] * r[i % m];
    }
    const bool need_x = input.requires_grad();
    const bool need_r = rhs.requires_grad();
    (void)mode;
    return OpRecorder::make("mul", input.shape(), std::move(out), {input, rhs},
                            [=](std::span<const double> go) {
                                Grads grads(2);
                                auto xv = input.data();
                                auto rv = rhs.data();
                                if (need_x) {
                                    grads[0].resize(n);
                                    for (std::size_t i = 0; i < n; ++i) {
                                        grads[0][i] = go[i] * rv[i % m];
                                    }
                                }
                                if (need_r) {
                                    grads[1].assign(m, 0.0);
                                    for (std::size_t i = 0; i < n; ++i) {
                                        grads[1][i % m] += go[i] * xv[i];
                                    }
                                }
                                return grads;
                            });
}

Tensor mul(const Tensor& input, double scalar) {
    std::vector<double> out(input.data().begin(), input.data().end());
    for (double& v : out) {
        v *= scalar;
    }
    return OpRecorder::make("mul_scalar", input.shape(), std::move(out), {input},
                            [scalar](std::span<const double> go) {
                                Grads grads(1, std::vector<double>(go.begin(), go.end()));
                                for (double& v : grads[0]) {
                                    v *= scalar;
                                }
                                return grads;
                            });
}

Tensor add(const Tensor& input, const Tensor& rhs) {
    classify(input, rhs, "add");
    const std::size_t n = input.numel();
    const std::size_t m = rhs.numel();
    auto x = input.data();
    auto r = rhs.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = x[i] + r[i % m];
    }
    return OpRecorder::make("add", input.shape(), std::move(out), {input, rhs},
                            [n, m](std::span<const double> go) {
                                Grads grads(2);
                                grads[0].assign(go.begin(), go.end());
                                grads[1].assign(m, 0.0);
                                for (std::size_t i = 0; i < n; ++i) {
                                    grads[1][i % m] += go[i];
                                }
                                return grads;
                            });
}

Tensor add(const Tensor& input, double scalar) {
    std::vector<double> out(input.data().begin(), input.data().end());
    for (double& v : out) {
        v += scalar;
    }
    return OpRecorder::make("add_scalar", input.shape(), std::move(out), {input},
                            [](std::span<const double> go) { return Grads{std::vector<double>(go.begin(), go.end())}; });
}

Tensor relu(const Tensor& input) {
    std::vector<double> out(input.data().begin(), input.data().end());
    for (double& v : out) {
        v = v > 0.0 ? v : 0.0;
    }
    return OpRecorder::make("relu", input.shape(), std::move(out), {input}, [input](std::span<const double> go) {
        auto x = input.data();
        Grads grads(1, std::vector<double>(go.size()));
        for (std::size_t i = 0; i < go.size(); ++i) {
            grads[0][i] = x[i] > 0.0 ? go[i] : 0.0;
        }
        return grads;
    });
}

Tensor exp(const Tensor& input) {
    std::vector<double> out(input.data().begin(), input.data().end());
    for (double& v : out) {
        v = std::exp(v);
    }
    std::vector<double> saved = out;
    return OpRecorder::make("exp", input.shape(), std::move(out), {input},
                            [saved = std::move(saved)](std::span<const double> go) {
                                Grads grads(1, std::vector<double>(go.size()));
                                for (std::size_t i = 0; i < go.size(); ++i) {
                                    grads[0][i] = go[i] * saved[i];
                                }
                                return grads;
                            });
}

Tensor batch_norm(const Tensor& input, BatchNorm& bn, bool training, bool update_running) {
    const int rank = input.rank();
    if (rank != 3 && rank != 4) {
        throw ShapeError("batch_norm: input must be [C,H,W] or [B,C,H,W]");
    }
    const int batch = rank == 4 ? input.dim(0) : 1;
    const int c = input.dim(-3);
    const std::size_t plane = static_cast<std::size_t>(input.dim(-2)) * input.dim(-1);
    if (bn.channels() != c) {
        throw ShapeError("batch_norm: parameters for " + std::to_string(bn.channels()) + " channels, input has " +
                         std::to_string(c));
    }
    const std::size_t count = plane * batch;
    auto x = input.data();
    auto at = [c, plane](int b, int ch, std::size_t i) { return (static_cast<std::size_t>(b) * c + ch) * plane + i; };

    std::vector<double> mean_c(c), invstd(c);
    for (int ch = 0; ch < c; ++ch) {
        if (training) {
            double s = 0.0;
            for (int b = 0; b < batch; ++b) {
                for (std::size_t i = 0; i < plane; ++i) {
                    s += x[at(b, ch, i)];
                }
            }
            const double mu = s / count;
            double ss = 0.0;
            for (int b = 0; b < batch; ++b) {
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = x[at(b, ch, i)] - mu;
                    ss += d * d;
                }
            }
            const double var = ss / count;
            mean_c[ch] = mu;
            invstd[ch] = 1.0 / std::sqrt(var + bn.eps);
            if (update_running) {
                const double unbiased = count > 1 ? ss / (count - 1) : var;
                bn.running_mean[ch] = (1.0 - bn.momentum) * bn.running_mean[ch] + bn.momentum * mu;
                bn.running_var[ch] = (1.0 - bn.momentum) * bn.running_var[ch] + bn.momentum * unbiased;
            }
        } else {
            mean_c[ch] = bn.running_mean[ch];
            invstd[ch] = 1.0 / std::sqrt(bn.running_var[ch] + bn.eps);
        }
    }

    auto gamma = bn.gamma.data();
    auto beta = bn.beta.data();
    std::vector<double> xhat(input.numel());
    std::vector<double> out(input.numel());
    for (int b = 0; b < batch; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t k = at(b, ch, i);
                xhat[k] = (x[k] - mean_c[ch]) * invstd[ch];
                out[k] = gamma[ch] * xhat[k] + beta[ch];
            }
        }
    }

    Tensor gamma_t = bn.gamma;
    const bool need_x = input.requires_grad();
    return OpRecorder::make(
        "batch_norm", input.shape(), std::move(out), {input, bn.gamma, bn.beta},
        [=, xhat = std::move(xhat)](std::span<const double> go) {
            Grads grads(3);
            auto gm = gamma_t.data();
            grads[1].assign(c, 0.0);
            grads[2].assign(c, 0.0);
            for (int b = 0; b < batch; ++b) {
                for (int ch = 0; ch < c; ++ch) {
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::size_t k = at(b, ch, i);
                        grads[1][ch] += go[k] * xhat[k];
                        grads[2][ch] += go[k];
                    }
                }
            }
            if (need_x) {
                grads[0].resize(go.size());
                for (int ch = 0; ch < c; ++ch) {
                    if (training) {
                        // dx = invstd/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                        const double sum_dxhat = grads[2][ch] * gm[ch];
                        const double sum_dxhat_xhat = grads[1][ch] * gm[ch];
                        const double n = static_cast<double>(count);
                        for (int b = 0; b < batch; ++b) {
                            for (std::size_t i = 0; i < plane; ++i) {
                                const std::size_t k = at(b, ch, i);
                                const double dxhat = go[k] * gm[ch];
                                grads[0][k] = invstd[ch] / n * (n * dxhat - sum_dxhat - xhat[k] * sum_dxhat_xhat);
                            }
                        }
                    } else {
                        for (int b = 0; b < batch; ++b) {
                            for (std::size_t i = 0; i < plane; ++i) {
                                const std::size_t k = at(b, ch, i);
                                grads[0][k] = go[k] * gm[ch] * invstd[ch];
                            }
                        }
                    }
                }
            }
            return grads;
        });
}

Tensor batch_norm(const Tensor& input, BatchNorm& bn, NormMode mode) {
    return batch_norm(input, bn, mode != NormMode::running, mode == NormMode::train);
}

Tensor sum(const Tensor& input) {
    const double s = std::accumulate(input.data().begin(), input.data().end(), 0.0);
    const std::size_t n = input.numel();
    return OpRecorder::make("sum", {1}, {s}, {input},
                            [n](std::span<const double> go) { return Grads{std::vector<double>(n, go[0])}; });
}

Tensor mean(const Tensor& input) { return mul(sum(input), 1.0 / static_cast<double>(input.numel())); }

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 1) {
        throw ShapeError("softmax: expected a rank-1 tensor");
    }
    auto z = logits.data();
    const double zmax = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - zmax);
        total += p[i];
    }
    for (double& v : p) {
        v /= total;
    }
    std::vector<double> saved = p;
    return OpRecorder::make("softmax", logits.shape(), std::move(p), {logits},
                            [saved = std::move(saved)](std::span<const double> go) {
                                double dot = 0.0;
                                for (std::size_t i = 0; i < saved.size(); ++i) {
                                    dot += go[i] * saved[i];
                                }
                                Grads grads(1, std::vector<double>(saved.size()));
                                for (std::size_t i = 0; i < saved.size(); ++i) {
                                    grads[0][i] = saved[i] * (go[i] - dot);
                                }
                                return grads;
                            });
}

Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& weights) {
    if (xs.empty() || weights.rank() != 1 || weights.dim(0) != static_cast<int>(xs.size())) {
        throw ShapeError("weighted_sum: need B tensors and a [B] weight vector");
    }
    const Shape& shape = xs[0].shape();
    for (const Tensor& x : xs) {
        if (x.shape() != shape) {
            throw ShapeError("weighted_sum: shape mismatch " + shape_str(shape) + " vs " + shape_str(x.shape()));
        }
    }
    const std::size_t n = xs[0].numel();
    auto w = weights.data();
    std::vector<double> out(n, 0.0);
    for (std::size_t b = 0; b < xs.size(); ++b) {
        auto x = xs[b].data();
        for (std::size_t i = 0; i < n; ++i) {
            out[i] += w[b] * x[i];
        }
    }
    std::vector<Tensor> inputs = xs;
    inputs.push_back(weights);
    return OpRecorder::make("weighted_sum", shape, std::move(out), inputs, [xs, weights, n](std::span<const double> go) {
        Grads grads(xs.size() + 1);
        auto wv = weights.data();
        grads.back().assign(xs.size(), 0.0);
        for (std::size_t b = 0; b < xs.size(); ++b) {
            auto x = xs[b].data();
            grads[b].resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                grads[b][i] = wv[b] * go[i];
                grads.back()[b] += go[i] * x[i];
            }
        }
        return grads;
    });
}

}  // namespace dcfg
