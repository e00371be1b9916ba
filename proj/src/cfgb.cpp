#include "dcfg/cfgb.hpp"

#include <cmath>
#include <numeric>

namespace dcfg {

namespace {

Tensor he_normal(const Shape& shape, int fan_in, CounterRng& rng) {
    const double sd = std::sqrt(2.0 / fan_in);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.normal(0.0, sd);
    }
    return Tensor::from(shape, std::move(v), true);
}

std::vector<int> random_permutation(int n, CounterRng& rng) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    return perm;
}

// 1x1 grouped conv weight that copies its input.
Tensor identity_pointwise(int channels, int groups) {
    const int per = channels / groups;
    std::vector<double> w(static_cast<std::size_t>(channels) * per, 0.0);
    for (int o = 0; o < channels; ++o) {
        w[static_cast<std::size_t>(o) * per + o % per] = 1.0;
    }
    return Tensor::from({channels, per, 1, 1}, std::move(w), true);
}

}  // namespace

int CfgbConfig::identity_channels() const {
    if (stride > 1) {
        return 0;
    }
    return split < 0 ? channels / 2 : split;
}

int CfgbConfig::transform_channels() const { return channels - identity_channels(); }

void CfgbConfig::validate() const {
    if (channels < 1) {
        throw ShapeError("cfgb: channels must be positive");
    }
    if (stride < 1) {
        throw ShapeError("cfgb: stride must be >= 1");
    }
    if (stride == 1 && (identity_channels() < 1 || identity_channels() >= channels)) {
        throw ShapeError("cfgb: split " + std::to_string(identity_channels()) + " must lie in [1, " +
                         std::to_string(channels - 1) + "]");
    }
    if (groups < 1 || transform_channels() % groups != 0) {
        throw ShapeError("cfgb: " + std::to_string(groups) + " groups do not divide the " +
                         std::to_string(transform_channels()) + " transformed channels");
    }
}

CfgbBlock CfgbBlock::init(const CfgbConfig& config, CounterRng& rng) {
    config.validate();
    const int t = config.transform_channels();
    const int per = t / config.groups;
    CfgbBlock b;
    b.config = config;
    b.pointwise_in = he_normal({t, per, 1, 1}, per, rng);
    b.bn_in = BatchNorm(t);
    b.depthwise = he_normal({t, 1, 3, 3}, 9, rng);
    b.bn_depthwise = BatchNorm(t);
    b.pointwise_out = he_normal({t, per, 1, 1}, per, rng);
    b.bn_out = BatchNorm(t);
    CounterRng shuffle_rng(config.shuffle_seed);
    b.shuffle_perm = random_permutation(config.channels, shuffle_rng);
    return b;
}

CfgbBlock CfgbBlock::identity(const CfgbConfig& config) {
    config.validate();
    const int t = config.transform_channels();
    CfgbBlock b;
    b.config = config;
    b.pointwise_in = identity_pointwise(t, config.groups);
    b.bn_in = BatchNorm(t);
    std::vector<double> dw(static_cast<std::size_t>(t) * 9, 0.0);
    for (int c = 0; c < t; ++c) {
        dw[static_cast<std::size_t>(c) * 9 + 4] = 1.0;
    }
    b.depthwise = Tensor::from({t, 1, 3, 3}, std::move(dw), true);
    b.bn_depthwise = BatchNorm(t);
    b.pointwise_out = identity_pointwise(t, config.groups);
    b.bn_out = BatchNorm(t);
    b.shuffle_perm.resize(static_cast<std::size_t>(config.channels));
    std::iota(b.shuffle_perm.begin(), b.shuffle_perm.end(), 0);
    return b;
}

void CfgbBlock::collect(StateDict& state, const std::string& prefix) {
    state.add_param(prefix + ".pointwise_in", pointwise_in);
    state.add_batch_norm(prefix + ".bn_in", bn_in);
    state.add_param(prefix + ".depthwise", depthwise);
    state.add_batch_norm(prefix + ".bn_depthwise", bn_depthwise);
    state.add_param(prefix + ".pointwise_out", pointwise_out);
    state.add_batch_norm(prefix + ".bn_out", bn_out);
}

Tensor cfgb_forward(const Tensor& x, CfgbBlock& block, NormMode mode) {
    const CfgbConfig& cfg = block.config;
    if (x.rank() != 3 || x.dim(0) != cfg.channels) {
        throw ShapeError("cfgb_forward: expected [" + std::to_string(cfg.channels) + ",H,W], got " +
                         shape_str(x.shape()));
    }
    Tensor kept;
    Tensor branch = x;
    if (cfg.stride == 1) {
        std::tie(kept, branch) = split_channels(x, cfg.identity_channels());
    }
    const int t = cfg.transform_channels();
    Tensor none;
    Tensor h = conv2d(branch, block.pointwise_in, none, 1, 0, cfg.groups);
    h = relu(batch_norm(h, block.bn_in, mode));
    h = conv2d(h, block.depthwise, none, cfg.stride, 1, t);
    h = batch_norm(h, block.bn_depthwise, mode);
    h = conv2d(h, block.pointwise_out, none, 1, 0, cfg.groups);
    h = relu(batch_norm(h, block.bn_out, mode));
    Tensor joined = cfg.stride == 1 ? concat_channels(kept, h) : h;
    return channel_shuffle(joined, block.shuffle_perm);
}

long long pointwise_parameter_count(int in_channels, int out_channels, int groups, bool bias) {
    if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
        throw ShapeError("pointwise_parameter_count: groups must divide both channel counts");
    }
    return static_cast<long long>(in_channels / groups) * out_channels + (bias ? out_channels : 0);
}

long long count_parameters(const CfgbConfig& config) {
    config.validate();
    const int t = config.transform_channels();
    const long long pointwise = 2 * pointwise_parameter_count(t, t, config.groups, false);
    const long long depthwise = 9LL * t;
    const long long bn = 3LL * 2 * t;
    return pointwise + depthwise + bn;
}

CfgbConfig DccfgConfig::block_config(int channels, std::uint64_t shuffle_seed) const {
    CfgbConfig c;
    c.channels = channels;
    c.split = split;
    c.stride = 1;
    c.groups = groups;
    c.shuffle_seed = shuffle_seed;
    return c;
}

void DccfgConfig::validate(int channels) const {
    if (n_groups < 0) {
        throw ShapeError("dccfg: group count must be >= 0");
    }
    if (n_groups > 0 && channels % n_groups != 0) {
        throw ShapeError("dccfg: " + std::to_string(n_groups) + " groups do not divide " +
                         std::to_string(channels) + " channels");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ShapeError("dccfg: alpha must lie in [0,1]");
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw ShapeError("dccfg: sigma must be positive");
    }
    if (blocks < 0) {
        throw ShapeError("dccfg: block count must be >= 0");
    }
    if (blocks > 0) {
        block_config(channels, 0).validate();
    }
}

CfgbStack CfgbStack::init(const DccfgConfig& config, int channels, CounterRng& rng) {
    config.validate(channels);
    CfgbStack s;
    for (int i = 0; i < config.blocks; ++i) {
        const std::uint64_t shuffle_seed = rng.next_u64();
        s.blocks.push_back(CfgbBlock::init(config.block_config(channels, shuffle_seed), rng));
    }
    return s;
}

Tensor CfgbStack::forward(const Tensor& x, NormMode mode) {
    Tensor h = x;
    for (CfgbBlock& b : blocks) {
        h = cfgb_forward(h, b, mode);
    }
    return h;
}

void CfgbStack::collect(StateDict& state, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].collect(state, prefix + "." + std::to_string(i));
    }
}

long long CfgbStack::parameter_count() const {
    long long n = 0;
    for (const CfgbBlock& b : blocks) {
        n += count_parameters(b.config);
    }
    return n;
}

DccfgOutput dccfg_forward(GroupedTemplateFeatures& template_groups, const DccfgConfig& config, CfgbStack& stack,
                          NormMode mode) {
    const int n = template_groups.size();
    if (n < 1) {
        throw ShapeError("dccfg_forward: no feature groups");
    }
    const Tensor& mask_group = template_groups.groups[static_cast<std::size_t>(template_groups.mask_group)];
    const int per = mask_group.dim(0);
    const int h = mask_group.dim(1);
    const int w = mask_group.dim(2);

    DccfgOutput out;
    out.mask = build_mask(locate_peak(mask_group).peak, h, w, config.sigma, config.mask_mode);
    const auto& suppressed = suppress(template_groups, out.mask);
    const NormMode group_mode = mode == NormMode::train ? NormMode::batch_stats : mode;
    for (int k = 0; k < n; ++k) {
        const Tensor& g = suppressed[static_cast<std::size_t>(k)];
        Tensor embedded = n == 1 ? g : pad_channels(g, k * per, (n - 1 - k) * per);
        Tensor f = stack.forward(embedded, group_mode);
        out.compressed.push_back(channel_mean(f));
        out.group_features.push_back(std::move(f));
    }
    return out;
}

}  // namespace dcfg
