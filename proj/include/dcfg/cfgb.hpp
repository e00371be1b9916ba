#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcfg/ops.hpp"
#include "dcfg/rng.hpp"
#include "dcfg/state.hpp"
#include "dcfg/suppression.hpp"

namespace dcfg {

struct CfgbConfig {
    int channels = 32;
    /// Channels passed through untouched on the stride-1 path; -1 means channels / 2.
    int split = -1;
    int stride = 1;
    /// Groups of the two pointwise convolutions.
    int groups = 8;
    /// Seeds the fixed channel permutation.
    std::uint64_t shuffle_seed = 0;

    int identity_channels() const;
    /// Width of the three-convolution branch.
    int transform_channels() const;
    void validate() const;
};

/// Parameters of one cross-channel fine-grained feature block.
///
/// Transform branch: 1x1 grouped conv, BN, ReLU, 3x3 depthwise conv (pad 1,
/// carries the stride), BN, 1x1 grouped conv, BN, ReLU. No conv biases since
/// every conv is followed by BN.
struct CfgbBlock {
    CfgbConfig config;
    Tensor pointwise_in;  // [T, T/g, 1, 1]
    BatchNorm bn_in;
    Tensor depthwise;  // [T, 1, 3, 3]
    BatchNorm bn_depthwise;
    Tensor pointwise_out;  // [T, T/g, 1, 1]
    BatchNorm bn_out;
    std::vector<int> shuffle_perm;  // out[i] = concat[shuffle_perm[i]]

    /// He-normal conv weights, unit BN, seeded random permutation.
    static CfgbBlock init(const CfgbConfig& config, CounterRng& rng);
    /// Convs that copy their input, unit BN, identity permutation.
    static CfgbBlock identity(const CfgbConfig& config);

    void collect(StateDict& state, const std::string& prefix);
};

/// [C,H,W] -> [C,H',W'].
Tensor cfgb_forward(const Tensor& x, CfgbBlock& block, NormMode mode);

/// Weights (plus `out` biases when `bias`) of a 1x1 conv.
long long pointwise_parameter_count(int in_channels, int out_channels, int groups, bool bias);

/// Learnable scalars of one block, BN affine parameters included.
long long count_parameters(const CfgbConfig& config);

struct DccfgConfig {
    /// Feature groups; 0 disables the fine-grained group path.
    int n_groups = 8;
    double alpha = 0.7;
    double sigma = 2.0;
    MaskMode mask_mode = MaskMode::peak_normalized;
    int blocks = 2;
    int groups = 8;
    int split = -1;

    CfgbConfig block_config(int channels, std::uint64_t shuffle_seed) const;
    void validate(int channels) const;
};

/// Stride-1 CFGB blocks applied in sequence. One stack serves the template
/// and search branches and every feature group.
struct CfgbStack {
    std::vector<CfgbBlock> blocks;

    static CfgbStack init(const DccfgConfig& config, int channels, CounterRng& rng);
    Tensor forward(const Tensor& x, NormMode mode);
    void collect(StateDict& state, const std::string& prefix);
    long long parameter_count() const;
};

struct DccfgOutput {
    SuppressionMask mask;
    std::vector<Tensor> group_features;  // per group, [C,H,W]
    std::vector<Tensor> compressed;      // per group channel mean, [1,H,W]
};

/// Peak search on the mask group, mask construction, suppression, then each
/// suppressed group (zero-embedded at its own channel slots so the stack
/// sees full-width input) through the shared stack. Group passes use batch
/// statistics without touching the running ones when `mode` is train.
DccfgOutput dccfg_forward(GroupedTemplateFeatures& template_groups, const DccfgConfig& config, CfgbStack& stack,
                          NormMode mode);

}  // namespace dcfg
