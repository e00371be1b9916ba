#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcfg/cfgb.hpp"
#include "dcfg/image.hpp"
#include "dcfg/ops.hpp"
#include "dcfg/state.hpp"

namespace dcfg {

struct BBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x1() const { return cx - w / 2; }
    double y1() const { return cy - h / 2; }
    double x2() const { return cx + w / 2; }
    double y2() const { return cy + h / 2; }
    bool valid() const;
    static BBox from_corners(double x1, double y1, double x2, double y2);
    bool operator==(const BBox&) const = default;
};

double iou(const BBox& a, const BBox& b);

struct HeadOutput {
    Tensor cls;  // [1,Hm,Wm] logits
    Tensor reg;  // [4,Hm,Wm] (l,t,r,b) pixel distances, > 0
};

struct TrackerConfig {
    int template_size = 32;
    int search_size = 64;
    /// Backbone stage widths; the last one is the feature width C. Strides are 2, 2, 1.
    std::vector<int> widths{16, 32, 32};
    /// Head branches, tapped from the last `branches` backbone stages.
    int branches = 1;
    /// CFGB stacks in front of the correlation; off gives the plain baseline.
    bool use_dccfg = true;
    DccfgConfig dccfg;
    int head_hidden = 16;
    /// Apply group suppression to the template at inference as well.
    bool suppress_at_inference = false;
    /// Weight of the new size in the exponential size update.
    double size_smoothing = 0.3;
    /// BN behaviour at inference: running statistics or per-patch statistics.
    NormMode inference_norm = NormMode::batch_stats;

    int feature_channels() const { return widths.back(); }
    int total_stride() const { return 4; }
    /// Group count actually used by the fine-grained path (0 when disabled).
    int active_groups() const { return use_dccfg ? dccfg.n_groups : 0; }
    void validate() const;
};

/// Per-channel valid cross-correlation of a template over a search map.
/// [C,ht,wt] x [C,hs,ws] -> [C,hs-ht+1,ws-wt+1].
Tensor dw_xcorr(const Tensor& template_feat, const Tensor& search_feat);

/// Maps response-map cells to search-patch pixel coordinates.
struct ResponseGrid {
    int size = 0;  // Hm == Wm
    int stride = 4;
    double offset = 0.0;

    double cell_center(int j) const { return offset + stride * static_cast<double>(j); }
    /// Closest cell to a patch coordinate, clamped to the grid.
    int nearest_cell(double u) const;
};

/// Box in search-patch coordinates from the (l,t,r,b) distances at one cell.
BBox decode_box(const HeadOutput& head, int row, int col, const ResponseGrid& grid);

struct Backbone {
    std::vector<Tensor> conv;  // [w_i, w_{i-1}, 3, 3]
    std::vector<BatchNorm> bn;
    std::vector<int> strides{2, 2, 1};

    static Backbone init(const std::vector<int>& widths, CounterRng& rng);
    /// Output of every stage.
    std::vector<Tensor> forward(const Tensor& image, NormMode mode);
    void collect(StateDict& state, const std::string& prefix);
};

struct Head {
    Tensor cls_conv;  // [hidden, C, 3, 3]
    BatchNorm cls_bn;
    Tensor cls_out;  // [1, hidden, 1, 1]
    Tensor cls_bias;
    Tensor reg_conv;
    BatchNorm reg_bn;
    Tensor reg_out;  // [4, hidden, 1, 1]
    Tensor reg_bias;

    static Head init(int channels, int hidden, CounterRng& rng);
    HeadOutput forward(const Tensor& corr, NormMode mode);
    void collect(StateDict& state, const std::string& prefix);
};

/// softmax(logits)-weighted combination of the cls maps and of the reg maps.
HeadOutput fuse_branches(const std::vector<HeadOutput>& outputs, const Tensor& logits);

/// One head branch: optional 1x1 adapter from its backbone tap, a CFGB
/// stack, and a head.
struct Branch {
    int tap = 0;
    Tensor adapter;  // undefined when the tap already has C channels at stride 4
    int adapter_stride = 1;
    BatchNorm adapter_bn;
    CfgbStack stack;
    Head head;
};

struct PairForward {
    std::vector<HeadOutput> normal;                 // per branch
    std::vector<std::vector<HeadOutput>> groups;    // [branch][group]
    std::vector<std::vector<Tensor>> compressed;    // [branch][group], [1,h,w]
    HeadOutput fused;
};

class TrackerModel {
public:
    TrackerModel(const TrackerConfig& config, std::uint64_t seed);
    TrackerModel(const TrackerModel&) = delete;
    TrackerModel& operator=(const TrackerModel&) = delete;

    const TrackerConfig& config() const { return config_; }
    StateDict& state() { return state_; }
    const StateDict& state() const { return state_; }
    ResponseGrid grid() const;

    /// Training forward on one (template, search) pair of standardised
    /// patches. The fine-grained path runs when `mask_group` >= 0 and the
    /// config enables it.
    PairForward forward_pair(const Tensor& template_patch, const Tensor& search_patch, int mask_group,
                             NormMode mode);

    /// Per-branch template features as seen by the correlation.
    std::vector<Tensor> template_features(const Tensor& template_patch, NormMode mode, bool suppressed);
    HeadOutput respond(const std::vector<Tensor>& template_feats, const Tensor& search_patch, NormMode mode);

    /// Per-branch compressed group maps of a template, mask on group 0.
    std::vector<std::vector<Tensor>> group_maps(const Tensor& template_patch, int n_groups, NormMode mode);

private:
    std::vector<Tensor> branch_inputs(const Tensor& patch, NormMode mode);

    TrackerConfig config_;
    Backbone backbone_;
    std::vector<Branch> branches_;
    Tensor fusion_logits_;  // [B]
    StateDict state_;
};

struct TrackResult {
    BBox box;
    double score = 0.0;
};

/// Single-target tracker over a frame sequence. Holds mutable state; use
/// one instance per sequence.
class Tracker {
public:
    explicit Tracker(TrackerModel& model);
    void init(const Image& frame, const BBox& box);
    TrackResult step(const Image& frame);
    const BBox& state() const { return box_; }

private:
    TrackerModel& model_;
    std::vector<Tensor> template_feats_;
    BBox box_;
    bool ready_ = false;
};

}  // namespace dcfg
