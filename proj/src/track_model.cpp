#include "dcfg/track_model.hpp"

#include <algorithm>
#include <cmath>

#include "dcfg/kernels.hpp"

namespace dcfg {

namespace {

using Grads = std::vector<std::vector<double>>;

Tensor normal_tensor(const Shape& shape, double sd, CounterRng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.normal(0.0, sd);
    }
    return Tensor::from(shape, std::move(v), true);
}

Tensor he_conv(int out_c, int in_c, int k, CounterRng& rng) {
    return normal_tensor({out_c, in_c, k, k}, std::sqrt(2.0 / (in_c * k * k)), rng);
}

}  // namespace

bool BBox::valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) && w > 0.0 && h > 0.0;
}

BBox BBox::from_corners(double x1, double y1, double x2, double y2) {
    return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
}

double iou(const BBox& a, const BBox& b) {
    const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
    const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

void TrackerConfig::validate() const {
    if (template_size < 4 || template_size % 4 != 0 || search_size % 4 != 0) {
        throw ShapeError("tracker: template and search sizes must be positive multiples of 4");
    }
    if (search_size <= template_size) {
        throw ShapeError("tracker: search size must exceed template size");
    }
    if (widths.size() != 3) {
        throw ShapeError("tracker: the backbone has exactly 3 stages");
    }
    for (int w : widths) {
        if (w < 1) {
            throw ShapeError("tracker: stage widths must be positive");
        }
    }
    if (branches < 1 || branches > 3) {
        throw ShapeError("tracker: branches must lie in [1, 3]");
    }
    if (head_hidden < 1) {
        throw ShapeError("tracker: head width must be positive");
    }
    if (!(size_smoothing >= 0.0 && size_smoothing <= 1.0)) {
        throw ShapeError("tracker: size smoothing must lie in [0,1]");
    }
    dccfg.validate(feature_channels());
}

Tensor dw_xcorr(const Tensor& template_feat, const Tensor& search_feat) {
    if (template_feat.rank() != 3 || search_feat.rank() != 3 || template_feat.dim(0) != search_feat.dim(0)) {
        throw ShapeError("dw_xcorr: expected [C,ht,wt] and [C,hs,ws], got " + shape_str(template_feat.shape()) +
                         " and " + shape_str(search_feat.shape()));
    }
    kernels::XcorrGeometry g;
    g.channels = template_feat.dim(0);
    g.t_h = template_feat.dim(1);
    g.t_w = template_feat.dim(2);
    g.s_h = search_feat.dim(1);
    g.s_w = search_feat.dim(2);
    if (g.t_h > g.s_h || g.t_w > g.s_w) {
        throw ShapeError("dw_xcorr: template " + shape_str(template_feat.shape()) + " larger than search " +
                         shape_str(search_feat.shape()));
    }
    std::vector<double> out(static_cast<std::size_t>(g.channels) * g.out_h() * g.out_w());
    kernels::parallel::xcorr_forward(g, template_feat.data(), search_feat.data(), out);
    const bool need_t = template_feat.requires_grad();
    const bool need_s = search_feat.requires_grad();
    return OpRecorder::make("dw_xcorr", {g.channels, g.out_h(), g.out_w()}, std::move(out),
                            {template_feat, search_feat}, [=](std::span<const double> go) {
                                Grads grads(2);
                                grads[0].assign(template_feat.numel(), 0.0);
                                grads[1].assign(search_feat.numel(), 0.0);
                                kernels::parallel::xcorr_backward(g, go, template_feat.data(), search_feat.data(),
                                                                  grads[0], grads[1]);
                                if (!need_t) {
                                    grads[0].clear();
                                }
                                if (!need_s) {
                                    grads[1].clear();
                                }
                                return grads;
                            });
}

int ResponseGrid::nearest_cell(double u) const {
    const long j = std::lround((u - offset) / stride);
    return static_cast<int>(std::clamp<long>(j, 0, size - 1));
}

BBox decode_box(const HeadOutput& head, int row, int col, const ResponseGrid& grid) {
    const int hm = head.reg.dim(1);
    const int wm = head.reg.dim(2);
    if (row < 0 || row >= hm || col < 0 || col >= wm) {
        throw ShapeError("decode_box: cell outside the response map");
    }
    const double px = grid.cell_center(col);
    const double py = grid.cell_center(row);
    return BBox::from_corners(px - head.reg.at(0, row, col), py - head.reg.at(1, row, col),
                              px + head.reg.at(2, row, col), py + head.reg.at(3, row, col));
}

Backbone Backbone::init(const std::vector<int>& widths, CounterRng& rng) {
    Backbone b;
    int in_c = 1;
    for (int w : widths) {
        b.conv.push_back(he_conv(w, in_c, 3, rng));
        b.bn.emplace_back(w);
        in_c = w;
    }
    return b;
}

std::vector<Tensor> Backbone::forward(const Tensor& image, NormMode mode) {
    if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0) {
        throw ShapeError("backbone: expected [1,H,W] with H and W divisible by 4, got " + shape_str(image.shape()));
    }
    std::vector<Tensor> taps;
    Tensor h = image;
    Tensor none;
    for (std::size_t i = 0; i < conv.size(); ++i) {
        h = relu(batch_norm(conv2d(h, conv[i], none, strides[i], 1, 1), bn[i], mode));
        taps.push_back(h);
    }
    return taps;
}

void Backbone::collect(StateDict& state, const std::string& prefix) {
    for (std::size_t i = 0; i < conv.size(); ++i) {
        state.add_param(prefix + ".conv" + std::to_string(i), conv[i]);
        state.add_batch_norm(prefix + ".bn" + std::to_string(i), bn[i]);
    }
}

Head Head::init(int channels, int hidden, CounterRng& rng) {
    Head h;
    h.cls_conv = he_conv(hidden, channels, 3, rng);
    h.cls_bn = BatchNorm(hidden);
    h.cls_out = normal_tensor({1, hidden, 1, 1}, 0.01, rng);
    // low foreground prior: most cells are negatives
    h.cls_bias = Tensor::full({1}, -2.0, true);
    h.reg_conv = he_conv(hidden, channels, 3, rng);
    h.reg_bn = BatchNorm(hidden);
    h.reg_out = normal_tensor({4, hidden, 1, 1}, 0.01, rng);
    h.reg_bias = Tensor::full({4}, std::log(6.0), true);
    return h;
}

HeadOutput Head::forward(const Tensor& corr, NormMode mode) {
    Tensor none;
    Tensor c = relu(batch_norm(conv2d(corr, cls_conv, none, 1, 1, 1), cls_bn, mode));
    Tensor r = relu(batch_norm(conv2d(corr, reg_conv, none, 1, 1, 1), reg_bn, mode));
    return {conv2d(c, cls_out, cls_bias, 1, 0, 1), exp(conv2d(r, reg_out, reg_bias, 1, 0, 1))};
}

void Head::collect(StateDict& state, const std::string& prefix) {
    state.add_param(prefix + ".cls_conv", cls_conv);
    state.add_batch_norm(prefix + ".cls_bn", cls_bn);
    state.add_param(prefix + ".cls_out", cls_out);
    state.add_param(prefix + ".cls_bias", cls_bias);
    state.add_param(prefix + ".reg_conv", reg_conv);
    state.add_batch_norm(prefix + ".reg_bn", reg_bn);
    state.add_param(prefix + ".reg_out", reg_out);
    state.add_param(prefix + ".reg_bias", reg_bias);
}

HeadOutput fuse_branches(const std::vector<HeadOutput>& outputs, const Tensor& logits) {
    if (outputs.empty()) {
        throw ShapeError("fuse_branches: no branches");
    }
    if (outputs.size() == 1) {
        return outputs.front();
    }
    if (logits.rank() != 1 || logits.dim(0) != static_cast<int>(outputs.size())) {
        throw ShapeError("fuse_branches: need one logit per branch");
    }
    std::vector<Tensor> cls, reg;
    for (const HeadOutput& o : outputs) {
        if (o.cls.shape() != outputs.front().cls.shape() || o.reg.shape() != outputs.front().reg.shape()) {
            throw ShapeError("fuse_branches: branch outputs differ in shape");
        }
        cls.push_back(o.cls);
        reg.push_back(o.reg);
    }
    Tensor w = softmax(logits);
    return {weighted_sum(cls, w), weighted_sum(reg, w)};
}

TrackerModel::TrackerModel(const TrackerConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    CounterRng rng(seed);
    CounterRng backbone_rng = rng.split(1);
    backbone_ = Backbone::init(config_.widths, backbone_rng);
    backbone_.collect(state_, "backbone");

    const int c = config_.feature_channels();
    const int n_stages = static_cast<int>(config_.widths.size());
    branches_.resize(static_cast<std::size_t>(config_.branches));
    int cumulative_stride[3] = {2, 4, 4};
    for (int b = 0; b < config_.branches; ++b) {
        Branch& br = branches_[static_cast<std::size_t>(b)];
        CounterRng brng = rng.split(100 + static_cast<std::uint64_t>(b));
        const std::string prefix = "branch" + std::to_string(b);
        br.tap = n_stages - config_.branches + b;
        const int tap_width = config_.widths[static_cast<std::size_t>(br.tap)];
        br.adapter_stride = config_.total_stride() / cumulative_stride[br.tap];
        if (tap_width != c || br.adapter_stride != 1) {
            br.adapter = he_conv(c, tap_width, 1, brng);
            br.adapter_bn = BatchNorm(c);
            state_.add_param(prefix + ".adapter", br.adapter);
            state_.add_batch_norm(prefix + ".adapter_bn", br.adapter_bn);
        }
        if (config_.use_dccfg) {
            br.stack = CfgbStack::init(config_.dccfg, c, brng);
            br.stack.collect(state_, prefix + ".cfgb");
        }
        br.head = Head::init(c, config_.head_hidden, brng);
        br.head.collect(state_, prefix + ".head");
    }
    if (config_.branches > 1) {
        fusion_logits_ = Tensor::zeros({config_.branches}, true);
        state_.add_param("fusion_logits", fusion_logits_);
    }
}

ResponseGrid TrackerModel::grid() const {
    ResponseGrid g;
    g.stride = config_.total_stride();
    g.size = (config_.search_size - config_.template_size) / g.stride + 1;
    g.offset = config_.search_size / 2.0 - g.stride * (g.size - 1) / 2.0;
    return g;
}

std::vector<Tensor> TrackerModel::branch_inputs(const Tensor& patch, NormMode mode) {
    std::vector<Tensor> taps = backbone_.forward(patch, mode);
    std::vector<Tensor> out;
    for (Branch& br : branches_) {
        Tensor t = taps[static_cast<std::size_t>(br.tap)];
        if (br.adapter.defined()) {
            Tensor none;
            t = relu(batch_norm(conv2d(t, br.adapter, none, br.adapter_stride, 0, 1), br.adapter_bn, mode));
        }
        out.push_back(t);
    }
    return out;
}

PairForward TrackerModel::forward_pair(const Tensor& template_patch, const Tensor& search_patch, int mask_group,
                                       NormMode mode) {
    if (template_patch.dim(-1) != config_.template_size || search_patch.dim(-1) != config_.search_size) {
        throw ShapeError("forward_pair: patch sizes do not match the tracker config");
    }
    std::vector<Tensor> t_in = branch_inputs(template_patch, mode);
    std::vector<Tensor> s_in = branch_inputs(search_patch, mode);
    const int n = config_.active_groups();
    const bool group_path = n > 0 && mask_group >= 0;
    const NormMode group_mode = mode == NormMode::train ? NormMode::batch_stats : mode;

    PairForward out;
    out.groups.resize(branches_.size());
    out.compressed.resize(branches_.size());
    for (std::size_t b = 0; b < branches_.size(); ++b) {
        Branch& br = branches_[b];
        Tensor tf = br.stack.forward(t_in[b], mode);
        Tensor sf = br.stack.forward(s_in[b], mode);
        out.normal.push_back(br.head.forward(dw_xcorr(tf, sf), mode));
        if (!group_path) {
            continue;
        }
        GroupedTemplateFeatures groups = partition_groups(t_in[b], n, mask_group % n, config_.dccfg.alpha);
        DccfgOutput d = dccfg_forward(groups, config_.dccfg, br.stack, mode);
        for (const Tensor& gf : d.group_features) {
            out.groups[b].push_back(br.head.forward(dw_xcorr(gf, sf), group_mode));
        }
        out.compressed[b] = std::move(d.compressed);
    }
    out.fused = fuse_branches(out.normal, fusion_logits_);
    return out;
}

std::vector<Tensor> TrackerModel::template_features(const Tensor& template_patch, NormMode mode, bool suppressed) {
    std::vector<Tensor> t_in = branch_inputs(template_patch, mode);
    const int n = config_.active_groups();
    std::vector<Tensor> out;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
        Tensor t = t_in[b];
        if (suppressed && n > 0) {
            GroupedTemplateFeatures groups = partition_groups(t, n, 0, config_.dccfg.alpha);
            const Tensor& g0 = groups.groups.front();
            SuppressionMask mask = build_mask(locate_peak(g0).peak, g0.dim(1), g0.dim(2), config_.dccfg.sigma,
                                              config_.dccfg.mask_mode);
            t = concat_channels(suppress(groups, mask));
        }
        out.push_back(branches_[b].stack.forward(t, mode));
    }
    return out;
}

HeadOutput TrackerModel::respond(const std::vector<Tensor>& template_feats, const Tensor& search_patch,
                                 NormMode mode) {
    std::vector<Tensor> s_in = branch_inputs(search_patch, mode);
    std::vector<HeadOutput> outs;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
        Tensor sf = branches_[b].stack.forward(s_in[b], mode);
        outs.push_back(branches_[b].head.forward(dw_xcorr(template_feats[b], sf), mode));
    }
    return fuse_branches(outs, fusion_logits_);
}

std::vector<std::vector<Tensor>> TrackerModel::group_maps(const Tensor& template_patch, int n_groups,
                                                          NormMode mode) {
    std::vector<Tensor> t_in = branch_inputs(template_patch, mode);
    DccfgConfig cfg = config_.dccfg;
    cfg.n_groups = n_groups;
    std::vector<std::vector<Tensor>> out;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
        GroupedTemplateFeatures groups = partition_groups(t_in[b], n_groups, 0, cfg.alpha);
        out.push_back(dccfg_forward(groups, cfg, branches_[b].stack, mode).compressed);
    }
    return out;
}

Tracker::Tracker(TrackerModel& model) : model_(model) {}

void Tracker::init(const Image& frame, const BBox& box) {
    if (!box.valid()) {
        throw ShapeError("tracker init: degenerate box");
    }
    NoGradGuard no_grad;
    const TrackerConfig& cfg = model_.config();
    Patch p = crop_patch(frame, box.cx, box.cy, cfg.template_size);
    template_feats_ = model_.template_features(p.pixels, cfg.inference_norm, cfg.suppress_at_inference);
    box_ = box;
    ready_ = true;
}

TrackResult Tracker::step(const Image& frame) {
    if (!ready_) {
        throw ShapeError("tracker step before init");
    }
    if (!box_.valid()) {
        throw ShapeError("tracker step: degenerate previous box");
    }
    NoGradGuard no_grad;
    const TrackerConfig& cfg = model_.config();
    Patch p = crop_patch(frame, box_.cx, box_.cy, cfg.search_size);
    HeadOutput head = model_.respond(template_feats_, p.pixels, cfg.inference_norm);

    auto logits = head.cls.data();
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    const int wm = head.cls.dim(2);
    const BBox local = decode_box(head, static_cast<int>(best) / wm, static_cast<int>(best) % wm, model_.grid());

    const double s = cfg.size_smoothing;
    const double w = (1.0 - s) * box_.w + s * local.w;
    const double h = (1.0 - s) * box_.h + s * local.h;
    const double cx = p.origin_x + local.cx;
    const double cy = p.origin_y + local.cy;

    const double fw = frame.width;
    const double fh = frame.height;
    double x1 = std::clamp(cx - w / 2, 0.0, fw);
    double x2 = std::clamp(cx + w / 2, 0.0, fw);
    double y1 = std::clamp(cy - h / 2, 0.0, fh);
    double y2 = std::clamp(cy + h / 2, 0.0, fh);
    // keep at least one pixel of extent inside the frame
    if (x2 - x1 < 1.0) {
        x1 = std::clamp(x1, 0.0, fw - 1.0);
        x2 = x1 + 1.0;
    }
    if (y2 - y1 < 1.0) {
        y1 = std::clamp(y1, 0.0, fh - 1.0);
        y2 = y1 + 1.0;
    }
    box_ = BBox::from_corners(x1, y1, x2, y2);
    return {box_, 1.0 / (1.0 + std::exp(-logits[best]))};
}

}  // namespace dcfg
