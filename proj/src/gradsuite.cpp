#include "dcfg/gradsuite.hpp"

#include <functional>
#include <numeric>

#include "dcfg/cfgb.hpp"
#include "dcfg/losses.hpp"
#include "dcfg/ops.hpp"
#include "dcfg/suppression.hpp"

namespace dcfg {

namespace {

Tensor random_tensor(const Shape& shape, CounterRng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor::from(shape, std::move(v), requires_grad);
}

// Scalar readout of a non-scalar op: a fixed random projection.
Tensor project(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

struct Suite {
    int probes;
    std::uint64_t seed;
    CounterRng rng;
    std::vector<GradSuiteEntry> entries;

    void run(const std::string& name, const std::function<Tensor()>& loss, std::vector<Tensor> params) {
        entries.push_back({name, check_gradients(loss, std::move(params), probes, seed + entries.size())});
    }

    Tensor input(const Shape& shape, double lo = -1.0, double hi = 1.0) {
        return random_tensor(shape, rng, lo, hi, true);
    }
    Tensor readout(const Shape& shape) { return random_tensor(shape, rng); }
};

}  // namespace

TrackerConfig toy_tracker_config() {
    TrackerConfig c;
    c.template_size = 16;
    c.search_size = 32;
    c.widths = {4, 8, 8};
    c.head_hidden = 4;
    c.dccfg.n_groups = 2;
    c.dccfg.groups = 2;
    c.dccfg.blocks = 1;
    c.dccfg.sigma = 1.0;
    return c;
}

void jitter_parameters(StateDict& state, CounterRng& rng, double amount) {
    for (Tensor& p : state.parameters()) {
        for (double& v : p.mutable_data()) {
            v += rng.uniform(-amount, amount);
        }
    }
}

std::vector<GradSuiteEntry> run_gradient_suite(int probes, std::uint64_t seed) {
    Suite s{probes, seed, CounterRng(seed), {}};

    {
        Tensor x = s.input({3, 7, 7});
        Tensor w = s.input({4, 3, 3, 3});
        Tensor b = s.input({4});
        Tensor r = s.readout({4, 4, 4});
        s.run("conv2d dense stride 2 pad 1", [&] { return project(conv2d(x, w, b, 2, 1, 1), r); }, {x, w, b});
    }
    {
        Tensor x = s.input({4, 6, 6});
        Tensor w = s.input({6, 2, 1, 1});
        Tensor r = s.readout({6, 6, 6});
        s.run("conv2d grouped pointwise", [&] { return project(conv2d(x, w, Tensor(), 1, 0, 2), r); }, {x, w});
    }
    {
        Tensor x = s.input({4, 6, 6});
        Tensor w = s.input({4, 1, 3, 3});
        Tensor r = s.readout({4, 3, 3});
        s.run("conv2d depthwise stride 2", [&] { return project(conv2d(x, w, Tensor(), 2, 1, 4), r); }, {x, w});
    }
    {
        Tensor x = s.input({2, 3, 5, 5});
        Tensor w = s.input({2, 3, 3, 3});
        Tensor r = s.readout({2, 2, 3, 3});
        s.run("conv2d batched", [&] { return project(conv2d(x, w, Tensor(), 1, 0, 1), r); }, {x, w});
    }
    {
        Tensor x = s.input({5, 3, 3});
        const std::vector<int> perm{3, 0, 4, 2, 1};
        Tensor r = s.readout({5, 3, 3});
        s.run("channel_shuffle", [&] { return project(channel_shuffle(x, perm), r); }, {x});
    }
    {
        Tensor x = s.input({5, 3, 3});
        Tensor y = s.input({2, 3, 3});
        Tensor ra = s.readout({2, 3, 3});
        Tensor rb = s.readout({3, 3, 3});
        Tensor rc = s.readout({7, 3, 3});
        s.run("split_channels", [&] {
            auto [a, b] = split_channels(x, 2);
            return add(project(a, ra), project(b, rb));
        }, {x});
        s.run("concat_channels", [&] { return project(concat_channels(x, y), rc); }, {x, y});
        Tensor rs = s.readout({2, 3, 3});
        s.run("slice_channels", [&] { return project(slice_channels(x, 1, 2), rs); }, {x});
        Tensor rp = s.readout({8, 3, 3});
        s.run("pad_channels", [&] { return project(pad_channels(x, 2, 1), rp); }, {x});
        Tensor rm = s.readout({1, 3, 3});
        s.run("channel_mean", [&] { return project(channel_mean(x), rm); }, {x});
    }
    {
        Tensor a = s.input({3, 4, 4});
        Tensor b = s.input({4, 4});
        Tensor c = s.input({3, 4, 4});
        Tensor r = s.readout({3, 4, 4});
        s.run("mul and add with broadcast", [&] { return project(mul(add(mul(a, b), c), add(c, 0.5)), r); },
              {a, b, c});
        s.run("mul by scalar", [&] { return project(mul(a, -1.7), r); }, {a});
        s.run("relu", [&] { return project(relu(a), r); }, {a});
        s.run("exp", [&] { return project(exp(a), r); }, {a});
        s.run("sum and mean", [&] { return add(mul(sum(mul(a, a)), 0.3), mean(mul(c, a))); }, {a, c});
    }
    {
        BatchNorm bn(3);
        bn.running_mean = {0.1, -0.2, 0.3};
        bn.running_var = {0.5, 1.5, 2.0};
        bn.gamma.mutable_data()[1] = 1.7;
        bn.beta.mutable_data()[2] = -0.4;
        Tensor x = s.input({3, 4, 5}, -2.0, 2.0);
        Tensor r = s.readout({3, 4, 5});
        s.run("batch_norm batch statistics",
              [&] { return project(batch_norm(x, bn, NormMode::batch_stats), r); }, {x, bn.gamma, bn.beta});
        s.run("batch_norm running statistics",
              [&] { return project(batch_norm(x, bn, NormMode::running), r); }, {x, bn.gamma, bn.beta});
    }
    {
        Tensor logits = s.input({3});
        Tensor a = s.input({2, 3, 3});
        Tensor b = s.input({2, 3, 3});
        Tensor c = s.input({2, 3, 3});
        Tensor r = s.readout({2, 3, 3});
        s.run("softmax weighted_sum",
              [&] { return project(weighted_sum({a, b, c}, softmax(logits)), r); }, {logits, a, b, c});
    }
    {
        Tensor feats = s.input({8, 5, 5});
        Tensor r = s.readout({8, 5, 5});
        s.run("group suppression", [&] {
            GroupedTemplateFeatures g = partition_groups(feats, 4, 1, 0.7);
            const SuppressionMask m = build_mask(locate_peak(g.groups[1]).peak, 5, 5, 1.5, MaskMode::peak_normalized);
            return project(concat_channels(suppress(g, m)), r);
        }, {feats});
    }
    {
        Tensor t = s.input({3, 3, 3});
        Tensor x = s.input({3, 7, 7});
        Tensor r = s.readout({3, 5, 5});
        s.run("dw_xcorr", [&] { return project(dw_xcorr(t, x), r); }, {t, x});
    }
    {
        CfgbConfig cfg;
        cfg.channels = 8;
        cfg.groups = 2;
        cfg.shuffle_seed = 3;
        CounterRng init(seed + 101);
        CfgbBlock block = CfgbBlock::init(cfg, init);
        StateDict st;
        block.collect(st, "b");
        jitter_parameters(st, init, 0.1);
        Tensor x = s.input({8, 5, 5});
        Tensor r = s.readout({8, 5, 5});
        std::vector<Tensor> params = st.parameters();
        params.push_back(x);
        s.run("cfgb block", [&] { return project(cfgb_forward(x, block, NormMode::batch_stats), r); }, params);
    }
    {
        const ResponseGrid grid{5, 4, 8.0};
        const BBox gt{17.3, 14.2, 9.0, 7.5};
        const LabelMap labels = assign_labels(grid, gt, 1);
        Tensor logits = s.input({1, 5, 5}, -2.0, 2.0);
        Tensor reg = s.input({4, 5, 5}, 2.0, 8.0);
        s.run("cls_loss", [&] { return cls_loss(logits, labels.labels); }, {logits});
        s.run("reg_loss", [&] { return reg_loss(reg, grid, gt, labels.labels, 32.0, 1.0, 1.0); }, {reg});
    }
    {
        std::vector<Tensor> maps;
        for (int i = 0; i < 4; ++i) {
            maps.push_back(s.input({1, 4, 4}));
        }
        Tensor r = s.readout({4, 4});
        s.run("corr_matrix", [&] { return project(corr_matrix(maps), r); }, maps);
        s.run("dcfg_loss", [&] { return dcfg_loss(maps); }, maps);
    }
    {
        CounterRng init(seed + 202);
        TrackerConfig tcfg = toy_tracker_config();
        tcfg.branches = 2;
        TrackerModel model(tcfg, seed + 7);
        jitter_parameters(model.state(), init, 0.1);
        Tensor tmpl = random_tensor({1, 16, 16}, init);
        Tensor search = random_tensor({1, 32, 32}, init);
        const BBox gt{15.0, 17.0, 8.0, 6.0};
        const LossConfig lcfg;
        s.run("total_loss end to end", [&] {
            return total_loss(model.forward_pair(tmpl, search, 1, NormMode::train), gt, model.grid(), lcfg, 32.0)
                .total;
        }, model.state().parameters());
    }
    return s.entries;
}

}  // namespace dcfg
