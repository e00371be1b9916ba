#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "dcfg/gradcheck.hpp"
#include "dcfg/track_model.hpp"
#include "test_util.hpp"

using namespace dcfg;
using dcfg::test::random_tensor;
using dcfg::test::to_vec;

TEST_CASE("dw_xcorr examples") {
    SUBCASE("unit kernel returns the search map") {
        Tensor s = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
        CHECK(to_vec(dw_xcorr(Tensor::from({1, 1, 1}, {1.0}), s)) == to_vec(s));
    }
    SUBCASE("equal sizes give per-channel sums of squares") {
        CounterRng rng(41);
        Tensor a = random_tensor({3, 4, 5}, rng);
        Tensor out = dw_xcorr(a, a);
        REQUIRE(out.shape() == Shape{3, 1, 1});
        for (int c = 0; c < 3; ++c) {
            double ss = 0.0;
            for (int y = 0; y < 4; ++y) {
                for (int x = 0; x < 5; ++x) {
                    ss += a.at(c, y, x) * a.at(c, y, x);
                }
            }
            CHECK(out.data()[c] == doctest::Approx(ss).epsilon(1e-14));
        }
    }
    SUBCASE("2x4x4 over 2x6x6 matches the loop") {
        CounterRng rng(42);
        Tensor t = random_tensor({2, 4, 4}, rng);
        Tensor s = random_tensor({2, 6, 6}, rng);
        CHECK(to_vec(dw_xcorr(t, s)) == test::xcorr_oracle(t, s));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(dw_xcorr(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 3, 5})), ShapeError);
        CHECK_THROWS_AS(dw_xcorr(Tensor::zeros({2, 2, 2}), Tensor::zeros({3, 4, 4})), ShapeError);
    }
}

TEST_CASE("dw_xcorr agrees with the loop oracle on random shapes") {
    CounterRng rng(43);
    for (int trial = 0; trial < 250; ++trial) {
        const int c = rng.uniform_int(1, 4);
        const int sh = rng.uniform_int(1, 8), sw = rng.uniform_int(1, 8);
        const int th = rng.uniform_int(1, sh), tw = rng.uniform_int(1, sw);
        Tensor t = random_tensor({c, th, tw}, rng);
        Tensor s = random_tensor({c, sh, sw}, rng);
        REQUIRE(test::max_abs_diff(to_vec(dw_xcorr(t, s)), test::xcorr_oracle(t, s)) <= 1e-10);
    }
}

TEST_CASE("dw_xcorr gradients") {
    CounterRng rng(44);
    Tensor t = random_tensor({3, 3, 4}, rng, -1, 1, true);
    Tensor s = random_tensor({3, 7, 6}, rng, -1, 1, true);
    Tensor w = random_tensor({3, 5, 3}, rng);
    auto loss = [&] { return sum(mul(dw_xcorr(t, s), w)); };
    CHECK(check_gradients(loss, {t, s}, 80, 45).max_rel_error < 1e-6);
}

TEST_CASE("translation equivariance of the response") {
    // impulse features: shifting the target by d cells shifts the argmax by d
    Tensor tmpl = Tensor::zeros({2, 3, 3});
    std::vector<double> tv = to_vec(tmpl);
    tv[4] = 1.0;
    tv[9 + 4] = 2.0;
    tmpl = Tensor::from({2, 3, 3}, tv);
    auto argmax = [](const Tensor& corr) {
        std::vector<double> sum_c(static_cast<std::size_t>(corr.dim(1)) * corr.dim(2), 0.0);
        for (int c = 0; c < corr.dim(0); ++c) {
            for (std::size_t i = 0; i < sum_c.size(); ++i) {
                sum_c[i] += corr.data()[c * sum_c.size() + i];
            }
        }
        return static_cast<int>(std::max_element(sum_c.begin(), sum_c.end()) - sum_c.begin());
    };
    const int w = 12;
    for (int y = 2; y < 9; ++y) {
        for (int x = 2; x < 9; ++x) {
            std::vector<double> sv(2 * w * w, 0.0);
            sv[y * w + x] = 1.0;
            sv[w * w + y * w + x] = 1.0;
            const int idx = argmax(dw_xcorr(tmpl, Tensor::from({2, w, w}, sv)));
            const int ow = w - 2;
            CHECK(idx / ow == y - 1);
            CHECK(idx % ow == x - 1);
        }
    }
}

TEST_CASE("backbone") {
    CounterRng rng(46);
    Backbone bb = Backbone::init({16, 32, 32}, rng);
    auto taps = bb.forward(random_tensor({1, 64, 64}, rng), NormMode::train);
    CHECK(taps[0].shape() == Shape{16, 32, 32});
    CHECK(taps[2].shape() == Shape{32, 16, 16});
    for (double v : bb.forward(Tensor::zeros({1, 64, 64}), NormMode::running)[2].data()) {
        CHECK(std::isfinite(v));
    }
    CHECK_THROWS_AS(bb.forward(Tensor::zeros({1, 30, 32}), NormMode::train), ShapeError);

    Backbone small = Backbone::init({3, 4, 4}, rng);
    StateDict state;
    small.collect(state, "bb");
    test::jitter_parameters(state, rng, 0.1);
    Tensor img = random_tensor({1, 32, 32}, rng, -1, 1, true);
    Tensor w = random_tensor({4, 8, 8}, rng);
    auto loss = [&] { return sum(mul(small.forward(img, NormMode::train)[2], w)); };
    std::vector<Tensor> params = state.parameters();
    params.push_back(img);
    CHECK(check_gradients(loss, params, 80, 47).max_rel_error < 1e-4);
}

TEST_CASE("head") {
    CounterRng rng(48);
    Head head = Head::init(8, 4, rng);
    HeadOutput zero = head.forward(Tensor::zeros({8, 5, 5}), NormMode::train);
    for (double v : zero.cls.data()) {
        CHECK(v == zero.cls.data()[0]);
    }
    CHECK(zero.cls.data()[0] == doctest::Approx(-2.0));
    HeadOutput out = head.forward(random_tensor({8, 5, 5}, rng, -30, 30), NormMode::train);
    CHECK(out.cls.shape() == Shape{1, 5, 5});
    CHECK(out.reg.shape() == Shape{4, 5, 5});
    for (double v : out.reg.data()) {
        CHECK(v > 0.0);
    }
}

TEST_CASE("decode") {
    TrackerModel model(TrackerConfig{}, 1);
    ResponseGrid grid = model.grid();
    CHECK(grid.size == 9);
    CHECK(grid.cell_center(4) == 32.0);
    CHECK(grid.nearest_cell(33.9) == 4);
    CHECK(grid.nearest_cell(-100) == 0);
    CHECK(grid.nearest_cell(500) == 8);
    HeadOutput h{Tensor::zeros({1, 9, 9}), Tensor::full({4, 9, 9}, 2.0)};
    CHECK(decode_box(h, 4, 4, grid) == BBox{32, 32, 4, 4});
    HeadOutput skew{Tensor::zeros({1, 9, 9}), Tensor::from({4, 1, 1}, {1, 2, 3, 4})};
    ResponseGrid one{1, 4, 10.0};
    CHECK(decode_box(skew, 0, 0, one) == BBox{11, 11, 4, 6});
    CHECK_THROWS_AS(decode_box(h, 9, 0, grid), ShapeError);
}

TEST_CASE("iou") {
    CHECK(iou(BBox::from_corners(0, 0, 2, 2), BBox::from_corners(1, 1, 3, 3)) == doctest::Approx(1.0 / 7.0));
    CHECK(iou(BBox{5, 5, 2, 2}, BBox{5, 5, 2, 2}) == 1.0);
    CHECK(iou(BBox{0, 0, 2, 2}, BBox{10, 10, 2, 2}) == 0.0);
}

TEST_CASE("fuse_branches") {
    CounterRng rng(49);
    auto make = [&] { return HeadOutput{random_tensor({1, 3, 3}, rng), random_tensor({4, 3, 3}, rng, 0.1, 5)}; };
    HeadOutput a = make(), b = make();
    HeadOutput single = fuse_branches({a}, Tensor::zeros({1}));
    CHECK(to_vec(single.cls) == to_vec(a.cls));

    HeadOutput same = fuse_branches({a, a}, Tensor::zeros({2}));
    CHECK(test::max_abs_diff(to_vec(same.cls), to_vec(a.cls)) < 1e-15);
    CHECK(test::max_abs_diff(to_vec(same.reg), to_vec(a.reg)) < 1e-15);

    HeadOutput dom = fuse_branches({a, b}, Tensor::from({2}, {0.0, 40.0}));
    CHECK(test::max_abs_diff(to_vec(dom.cls), to_vec(b.cls)) < 1e-6);
    CHECK(test::max_abs_diff(to_vec(dom.reg), to_vec(b.reg)) < 1e-6);

    HeadOutput c = make();
    HeadOutput mix = fuse_branches({a, b, c}, Tensor::from({3}, {0.3, -1.0, 2.0}));
    for (std::size_t i = 0; i < mix.reg.numel(); ++i) {
        const double lo = std::min({a.reg[i], b.reg[i], c.reg[i]});
        const double hi = std::max({a.reg[i], b.reg[i], c.reg[i]});
        CHECK(mix.reg[i] >= lo - 1e-12);
        CHECK(mix.reg[i] <= hi + 1e-12);
    }
    CHECK_THROWS_AS(fuse_branches({a, HeadOutput{Tensor::zeros({1, 2, 2}), Tensor::zeros({4, 2, 2})}},
                                  Tensor::zeros({2})),
                    ShapeError);
    CHECK_THROWS_AS(fuse_branches({a, b}, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("tracker model") {
    CounterRng rng(50);
    SUBCASE("default shapes and group heads") {
        TrackerModel model(TrackerConfig{}, 7);
        PairForward f = model.forward_pair(random_tensor({1, 32, 32}, rng), random_tensor({1, 64, 64}, rng), 3,
                                           NormMode::train);
        CHECK(f.fused.cls.shape() == Shape{1, 9, 9});
        CHECK(f.groups[0].size() == 8);
        CHECK(f.compressed[0][0].shape() == Shape{1, 8, 8});
        std::set<std::string> names;
        for (const auto& e : model.state().entries()) {
            CHECK(names.insert(e.name).second);
        }
    }
    SUBCASE("three branches") {
        TrackerConfig cfg;
        cfg.branches = 3;
        TrackerModel model(cfg, 8);
        PairForward f = model.forward_pair(random_tensor({1, 32, 32}, rng), random_tensor({1, 64, 64}, rng), 0,
                                           NormMode::train);
        CHECK(f.normal.size() == 3);
        CHECK(f.groups[2].size() == 8);
        CHECK(f.fused.reg.shape() == Shape{4, 9, 9});
        CHECK_NOTHROW(model.state().find("fusion_logits"));
        CHECK_NOTHROW(model.state().find("branch0.adapter"));
    }
    SUBCASE("baseline has no cfgb parameters or groups") {
        TrackerConfig cfg;
        cfg.use_dccfg = false;
        TrackerModel model(cfg, 9);
        for (const auto& e : model.state().entries()) {
            CHECK(e.name.find("cfgb") == std::string::npos);
        }
        PairForward f = model.forward_pair(random_tensor({1, 32, 32}, rng), random_tensor({1, 64, 64}, rng), 0,
                                           NormMode::train);
        CHECK(f.groups[0].empty());
    }
    SUBCASE("same seed, same parameters") {
        TrackerModel a(TrackerConfig{}, 11), b(TrackerConfig{}, 11), c(TrackerConfig{}, 12);
        CHECK(to_vec(a.state().entries()[0].param) == to_vec(b.state().entries()[0].param));
        CHECK(to_vec(a.state().entries()[0].param) != to_vec(c.state().entries()[0].param));
    }
    SUBCASE("invalid configs") {
        TrackerConfig cfg;
        cfg.search_size = 32;
        CHECK_THROWS_AS(TrackerModel(cfg, 1), ShapeError);
        cfg = TrackerConfig{};
        cfg.dccfg.n_groups = 3;
        CHECK_THROWS_AS(TrackerModel(cfg, 1), ShapeError);
        cfg = TrackerConfig{};
        cfg.branches = 0;
        CHECK_THROWS_AS(TrackerModel(cfg, 1), ShapeError);
    }
}

TEST_CASE("tracker boundary handling") {
    TrackerModel model(TrackerConfig{}, 13);
    Image frame(64, 48, 20.0);
    for (int y = 20; y < 28; ++y) {
        for (int x = 28; x < 36; ++x) {
            frame.at(x, y) = 200.0;
        }
    }
    Tracker tracker(model);
    CHECK_THROWS_AS(tracker.step(frame), ShapeError);
    CHECK_THROWS_AS(tracker.init(frame, BBox{32, 24, 0, 8}), ShapeError);
    tracker.init(frame, BBox{32, 24, 8, 8});

    // target drifts out of the frame: the window clamps and the box stays inside
    Image empty(64, 48, 20.0);
    Tracker edge(model);
    edge.init(frame, BBox{62, 46, 10, 10});
    for (int i = 0; i < 5; ++i) {
        TrackResult r = edge.step(empty);
        CHECK(r.box.x1() >= 0.0);
        CHECK(r.box.y1() >= 0.0);
        CHECK(r.box.x2() <= 64.0);
        CHECK(r.box.y2() <= 48.0);
        CHECK(r.box.valid());
        CHECK(r.score > 0.0);
        CHECK(r.score < 1.0);
    }

    // inference is deterministic
    Tracker again(model);
    again.init(frame, BBox{32, 24, 8, 8});
    TrackResult r1 = tracker.step(frame);
    TrackResult r2 = again.step(frame);
    CHECK(r1.box == r2.box);
    CHECK(r1.score == r2.score);
}
