#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dcfg/gradcheck.hpp"
#include "dcfg/losses.hpp"
#include "test_util.hpp"

using namespace dcfg;
using dcfg::test::random_tensor;
using dcfg::test::pearson_oracle;
using dcfg::test::to_vec;

namespace {

// A single-cell grid whose only cell maps to patch pixel (px, px).
ResponseGrid one_cell(double px) { return ResponseGrid{1, 4, px}; }

Tensor reg_for_box(double px, double py, const BBox& b) {
    return Tensor::from({4, 1, 1}, {px - b.x1(), py - b.y1(), b.x2() - px, b.y2() - py}, true);
}

}  // namespace

TEST_CASE("cls_loss") {
    const std::int8_t pos[] = {kPositive};
    CHECK(cls_loss(Tensor::from({1, 1, 1}, {0.0}), pos).item() == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(cls_loss(Tensor::from({1, 1, 1}, {40.0}), pos).item() < 1e-6);
    // clamp floor bounds a confident mistake
    CHECK(cls_loss(Tensor::from({1, 1, 1}, {-40.0}), pos).item() == doctest::Approx(-std::log(1e-7)));

    CounterRng rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor z = random_tensor({1, 5, 4}, rng, -6, 6);
        std::vector<std::int8_t> labels(20);
        for (auto& l : labels) {
            l = static_cast<std::int8_t>(rng.uniform_int(-1, 1));
        }
        labels[0] = kPositive;
        double s = 0;
        int n = 0;
        for (int i = 0; i < 20; ++i) {
            if (labels[i] == kIgnore) {
                continue;
            }
            double p = 1.0 / (1.0 + std::exp(-z[i]));
            p = std::min(std::max(p, 1e-7), 1 - 1e-7);
            s += labels[i] == kPositive ? -std::log(p) : -std::log(1 - p);
            ++n;
        }
        CHECK(std::abs(cls_loss(z, labels).item() - s / n) <= 1e-12);
    }
    std::vector<std::int8_t> ignored(4, kIgnore);
    CHECK_THROWS_AS(cls_loss(Tensor::zeros({1, 2, 2}), ignored), ShapeError);
    CHECK_THROWS_AS(cls_loss(Tensor::zeros({1, 2, 2}), pos), ShapeError);

    Tensor z = random_tensor({1, 4, 4}, rng, -3, 3, true);
    std::vector<std::int8_t> labels(16, kNegative);
    labels[5] = labels[6] = kPositive;
    labels[15] = kIgnore;
    CHECK(check_gradients([&] { return cls_loss(z, labels); }, {z}, 50, 52).max_rel_error < 1e-6);
}

TEST_CASE("reg_loss") {
    const std::int8_t pos[] = {kPositive};
    const double px = 10.0;
    BBox gt = BBox::from_corners(9, 9, 11, 11);
    SUBCASE("identical boxes") {
        CHECK(reg_loss(reg_for_box(px, px, gt), one_cell(px), gt, pos, 64, 1, 1).item() == 0.0);
    }
    SUBCASE("corner boxes [0,0,2,2] vs [1,1,3,3]") {
        BBox pred = BBox::from_corners(9, 9, 11, 11);
        BBox target = BBox::from_corners(10, 10, 12, 12);
        Tensor r = reg_for_box(px, px, pred);
        CHECK(reg_loss(r, one_cell(px), target, pos, 64, 1, 0).item() == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
        CHECK(reg_loss(r, one_cell(px), target, pos, 64, 1, 0).item() == doctest::Approx(0.857143).epsilon(1e-6));
        // L1 alone: every corner off by 1 px
        CHECK(reg_loss(r, one_cell(px), target, pos, 64, 0, 1).item() == doctest::Approx(1.0 / 64.0).epsilon(1e-14));
    }
    SUBCASE("disjoint boxes") {
        BBox target = BBox::from_corners(20, 20, 25, 25);
        CHECK(reg_loss(reg_for_box(px, px, gt), one_cell(px), target, pos, 64, 1, 0).item() == 1.0);
    }
    SUBCASE("no positives") {
        const std::int8_t neg[] = {kNegative};
        CHECK(reg_loss(reg_for_box(px, px, gt), one_cell(px), gt, neg, 64, 1, 1).item() == 0.0);
    }
    SUBCASE("gradients over partial overlaps") {
        CounterRng rng(53);
        ResponseGrid grid{3, 4, 12.0};
        for (int trial = 0; trial < 6; ++trial) {
            Tensor reg = random_tensor({4, 3, 3}, rng, 2.0, 9.0, true);
            BBox target{rng.uniform(14, 22), rng.uniform(14, 22), rng.uniform(6, 14), rng.uniform(6, 14)};
            std::vector<std::int8_t> labels(9, kNegative);
            labels[0] = labels[4] = labels[8] = kPositive;
            auto loss = [&] { return reg_loss(reg, grid, target, labels, 32, 1.0, 1.0); };
            CHECK(check_gradients(loss, {reg}, 36, 54 + trial).max_rel_error < 1e-5);
        }
    }
}

TEST_CASE("labels and track_loss") {
    ResponseGrid grid{9, 4, 16.0};
    BBox gt{32, 32, 10, 12};
    LabelMap r0 = assign_labels(grid, gt, 0);
    CHECK(std::count(r0.labels.begin(), r0.labels.end(), kPositive) == 1);
    CHECK(r0.labels[4 * 9 + 4] == kPositive);
    LabelMap r1 = assign_labels(grid, gt, 1);
    CHECK(std::count(r1.labels.begin(), r1.labels.end(), kPositive) == 5);
    LabelMap r2 = assign_labels(grid, gt, 2);
    CHECK(std::count(r2.labels.begin(), r2.labels.end(), kPositive) == 13);
    LabelMap off = assign_labels(grid, BBox{21, 47, 8, 8}, 0);
    CHECK(off.center_col == 1);
    CHECK(off.center_row == 8);

    // ideal outputs: confident logits and exact boxes at every positive
    LossConfig cfg;
    std::vector<double> logits(81), reg(4 * 81);
    for (int i = 0; i < 9; ++i) {
        for (int j = 0; j < 9; ++j) {
            const int cell = i * 9 + j;
            logits[cell] = r2.labels[cell] == kPositive ? 20.0 : -20.0;
            const double px = grid.cell_center(j), py = grid.cell_center(i);
            reg[cell] = px - gt.x1();
            reg[81 + cell] = py - gt.y1();
            reg[162 + cell] = gt.x2() - px;
            reg[243 + cell] = gt.y2() - py;
        }
    }
    HeadOutput ideal{Tensor::from({1, 9, 9}, logits), Tensor::from({4, 9, 9}, reg)};
    TrackLoss tl = track_loss(ideal, gt, grid, cfg, 64);
    CHECK(tl.total.item() < 1e-3);
    CHECK(tl.total.item() == doctest::Approx(tl.cls.item() + tl.reg.item()).epsilon(1e-15));
}

TEST_CASE("corr_matrix") {
    CounterRng rng(60);
    Tensor a = random_tensor({1, 4, 4}, rng);
    SUBCASE("self and anti correlation") {
        Tensor c = corr_matrix({a, a, mul(a, -1.0)});
        CHECK(std::abs(c.data()[1] - 1.0) < 1e-6);
        CHECK(std::abs(c.data()[2] + 1.0) < 1e-6);
        CHECK(std::abs(c.data()[0] - 1.0) < 1e-6);
    }
    SUBCASE("loop oracle on random maps") {
        for (int trial = 0; trial < 200; ++trial) {
            const int n = rng.uniform_int(1, 6);
            const int h = rng.uniform_int(2, 6), w = rng.uniform_int(1, 6);
            std::vector<Tensor> maps;
            for (int k = 0; k < n; ++k) {
                maps.push_back(random_tensor({1, h, w}, rng, -2, 2));
            }
            Tensor c = corr_matrix(maps, 1e-8);
            double worst = 0;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    worst = std::max(worst, std::abs(c.data()[i * n + j] -
                                                     pearson_oracle(to_vec(maps[i]), to_vec(maps[j]), 1e-8)));
                }
            }
            REQUIRE(worst <= 1e-10);
        }
    }
    SUBCASE("symmetric, bounded and affine invariant") {
        std::vector<Tensor> maps, shifted;
        for (int k = 0; k < 5; ++k) {
            maps.push_back(random_tensor({1, 6, 6}, rng));
            shifted.push_back(add(mul(maps.back(), rng.uniform(0.1, 10.0)), rng.uniform(-5, 5)));
        }
        Tensor c = corr_matrix(maps);
        Tensor cs = corr_matrix(shifted);
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 5; ++j) {
                CHECK(c.data()[i * 5 + j] == c.data()[j * 5 + i]);
                CHECK(std::abs(c.data()[i * 5 + j]) <= 1.0 + 1e-6);
                CHECK(std::abs(c.data()[i * 5 + j] - cs.data()[i * 5 + j]) < 1e-6);
            }
        }
    }
    SUBCASE("constant maps are handled") {
        Tensor c = corr_matrix({Tensor::full({1, 4, 4}, 2.0), a});
        for (double v : c.data()) {
            CHECK(std::isfinite(v));
        }
        CHECK(c.data()[1] == 0.0);
    }
    SUBCASE("gradient") {
        std::vector<Tensor> maps;
        for (int k = 0; k < 4; ++k) {
            maps.push_back(random_tensor({1, 3, 4}, rng, -1, 1, true));
        }
        Tensor w = random_tensor({4, 4}, rng);
        auto loss = [&] { return sum(mul(corr_matrix(maps), w)); };
        CHECK(check_gradients(loss, maps, 48, 61).max_rel_error < 1e-6);
    }
}

TEST_CASE("dcfg_loss") {
    CounterRng rng(62);
    Tensor a = random_tensor({1, 5, 5}, rng);
    CHECK(dcfg_loss({a, a}).item() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
    CHECK(dcfg_loss({a, a}).item() == doctest::Approx(1.414214).epsilon(1e-6));
    CHECK(dcfg_loss({a, a, mul(a, -1.0)}).item() == doctest::Approx(std::sqrt(6.0)).epsilon(1e-6));
    for (int n = 2; n <= 16; ++n) {
        std::vector<Tensor> same(static_cast<std::size_t>(n), a);
        CHECK(dcfg_loss(same).item() == doctest::Approx(std::sqrt(n * n - n)).epsilon(1e-6));
    }
    CHECK(dcfg_loss({a}).item() == 0.0);

    // rows of a Hadamard matrix (minus the constant row) are mutually uncorrelated
    std::vector<Tensor> ortho;
    for (int k = 1; k < 8; ++k) {
        std::vector<double> v(8);
        for (int i = 0; i < 8; ++i) {
            v[i] = (std::popcount(static_cast<unsigned>(i & k)) % 2) ? -1.0 : 1.0;
        }
        ortho.push_back(Tensor::from({1, 2, 4}, v));
    }
    CHECK(dcfg_loss(ortho).item() < 1e-5);
    CHECK(mean_abs_offdiag(ortho) < 1e-12);

    std::vector<Tensor> maps;
    for (int k = 0; k < 6; ++k) {
        maps.push_back(random_tensor({1, 4, 4}, rng));
    }
    std::vector<Tensor> perm = {maps[3], maps[0], maps[5], maps[1], maps[4], maps[2]};
    CHECK(std::abs(dcfg_loss(maps).item() - dcfg_loss(perm).item()) < 1e-12);

    std::vector<Tensor> grad_maps;
    for (int k = 0; k < 3; ++k) {
        grad_maps.push_back(random_tensor({1, 3, 3}, rng, -1, 1, true));
    }
    CHECK(check_gradients([&] { return dcfg_loss(grad_maps); }, grad_maps, 27, 63).max_rel_error < 1e-6);
}

TEST_CASE("total_loss") {
    CounterRng rng(64);
    TrackerConfig tcfg = test::toy_tracker_config();
    LossConfig lcfg;
    lcfg.positive_radius = 1;
    BBox gt{17, 15, 8, 6};
    Tensor tmpl = random_tensor({1, 16, 16}, rng);
    Tensor search = random_tensor({1, 32, 32}, rng);

    SUBCASE("parts recombine") {
        TrackerModel model(tcfg, 3);
        PairForward f = model.forward_pair(tmpl, search, 1, NormMode::train);
        TotalLoss t = total_loss(f, gt, model.grid(), lcfg, 32);
        const auto& p = t.parts;
        CHECK(std::abs(p.total - (p.l_cfgb + lcfg.mu * p.l_norm + p.l_dcfg)) <= 1e-12 * std::abs(p.total));
        CHECK(p.l_dcfg > 0.0);
        CHECK(p.l_cfgb > 0.0);
        TotalLoss no_div = total_loss(f, gt, model.grid(), lcfg, 32, false);
        CHECK(no_div.parts.l_dcfg == 0.0);
    }
    SUBCASE("N = 0 leaves only the weighted unsuppressed term") {
        tcfg.dccfg.n_groups = 0;
        TrackerModel model(tcfg, 3);
        TotalLoss t = total_loss(model.forward_pair(tmpl, search, 0, NormMode::train), gt, model.grid(), lcfg, 32);
        CHECK(t.parts.l_cfgb == 0.0);
        CHECK(t.parts.l_dcfg == 0.0);
        CHECK(t.parts.total == doctest::Approx(lcfg.mu * t.parts.l_norm).epsilon(1e-15));
    }
    SUBCASE("end-to-end gradient on the toy model") {
        TrackerModel model(tcfg, 4);
        test::jitter_parameters(model.state(), rng, 0.1);
        auto loss = [&] {
            return total_loss(model.forward_pair(tmpl, search, 1, NormMode::train), gt, model.grid(), lcfg, 32)
                .total;
        };
        GradCheckResult r = check_gradients(loss, model.state().parameters(), 80, 65);
        CHECK(r.max_rel_error < 1e-4);
    }
}
