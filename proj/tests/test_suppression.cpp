#include <cmath>

#include "doctest.h"
#include "dcfg/gradcheck.hpp"
#include "dcfg/ops.hpp"
#include "dcfg/suppression.hpp"
#include "test_util.hpp"

using namespace dcfg;
using dcfg::test::random_tensor;
using dcfg::test::to_vec;

TEST_CASE("locate_peak") {
    SUBCASE("spike") {
        Tensor x = Tensor::zeros({3, 5, 6});
        std::vector<double> v = to_vec(x);
        v[(1 * 5 + 2) * 6 + 3] = 4.0;
        PeakSearch p = locate_peak(Tensor::from({3, 5, 6}, v));
        CHECK(p.peak == Peak{2, 3});
        CHECK(p.compressed.shape() == Shape{1, 5, 6});
    }
    SUBCASE("uniform map ties to the first cell") {
        CHECK(locate_peak(Tensor::full({2, 4, 4}, 0.5)).peak == Peak{0, 0});
    }
    SUBCASE("mean peak differs from either channel's own max") {
        // ch0 max at (0,0)=5, ch1 max at (1,1)=5; mean peaks at (0,1)=3.5
        Tensor x = Tensor::from({2, 2, 2}, {5, 3, 0, 0, 0, 4, 0, 5});
        CHECK(locate_peak(x).peak == Peak{0, 1});
    }
}

TEST_CASE("locate_peak agrees with an exhaustive double loop") {
    CounterRng rng(21);
    for (int h = 1; h <= 16; ++h) {
        for (int w = 1; w <= 16; ++w) {
            const int c = 1 + static_cast<int>(rng.below(3));
            std::vector<double> v(static_cast<std::size_t>(c) * h * w);
            for (double& x : v) {
                // coarse values so ties actually happen
                x = std::floor(rng.uniform(0, 4));
            }
            Tensor t = Tensor::from({c, h, w}, v);
            int br = 0, bc = 0;
            double best = -INFINITY;
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    double s = 0;
                    for (int ch = 0; ch < c; ++ch) {
                        s += t.at(ch, i, j);
                    }
                    s /= c;
                    if (s > best) {
                        best = s;
                        br = i;
                        bc = j;
                    }
                }
            }
            REQUIRE(locate_peak(t).peak == Peak{br, bc});
        }
    }
}

TEST_CASE("build_mask values") {
    SuppressionMask lit = build_mask({1, 2}, 4, 5, 1.0, MaskMode::unnormalized);
    CHECK(lit.grid.data()[1 * 5 + 2] == doctest::Approx(0.8408450569081046).epsilon(1e-14));

    SuppressionMask lit2 = build_mask({0, 0}, 3, 3, 2.0, MaskMode::unnormalized);
    CHECK(lit2.grid.data()[1 * 3 + 2] == doctest::Approx(0.9787026244511934).epsilon(1e-14));

    for (double sigma : {0.3, 1.0, 2.0, 7.5}) {
        SuppressionMask m = build_mask({2, 3}, 6, 7, sigma, MaskMode::peak_normalized);
        CHECK(m.grid.data()[2 * 7 + 3] == 0.0);
        for (double v : m.grid.data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    SuppressionMask n2 = build_mask({3, 3}, 8, 8, 2.0, MaskMode::peak_normalized);
    CHECK(n2.grid.data()[3 * 8 + 5] == doctest::Approx(0.3934693402873666).epsilon(1e-14));
    CHECK(n2.grid.data()[5 * 8 + 3] == doctest::Approx(0.3934693402873666).epsilon(1e-14));

    // monotone in distance along a row
    for (int j = 3; j < 7; ++j) {
        CHECK(n2.grid.data()[3 * 8 + j] < n2.grid.data()[3 * 8 + j + 1]);
    }

    // a narrow literal Gaussian overshoots and drives the mask negative
    SuppressionMask narrow = build_mask({0, 0}, 2, 2, 0.3, MaskMode::unnormalized);
    CHECK(narrow.grid.data()[0] < 0.0);

    CHECK_THROWS_AS(build_mask({0, 0}, 4, 4, 0.0, MaskMode::peak_normalized), ShapeError);
    CHECK_THROWS_AS(build_mask({0, 0}, 4, 4, -1.0, MaskMode::unnormalized), ShapeError);
    CHECK(mask_mode_from_string("unnormalized") == MaskMode::unnormalized);
    CHECK_THROWS_AS(mask_mode_from_string("gauss"), ShapeError);
}

TEST_CASE("suppress") {
    SUBCASE("alpha scales weight groups") {
        Tensor f = Tensor::full({4, 3, 3}, 10.0);
        auto groups = partition_groups(f, 2, 0, 0.7);
        auto mask = build_mask({1, 1}, 3, 3, 2.0, MaskMode::peak_normalized);
        auto out = suppress(groups, mask);
        CHECK(out.size() == 2);
        for (double v : out[1].data()) {
            CHECK(v == doctest::Approx(7.0).epsilon(1e-15));
        }
        CHECK(out[0].at(0, 1, 1) == 0.0);
        CHECK(out[0].at(1, 1, 1) == 0.0);
    }
    SUBCASE("alpha 1 with a very narrow mask only zeroes the peak cell") {
        CounterRng rng(22);
        Tensor f = random_tensor({4, 6, 6}, rng);
        auto groups = partition_groups(f, 2, 1, 1.0);
        auto mask = build_mask({0, 0}, 6, 6, 0.05, MaskMode::peak_normalized);
        auto out = suppress(groups, mask);
        CHECK(to_vec(out[0]) == to_vec(groups.groups[0]));
        std::vector<double> expected = to_vec(groups.groups[1]);
        expected[0] = 0.0;
        expected[36] = 0.0;
        CHECK(test::max_abs_diff(to_vec(out[1]), expected) < 1e-9);
    }
    SUBCASE("a very wide normalized mask suppresses the whole group") {
        CounterRng rng(26);
        auto groups = partition_groups(random_tensor({4, 6, 6}, rng), 2, 0, 0.7);
        auto out = suppress(groups, build_mask({0, 0}, 6, 6, 1e6, MaskMode::peak_normalized));
        for (double v : out[0].data()) {
            CHECK(std::abs(v) < 1e-9);
        }
    }
    SUBCASE("N = 8 over 256 channels") {
        auto groups = partition_groups(Tensor::zeros({256, 2, 2}), 8, 3, 0.7);
        CHECK(groups.size() == 8);
        for (const Tensor& g : groups.groups) {
            CHECK(g.shape() == Shape{32, 2, 2});
        }
        for (const Tensor& c : groups.compressed) {
            CHECK(c.shape() == Shape{1, 2, 2});
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(partition_groups(Tensor::zeros({6, 2, 2}), 4, 0, 0.7), ShapeError);
        CHECK_THROWS_AS(partition_groups(Tensor::zeros({8, 2, 2}), 4, 4, 0.7), ShapeError);
        CHECK_THROWS_AS(partition_groups(Tensor::zeros({8, 2, 2}), 4, 0, 1.5), ShapeError);
        auto groups = partition_groups(Tensor::zeros({8, 3, 3}), 4, 0, 0.5);
        CHECK_THROWS_AS(suppress(groups, build_mask({0, 0}, 3, 4, 1.0, MaskMode::peak_normalized)), ShapeError);
    }
}

TEST_CASE("suppression never grows the mask group and differs per mask index") {
    CounterRng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 << rng.uniform_int(0, 3);
        Tensor f = random_tensor({n * 2, 5, 4}, rng, -3, 3);
        std::vector<std::vector<double>> variants;
        for (int i = 0; i < n; ++i) {
            auto groups = partition_groups(f, n, i, 0.7);
            auto peak = locate_peak(groups.groups[i]).peak;
            auto mask = build_mask(peak, 5, 4, rng.uniform(0.5, 3.0), MaskMode::peak_normalized);
            auto out = suppress(groups, mask);
            auto before = to_vec(groups.groups[i]);
            auto after = to_vec(out[i]);
            for (std::size_t k = 0; k < before.size(); ++k) {
                CHECK(std::abs(after[k]) <= std::abs(before[k]));
            }
            std::vector<double> all;
            for (const Tensor& t : out) {
                auto v = to_vec(t);
                all.insert(all.end(), v.begin(), v.end());
            }
            CHECK(all != to_vec(f));
            variants.push_back(all);
        }
        for (std::size_t a = 0; a < variants.size(); ++a) {
            for (std::size_t b = a + 1; b < variants.size(); ++b) {
                CHECK(variants[a] != variants[b]);
            }
        }
    }
}

TEST_CASE("suppression is differentiable") {
    CounterRng rng(24);
    Tensor f = random_tensor({8, 5, 5}, rng, -1, 1, true);
    Tensor weights = random_tensor({2, 5, 5}, rng);
    auto mask = build_mask({2, 2}, 5, 5, 1.5, MaskMode::peak_normalized);
    auto loss = [&] {
        auto groups = partition_groups(f, 4, 1, 0.7);
        auto out = suppress(groups, mask);
        return sum(mul(concat_channels(channel_mean(out[1]), channel_mean(out[2])), weights));
    };
    CHECK(check_gradients(loss, {f}, 100, 25).max_rel_error < 1e-6);
}
