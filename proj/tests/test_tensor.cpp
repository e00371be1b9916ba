#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dcfg/gradcheck.hpp"
#include "dcfg/ops.hpp"
#include "test_util.hpp"

using namespace dcfg;
using dcfg::test::random_tensor;
using dcfg::test::to_vec;

TEST_CASE("conv2d hand examples") {
    SUBCASE("scalar kernel over ones") {
        Tensor x = Tensor::full({1, 3, 3}, 1.0);
        Tensor w = Tensor::full({1, 1, 1, 1}, 2.0);
        Tensor b = Tensor::zeros({1});
        Tensor y = conv2d(x, w, b, 1, 0, 1);
        CHECK(y.shape() == Shape{1, 3, 3});
        for (double v : y.data()) {
            CHECK(v == 2.0);
        }
    }
    SUBCASE("identity kernel") {
        CounterRng rng(3);
        Tensor x = random_tensor({1, 5, 4}, rng);
        Tensor y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, 0, 1);
        CHECK(to_vec(y) == to_vec(x));
    }
    SUBCASE("groups keep channels separate") {
        Tensor x = Tensor::from({2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
        Tensor w = Tensor::from({2, 1, 1, 1}, {3.0, -0.5});
        Tensor y = conv2d(x, w, Tensor(), 1, 0, 2);
        CHECK(to_vec(y) == std::vector<double>{3, 6, 9, 12, -5, -10, -15, -20});
    }
    SUBCASE("output extent formula") {
        CounterRng rng(4);
        Tensor x = random_tensor({2, 7, 9}, rng);
        Tensor w = random_tensor({4, 2, 3, 3}, rng);
        Tensor y = conv2d(x, w, Tensor(), 2, 1, 1);
        CHECK(y.shape() == Shape{4, (7 + 2 - 3) / 2 + 1, (9 + 2 - 3) / 2 + 1});
    }
}

TEST_CASE("conv2d rejects bad shapes") {
    Tensor x = Tensor::zeros({3, 4, 4});
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({2, 3, 1, 1}), Tensor(), 1, 0, 2), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({2, 2, 1, 1}), Tensor(), 1, 0, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 3, 1, 1}), Tensor::zeros({2}), 1, 0, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 3, 1, 1}), Tensor(), 0, 0, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 3, 7, 7}), Tensor(), 1, 0, 1), ShapeError);
}

TEST_CASE("grouped conv2d equals per-group dense convolutions") {
    CounterRng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int groups = 1 << rng.uniform_int(0, 2);
        const int cin = groups * rng.uniform_int(1, 2);
        const int cout = groups * rng.uniform_int(1, 2);
        const int k = rng.uniform_int(1, 3);
        const int h = rng.uniform_int(k, 8), w = rng.uniform_int(k, 8);
        const int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, k / 2);
        Tensor x = random_tensor({cin, h, w}, rng);
        Tensor wt = random_tensor({cout, cin / groups, k, k}, rng);
        Tensor b = random_tensor({cout}, rng);
        auto expect = test::grouped_conv_oracle(x, wt, to_vec(b), stride, pad, groups);
        CHECK(test::max_abs_diff(to_vec(conv2d(x, wt, b, stride, pad, groups)), expect) <= 1e-12);
    }
}

TEST_CASE("conv2d accepts a batch axis") {
    CounterRng rng(12);
    Tensor a = random_tensor({2, 5, 5}, rng);
    Tensor b = random_tensor({2, 5, 5}, rng);
    std::vector<double> both = to_vec(a);
    both.insert(both.end(), b.data().begin(), b.data().end());
    Tensor w = random_tensor({4, 2, 3, 3}, rng);
    Tensor y = conv2d(Tensor::from({2, 2, 5, 5}, both), w, Tensor(), 1, 1, 1);
    std::vector<double> expect = to_vec(conv2d(a, w, Tensor(), 1, 1, 1));
    auto yb = to_vec(conv2d(b, w, Tensor(), 1, 1, 1));
    expect.insert(expect.end(), yb.begin(), yb.end());
    CHECK(to_vec(y) == expect);
}

TEST_CASE("channel_shuffle") {
    Tensor x = Tensor::from({4, 1, 2}, {0, 1, 10, 11, 20, 21, 30, 31});
    std::vector<int> perm{2, 0, 3, 1};
    CHECK(to_vec(channel_shuffle(x, perm)) == std::vector<double>{20, 21, 0, 1, 30, 31, 10, 11});
    std::vector<int> ident{0, 1, 2, 3};
    CHECK(to_vec(channel_shuffle(x, ident)) == to_vec(x));

    CounterRng rng(5);
    Tensor r = random_tensor({6, 3, 3}, rng);
    std::vector<int> p6{4, 2, 5, 0, 1, 3};
    auto inv = invert_permutation(p6);
    CHECK(to_vec(channel_shuffle(channel_shuffle(r, p6), inv)) == to_vec(r));

    std::vector<int> dup{0, 0, 1, 2};
    std::vector<int> short_perm{0, 1, 2};
    std::vector<int> out_of_range{0, 1, 2, 4};
    CHECK_THROWS_AS(channel_shuffle(x, dup), ShapeError);
    CHECK_THROWS_AS(channel_shuffle(x, short_perm), ShapeError);
    CHECK_THROWS_AS(channel_shuffle(x, out_of_range), ShapeError);
}

TEST_CASE("split and concat") {
    CounterRng rng(6);
    Tensor x = random_tensor({8, 3, 2}, rng);
    auto [a, b] = split_channels(x, 4);
    CHECK(a.shape() == Shape{4, 3, 2});
    CHECK(b.shape() == Shape{4, 3, 2});
    CHECK(to_vec(concat_channels(a, b)) == to_vec(x));

    Tensor c3 = random_tensor({3, 2, 2}, rng);
    Tensor c5 = random_tensor({5, 2, 2}, rng);
    Tensor cat = concat_channels(c3, c5);
    CHECK(cat.shape() == Shape{8, 2, 2});
    auto [p, q] = split_channels(cat, 3);
    CHECK(to_vec(p) == to_vec(c3));
    CHECK(to_vec(q) == to_vec(c5));

    CHECK_THROWS_AS(split_channels(x, 0), ShapeError);
    CHECK_THROWS_AS(split_channels(x, 8), ShapeError);
    CHECK_THROWS_AS(concat_channels(c3, random_tensor({2, 3, 2}, rng)), ShapeError);
    // A zero-channel operand cannot even be constructed.
    CHECK_THROWS_AS(Tensor::zeros({0, 2, 2}), ShapeError);
}

TEST_CASE("split routes gradients to its channel range") {
    CounterRng rng(7);
    Tensor x = random_tensor({8, 2, 2}, rng, -1, 1, true);
    auto [a, b] = split_channels(x, 4);
    sum(a).backward();
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(g[i] == (i < 16 ? 1.0 : 0.0));
    }
    auto loss = [&] {
        auto [u, v] = split_channels(x, 3);
        return add(sum(mul(u, u)), sum(mul(v, 3.0)));
    };
    CHECK(check_gradients(loss, {x}, 40, 1).max_rel_error < 1e-6);
}

TEST_CASE("channel_mean") {
    Tensor x = Tensor::from({2, 2, 2}, {1, 1, 1, 1, 3, 3, 3, 3});
    CHECK(to_vec(channel_mean(x)) == std::vector<double>{2, 2, 2, 2});
    CounterRng rng(8);
    Tensor one = random_tensor({1, 3, 4}, rng);
    CHECK(to_vec(channel_mean(one)) == to_vec(one));

    Tensor r = random_tensor({4, 5, 5}, rng, -1, 1, true);
    Tensor wmap = random_tensor({1, 5, 5}, rng);
    auto res = check_gradients([&] { return sum(mul(channel_mean(r), wmap)); }, {r}, 100, 2);
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("elementwise") {
    Tensor x = Tensor::from({1, 1, 3}, {10, -2, 0.5});
    CHECK(to_vec(mul(x, 0.7)) == std::vector<double>{10 * 0.7, -2 * 0.7, 0.5 * 0.7});
    CHECK(to_vec(mul(x, 1.0)) == to_vec(x));
    CHECK(to_vec(add(x, 1.0)) == std::vector<double>{11, -1, 1.5});

    CounterRng rng(9);
    Tensor f = random_tensor({3, 4, 5}, rng);
    Tensor m = random_tensor({4, 5}, rng);
    Tensor y = mul(f, m);
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 5; ++j) {
                CHECK(y.at(c, i, j) == f.at(c, i, j) * m.data()[i * 5 + j]);
            }
        }
    }
    CHECK_THROWS_AS(mul(f, random_tensor({5, 4}, rng)), ShapeError);
    CHECK_THROWS_AS(add(f, random_tensor({3, 4}, rng)), ShapeError);

    Tensor a = random_tensor({3, 4, 5}, rng, -1, 1, true);
    Tensor b = random_tensor({4, 5}, rng, -1, 1, true);
    Tensor c = random_tensor({3, 4, 5}, rng, -1, 1, true);
    auto loss = [&] { return sum(mul(add(mul(a, b), c), add(c, b))); };
    CHECK(check_gradients(loss, {a, b, c}, 100, 3).max_rel_error < 1e-6);
}

TEST_CASE("relu and batch_norm") {
    Tensor x = Tensor::from({3}, {-1, 0, 2});
    CHECK(to_vec(relu(x)) == std::vector<double>{0, 0, 2});

    Tensor z = Tensor::from({1}, {0.0}, true);
    sum(relu(z)).backward();
    CHECK(z.grad()[0] == 0.0);

    BatchNorm bn(2);
    Tensor constant = Tensor::full({2, 3, 3}, 4.25);
    Tensor normed = batch_norm(constant, bn, true);
    for (double v : normed.data()) {
        CHECK(v == 0.0);
    }
    CHECK(bn.running_mean[0] == doctest::Approx(0.425).epsilon(1e-14));
    CHECK(bn.running_var[0] == doctest::Approx(0.9).epsilon(1e-14));

    // eval mode with unit stats is the affine map only
    BatchNorm unit(1);
    unit.running_var[0] = 1.0 - unit.eps;
    Tensor e = Tensor::from({1, 1, 2}, {3.0, -1.0});
    auto ev = batch_norm(e, unit, false);
    CHECK(ev.data()[0] == doctest::Approx(3.0).epsilon(1e-15));

    CounterRng rng(10);
    for (bool training : {true, false}) {
        BatchNorm p(3);
        p.running_mean = {0.1, -0.2, 0.3};
        p.running_var = {0.5, 1.5, 2.0};
        p.gamma.mutable_data()[1] = 1.7;
        p.beta.mutable_data()[2] = -0.4;
        Tensor in = random_tensor({3, 4, 5}, rng, -2, 2, true);
        Tensor wmap = random_tensor({3, 4, 5}, rng);
        auto loss = [&] { return sum(mul(relu(batch_norm(in, p, training)), wmap)); };
        CHECK(check_gradients(loss, {in, p.gamma, p.beta}, 100, 4).max_rel_error < 1e-4);
    }

    BatchNorm batched(2);
    Tensor b4 = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
    Tensor w4 = random_tensor({3, 2, 3, 3}, rng);
    CHECK(check_gradients([&] { return sum(mul(batch_norm(b4, batched, true), w4)); }, {b4, batched.gamma}, 60, 5)
              .max_rel_error < 1e-4);
    CHECK_THROWS_AS(batch_norm(random_tensor({3, 2, 2}, rng), batched, true), ShapeError);
}

TEST_CASE("backward semantics") {
    CounterRng rng(13);
    Tensor x = random_tensor({2, 3, 3}, rng, -1, 1, true);
    sum(x).backward();
    for (double g : x.grad()) {
        CHECK(g == 1.0);
    }
    x.zero_grad();
    sum(mul(x, x)).backward();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-15));
    }

    // accumulation, not overwrite
    sum(x).backward();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2.0 * x[i] + 1.0).epsilon(1e-14));
    }

    Tensor loss = sum(mul(x, 3.0));
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), ShapeError);
    CHECK_THROWS_AS(mul(x, 2.0).backward(), ShapeError);
    CHECK_THROWS_AS(Tensor::scalar(1.0).backward(), ShapeError);

    {
        NoGradGuard guard;
        CHECK_FALSE(sum(x).requires_grad());
    }
    CHECK(sum(x).requires_grad());
}

TEST_CASE("composed graph matches finite differences") {
    CounterRng rng(14);
    Tensor img = random_tensor({2, 6, 6}, rng, -1, 1, true);
    Tensor w1 = random_tensor({4, 2, 3, 3}, rng, -0.5, 0.5, true);
    Tensor b1 = random_tensor({4}, rng, -0.1, 0.1, true);
    Tensor w2 = random_tensor({4, 2, 1, 1}, rng, -0.5, 0.5, true);
    Tensor mask = random_tensor({3, 3}, rng, 0, 1, true);
    BatchNorm bn(4);
    std::vector<int> perm{3, 1, 0, 2};
    auto loss = [&] {
        Tensor h = conv2d(img, w1, b1, 2, 1, 1);
        h = relu(batch_norm(h, bn, true));
        h = channel_shuffle(conv2d(h, w2, Tensor(), 1, 0, 2), perm);
        auto [a, b] = split_channels(h, 1);
        Tensor m = mul(concat_channels(b, a), mask);
        Tensor cm = channel_mean(exp(mul(m, 0.3)));
        return sum(mul(cm, cm));
    };
    auto res = check_gradients(loss, {img, w1, b1, w2, mask, bn.gamma, bn.beta}, 100, 15);
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("softmax and weighted_sum") {
    Tensor logits = Tensor::from({3}, {0.2, -1.0, 2.0}, true);
    Tensor p = softmax(logits);
    CHECK(std::accumulate(p.data().begin(), p.data().end(), 0.0) == doctest::Approx(1.0));
    CounterRng rng(16);
    Tensor a = random_tensor({2, 3, 3}, rng, -1, 1, true);
    Tensor b = random_tensor({2, 3, 3}, rng, -1, 1, true);
    Tensor c = random_tensor({2, 3, 3}, rng, -1, 1, true);
    Tensor wmap = random_tensor({2, 3, 3}, rng);
    auto loss = [&] { return sum(mul(weighted_sum({a, b, c}, softmax(logits)), wmap)); };
    CHECK(check_gradients(loss, {logits, a, b, c}, 100, 17).max_rel_error < 1e-6);
    CHECK_THROWS_AS(weighted_sum({a, random_tensor({1, 3, 3}, rng)}, Tensor::from({2}, {0.5, 0.5})), ShapeError);
}

TEST_CASE("non-finite values are errors") {
    CHECK_THROWS_AS(Tensor::from({1}, {NAN}), NumericError);
    CHECK_THROWS_AS(exp(Tensor::from({1}, {1000.0})), NumericError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("ops produce tensors that cannot be written") {
    Tensor x = Tensor::zeros({1, 2, 2}, true);
    Tensor y = mul(x, 2.0);
    CHECK_THROWS_AS(y.mutable_data(), ShapeError);
}
