#include <cmath>

#include "doctest.h"
#include "dla/ops.hpp"

using namespace dla;
using D = double;

namespace {

Ctx<D> eval_ctx() { return Ctx<D>{}; }

Tensor<D> t2(std::vector<D> v, int64_t rows, int64_t cols) {
    return Tensor<D>({rows, cols}, std::move(v));
}

}  // namespace

TEST_CASE("linear: identity, hand dot product, annihilator") {
    auto ctx = eval_ctx();
    // x=[1,2], w=identity(2), b=0 -> [1,2]
    Tensor<D> x = t2({1, 2}, 1, 2);
    Tensor<D> eye = t2({1, 0, 0, 1}, 2, 2);
    Tensor<D> b0({2}, {0, 0});
    Tensor<D> y = linear(ctx, x, eye, b0);
    CHECK(y.ptr()[0] == 1.0);
    CHECK(y.ptr()[1] == 2.0);

    // x=[1,1], w=[[1],[1]], b=[3] -> [5]
    Tensor<D> ones = t2({1, 1}, 1, 2);
    Tensor<D> w = t2({1, 1}, 2, 1);
    Tensor<D> b({1}, {3});
    CHECK(linear(ctx, ones, w, b).item() == 5.0);

    // zeros annihilate
    Tensor<D> wz = Tensor<D>::zeros({2, 3});
    Tensor<D> bz = Tensor<D>::zeros({3});
    Tensor<D> z = linear(ctx, x, wz, bz);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.ptr()[i] == 0.0);

    // no-bias form
    Tensor<D> nb = linear(ctx, x, eye, Tensor<D>());
    CHECK(nb.ptr()[1] == 2.0);

    // dimension error names both shapes
    CHECK_THROWS_WITH_AS(linear(ctx, x, t2({1, 2, 3}, 3, 1), Tensor<D>()),
                         doctest::Contains("[1,2]"), ShapeError);
}

TEST_CASE("relu: definition and positives") {
    auto ctx = eval_ctx();
    Tensor<D> x({3}, {-1, 0, 2});
    Tensor<D> y = relu(ctx, x);
    CHECK(y.ptr()[0] == 0.0);
    CHECK(y.ptr()[1] == 0.0);
    CHECK(y.ptr()[2] == 2.0);
    Tensor<D> pos({3}, {0.5, 1, 7});
    Tensor<D> same = relu(ctx, pos);
    for (int i = 0; i < 3; ++i) CHECK(same.ptr()[i] == pos.ptr()[i]);
}

TEST_CASE("batch_norm: train fixed point, eval identity, batch statistics") {
    Prng rng(5);
    const int64_t n = 64, c = 3;
    Tensor<D> x({n, c});
    for (auto& v : *x.data) v = rng.uniform(-2, 2);
    // Normalize the input per channel first so it is already zero-mean/unit-var.
    for (int64_t j = 0; j < c; ++j) {
        double mean = 0, var = 0;
        for (int64_t i = 0; i < n; ++i) mean += x.ptr()[i * c + j];
        mean /= n;
        for (int64_t i = 0; i < n; ++i) {
            x.ptr()[i * c + j] -= mean;
            var += x.ptr()[i * c + j] * x.ptr()[i * c + j];
        }
        var /= n;
        for (int64_t i = 0; i < n; ++i) x.ptr()[i * c + j] /= std::sqrt(var);
    }
    Tensor<D> scale = Tensor<D>::full({c}, 1.0);
    Tensor<D> shift = Tensor<D>::zeros({c});
    std::vector<D> rm(c, 0.0), rv(c, 1.0);

    Ctx<D> train;
    train.train = true;
    train.update_stats = false;
    Tensor<D> y = batch_norm(train, x, scale, shift, rm, rv);
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(std::abs(y.ptr()[i] - x.ptr()[i]) < 1e-5);

    // eval with running (0,1) is the identity up to the epsilon
    Ctx<D> ev;
    Tensor<D> ye = batch_norm(ev, x, scale, shift, rm, rv);
    for (int64_t i = 0; i < ye.numel(); ++i)
        CHECK(std::abs(ye.ptr()[i] - x.ptr()[i]) < 1e-5);

    // train-mode output statistics on arbitrary input
    Tensor<D> x2({n, c});
    for (auto& v : *x2.data) v = rng.uniform(-5, 9);
    Tensor<D> y2 = batch_norm(train, x2, scale, shift, rm, rv);
    for (int64_t j = 0; j < c; ++j) {
        double mean = 0, var = 0;
        for (int64_t i = 0; i < n; ++i) mean += y2.ptr()[i * c + j];
        mean /= n;
        for (int64_t i = 0; i < n; ++i)
            var += (y2.ptr()[i * c + j] - mean) * (y2.ptr()[i * c + j] - mean);
        var /= n;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(var > 1.0 - 1e-4);
        CHECK(var < 1.0 + 1e-4);
    }

    // batch-too-small error
    Tensor<D> tiny({1, c}, {1, 2, 3});
    CHECK_THROWS_WITH_AS(batch_norm(train, tiny, scale, shift, rm, rv),
                         doctest::Contains("batch too small"), Error);
}

TEST_CASE("batch_norm: running statistics update with momentum 0.99") {
    Tensor<D> x({2, 1}, {1.0, 3.0});  // mean 2, biased var 1, unbiased var 2
    Tensor<D> scale = Tensor<D>::full({1}, 1.0);
    Tensor<D> shift = Tensor<D>::zeros({1});
    std::vector<D> rm(1, 0.0), rv(1, 1.0);
    Ctx<D> train;
    train.train = true;
    batch_norm(train, x, scale, shift, rm, rv);
    CHECK(rm[0] == doctest::Approx(0.01 * 2.0).epsilon(1e-12));
    CHECK(rv[0] == doctest::Approx(0.99 * 1.0 + 0.01 * 2.0).epsilon(1e-12));
}

TEST_CASE("softmax_over_neighbors: symmetry, K=1, closed form") {
    auto ctx = eval_ctx();
    Tensor<D> eq({1, 4, 1}, {5, 5, 5, 5});
    Tensor<D> w = softmax_over_neighbors(ctx, eq);
    for (int i = 0; i < 4; ++i) CHECK(w.ptr()[i] == doctest::Approx(0.25).epsilon(1e-12));

    Tensor<D> one({1, 1, 2}, {3, -9});
    Tensor<D> w1 = softmax_over_neighbors(ctx, one);
    CHECK(w1.ptr()[0] == 1.0);
    CHECK(w1.ptr()[1] == 1.0);

    Tensor<D> lg({1, 2, 1}, {0.0, std::log(3.0)});
    Tensor<D> w2 = softmax_over_neighbors(ctx, lg);
    CHECK(w2.ptr()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(w2.ptr()[1] == doctest::Approx(0.75).epsilon(1e-12));

    // normalization invariant on random input
    Prng rng(3);
    Tensor<D> r({7, 5, 4});
    for (auto& v : *r.data) v = rng.uniform(-30, 30);
    Tensor<D> wr = softmax_over_neighbors(ctx, r);
    for (int64_t i = 0; i < 7; ++i)
        for (int64_t q = 0; q < 4; ++q) {
            double s = 0;
            for (int64_t k = 0; k < 5; ++k) {
                const double v = wr.ptr()[(i * 5 + k) * 4 + q];
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
}

TEST_CASE("concat_channels: basic, neutral element, mismatch") {
    auto ctx = eval_ctx();
    Tensor<D> a = t2({1}, 1, 1);
    Tensor<D> b = t2({2}, 1, 1);
    Tensor<D> y = concat_channels(ctx, a, b);
    CHECK(y.shape == Shape{1, 2});
    CHECK(y.ptr()[0] == 1.0);
    CHECK(y.ptr()[1] == 2.0);

    Tensor<D> empty;
    Tensor<D> same = concat_channels(ctx, a, empty);
    CHECK(same.ptr() == a.ptr());

    CHECK_THROWS_AS(concat_channels(ctx, t2({1, 2}, 2, 1), t2({1, 2, 3}, 3, 1)), ShapeError);
}

TEST_CASE("subtract/hadamard: identities and hand values") {
    auto ctx = eval_ctx();
    Tensor<D> a = t2({2, 3}, 1, 2);
    Tensor<D> ones = Tensor<D>::full({1, 2}, 1.0);
    Tensor<D> h = hadamard(ctx, a, ones);
    CHECK(h.ptr()[0] == 2.0);
    CHECK(h.ptr()[1] == 3.0);

    Tensor<D> z = subtract(ctx, a, a);
    CHECK(z.ptr()[0] == 0.0);
    CHECK(z.ptr()[1] == 0.0);

    Tensor<D> p = hadamard(ctx, t2({2, 3}, 1, 2), t2({4, 5}, 1, 2));
    CHECK(p.ptr()[0] == 8.0);
    CHECK(p.ptr()[1] == 15.0);

    CHECK_THROWS_AS(subtract(ctx, t2({1, 2}, 1, 2), Tensor<D>({1, 3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("binary broadcast [N,C] and [N,1,C] against [N,K,C]") {
    auto ctx = eval_ctx();
    Tensor<D> big({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor<D> small({2, 2}, {10, 20, 30, 40});
    Tensor<D> y = subtract(ctx, small, big);
    // row n=0: (10,20)-(1,2), (10,20)-(3,4)
    CHECK(y.ptr()[0] == 9.0);
    CHECK(y.ptr()[3] == 16.0);
    CHECK(y.ptr()[4] == 25.0);

    Tensor<D> small3({2, 1, 2}, {10, 20, 30, 40});
    Tensor<D> y3 = subtract(ctx, big, small3);
    CHECK(y3.ptr()[0] == -9.0);
    CHECK(y3.ptr()[7] == -32.0);
}

TEST_CASE("sum/mean/max over neighbors") {
    auto ctx = eval_ctx();
    Tensor<D> x({2, 1, 2}, {1, 2, 3, 4});
    Tensor<D> s = sum_over_neighbors(ctx, x);  // K=1 squeeze
    CHECK(s.shape == Shape{2, 2});
    CHECK(s.ptr()[3] == 4.0);

    Tensor<D> ones = Tensor<D>::full({3, 16, 2}, 1.0);
    Tensor<D> s16 = sum_over_neighbors(ctx, ones);
    for (int64_t i = 0; i < s16.numel(); ++i) CHECK(s16.ptr()[i] == 16.0);

    // random sum against a naive loop, exact in 64-bit with fixed order
    Prng rng(4);
    Tensor<D> r({5, 7, 3});
    for (auto& v : *r.data) v = rng.uniform(-1, 1);
    Tensor<D> sr = sum_over_neighbors(ctx, r);
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t q = 0; q < 3; ++q) {
            double acc = 0;
            for (int64_t k = 0; k < 7; ++k) acc += r.ptr()[(i * 7 + k) * 3 + q];
            CHECK(sr.ptr()[i * 3 + q] == acc);
        }

    Tensor<D> mx = max_over_neighbors(ctx, r);
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t q = 0; q < 3; ++q) {
            double best = -1e300;
            for (int64_t k = 0; k < 7; ++k) best = std::max(best, r.ptr()[(i * 7 + k) * 3 + q]);
            CHECK(mx.ptr()[i * 3 + q] == best);
        }

    Tensor<D> mean = mean_over_neighbors(ctx, r);
    for (int64_t i = 0; i < 15; ++i)
        CHECK(mean.ptr()[i] == doctest::Approx(sr.ptr()[i] / 7.0).epsilon(1e-15));
}

TEST_CASE("gather_neighbors: self rows, swaps, range errors") {
    auto ctx = eval_ctx();
    Tensor<D> f = t2({1, 2, 3, 4}, 2, 2);

    NeighborIndex self;
    self.n = 2;
    self.k = 3;
    self.idx = {0, 0, 0, 1, 1, 1};
    Tensor<D> g = gather_neighbors(ctx, f, self);
    for (int k = 0; k < 3; ++k) {
        CHECK(g.ptr()[k * 2 + 0] == 1.0);
        CHECK(g.ptr()[(3 + k) * 2 + 1] == 4.0);
    }

    NeighborIndex swap;
    swap.n = 1;
    swap.k = 2;
    swap.idx = {1, 0};
    Tensor<D> sw = gather_neighbors(ctx, f, swap);
    CHECK(sw.ptr()[0] == 3.0);
    CHECK(sw.ptr()[2] == 1.0);

    NeighborIndex bad;
    bad.n = 1;
    bad.k = 1;
    bad.idx = {2};
    CHECK_THROWS_AS(gather_neighbors(ctx, f, bad), ShapeError);
}

TEST_CASE("dropout: eval identity, p=0 identity, survivor statistics") {
    Prng rng(11);
    Tensor<D> x = Tensor<D>::full({100000}, 1.0);

    Ctx<D> ev;
    Tensor<D> same = dropout(ev, x, 0.5);
    CHECK(same.ptr() == x.ptr());

    Ctx<D> tr;
    tr.train = true;
    tr.rng = &rng;
    Tensor<D> same2 = dropout(tr, x, 0.0);
    CHECK(same2.ptr() == x.ptr());

    Tensor<D> y = dropout(tr, x, 0.5);
    int64_t survivors = 0;
    for (int64_t i = 0; i < y.numel(); ++i) {
        if (y.ptr()[i] != 0.0) {
            ++survivors;
            CHECK(y.ptr()[i] == 2.0);
        }
    }
    const double frac = static_cast<double>(survivors) / static_cast<double>(y.numel());
    CHECK(frac > 0.49);
    CHECK(frac < 0.51);

    CHECK_THROWS_AS(dropout(tr, x, 1.0), ConfigError);
    CHECK_THROWS_AS(dropout(tr, x, -0.1), ConfigError);
}

TEST_CASE("cross_entropy: uniform, saturated, closed form, label checks") {
    auto ctx = eval_ctx();
    Tensor<D> uniform = Tensor<D>::zeros({3, 8});
    Tensor<D> l = cross_entropy(ctx, uniform, {0, 5, 7});
    CHECK(l.item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));

    Tensor<D> sat = Tensor<D>::zeros({1, 8});
    sat.ptr()[2] = 1000.0;
    CHECK(cross_entropy(ctx, sat, {2}).item() == doctest::Approx(0.0).epsilon(1e-9));

    Tensor<D> two({1, 2}, {0.0, std::log(3.0)});
    CHECK(cross_entropy(ctx, two, {1}).item() ==
          doctest::Approx(-std::log(0.75)).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy(ctx, two, {2}), DataError);
    CHECK_THROWS_AS(cross_entropy(ctx, two, {7, 1}), ShapeError);
}

TEST_CASE("predict: one-hot, tie rule, loop oracle") {
    Tensor<D> onehot = Tensor<D>::zeros({1, 8});
    onehot.ptr()[5] = 1.0;
    CHECK(predict(onehot)[0] == 5);

    Tensor<D> ties = Tensor<D>::full({1, 8}, 0.25);
    CHECK(predict(ties)[0] == 0);

    Prng rng(17);
    Tensor<D> r({5, 8});
    for (auto& v : *r.data) v = rng.uniform(-1, 1);
    auto pred = predict(r);
    for (int64_t i = 0; i < 5; ++i) {
        int best = 0;
        for (int q = 1; q < 8; ++q)
            if (r.ptr()[i * 8 + q] > r.ptr()[i * 8 + best]) best = q;
        CHECK(pred[static_cast<size_t>(i)] == best);
    }
}

TEST_CASE("ops reject non-finite outputs when checks are on") {
    Ctx<D> ctx;
    Tensor<D> big = Tensor<D>::full({2, 2}, 1e308);
    Tensor<D> w = Tensor<D>::full({2, 2}, 1e308);
    CHECK_THROWS_AS(linear(ctx, big, w, Tensor<D>()), NumericalError);
    ctx.finite_checks = false;
    CHECK_NOTHROW(linear(ctx, big, w, Tensor<D>()));
}
