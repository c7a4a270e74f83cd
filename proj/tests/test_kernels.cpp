#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "dla/kernels.hpp"
#include "dla/rng.hpp"
#include "oracles.hpp"

using namespace dla;

namespace {

template <class T>
std::vector<T> random_vec(size_t n, Prng& rng, double lo = -3.0, double hi = 3.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return v;
}

// Sizes chosen to exercise every remainder path of the 8/4-lane loops.
const std::vector<size_t> kSizes = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 64, 67, 1001};

template <class T>
void check_equivalence() {
    const auto* vec = kernels::avx2_table<T>();
    if (!vec) {
        MESSAGE("AVX2 unavailable on this CPU; equivalence suite skipped");
        return;
    }
    const auto& ref = kernels::scalar_table<T>();
    Prng rng(99);
    for (size_t n : kSizes) {
        auto a = random_vec<T>(n, rng);
        auto b = random_vec<T>(n, rng, 0.5, 4.0);  // also used as divisor
        std::vector<T> y1(n), y2(n);

        auto expect_bitwise = [&](const char* what) {
            const bool same = std::memcmp(y1.data(), y2.data(), n * sizeof(T)) == 0;
            CAPTURE(what);
            CAPTURE(n);
            CHECK(same);
        };

        ref.add(a.data(), b.data(), y1.data(), n);
        vec->add(a.data(), b.data(), y2.data(), n);
        expect_bitwise("add");
        ref.sub(a.data(), b.data(), y1.data(), n);
        vec->sub(a.data(), b.data(), y2.data(), n);
        expect_bitwise("sub");
        ref.mul(a.data(), b.data(), y1.data(), n);
        vec->mul(a.data(), b.data(), y2.data(), n);
        expect_bitwise("mul");
        ref.div(a.data(), b.data(), y1.data(), n);
        vec->div(a.data(), b.data(), y2.data(), n);
        expect_bitwise("div");
        ref.relu(a.data(), y1.data(), n);
        vec->relu(a.data(), y2.data(), n);
        expect_bitwise("relu");
        ref.relu_bwd(a.data(), b.data(), y1.data(), n);
        vec->relu_bwd(a.data(), b.data(), y2.data(), n);
        expect_bitwise("relu_bwd");

        y1 = a;
        y2 = a;
        ref.acc(y1.data(), b.data(), n);
        vec->acc(y2.data(), b.data(), n);
        expect_bitwise("acc");
        y1 = a;
        y2 = a;
        ref.acc_mul(y1.data(), a.data(), b.data(), n);
        vec->acc_mul(y2.data(), a.data(), b.data(), n);
        expect_bitwise("acc_mul");
        y1 = a;
        y2 = a;
        ref.axpy(y1.data(), T(1.7), b.data(), n);
        vec->axpy(y2.data(), T(1.7), b.data(), n);
        expect_bitwise("axpy");
        y1 = a;
        y2 = a;
        ref.scale(y1.data(), T(0.37), n);
        vec->scale(y2.data(), T(0.37), n);
        expect_bitwise("scale");
        y1 = a;
        y2 = a;
        ref.maxe(y1.data(), b.data(), n);
        vec->maxe(y2.data(), b.data(), n);
        expect_bitwise("maxe");

        const T d1 = ref.dot(a.data(), b.data(), n);
        const T d2 = vec->dot(a.data(), b.data(), n);
        CHECK(std::memcmp(&d1, &d2, sizeof(T)) == 0);

        CHECK(ref.any_nonfinite(a.data(), n) == vec->any_nonfinite(a.data(), n));
    }

    // adam: state evolution must stay bit-identical across steps.
    for (size_t n : {size_t(5), size_t(16), size_t(33)}) {
        auto p1 = random_vec<T>(n, rng), p2 = p1;
        std::vector<T> m1(n, T(0)), v1(n, T(0)), m2(n, T(0)), v2(n, T(0));
        for (int t = 1; t <= 5; ++t) {
            auto g = random_vec<T>(n, rng);
            const T bc1 = static_cast<T>(1.0 - std::pow(0.9, t));
            const T bc2 = static_cast<T>(1.0 - std::pow(0.999, t));
            ref.adam(p1.data(), m1.data(), v1.data(), g.data(), n, T(0.01), T(0.9), T(0.999),
                     T(1e-8), bc1, bc2);
            vec->adam(p2.data(), m2.data(), v2.data(), g.data(), n, T(0.01), T(0.9), T(0.999),
                      T(1e-8), bc1, bc2);
        }
        CHECK(std::memcmp(p1.data(), p2.data(), n * sizeof(T)) == 0);
        CHECK(std::memcmp(m1.data(), m2.data(), n * sizeof(T)) == 0);
        CHECK(std::memcmp(v1.data(), v2.data(), n * sizeof(T)) == 0);
    }
}

}  // namespace

TEST_CASE("scalar and avx2 kernels are bit-identical (float)") { check_equivalence<float>(); }
TEST_CASE("scalar and avx2 kernels are bit-identical (double)") { check_equivalence<double>(); }

TEST_CASE("dot follows the fixed-lane contract") {
    // With catastrophic cancellation across lanes, the documented reduction
    // tree gives a different value than a left-to-right sum; pin the tree.
    const auto& ref = kernels::scalar_table<double>();
    std::vector<double> a = {1e100, 1.0, -1e100, 2.0};
    std::vector<double> ones(4, 1.0);
    const double expect = (a[0] + a[1]) + (a[2] + a[3]);
    CHECK(ref.dot(a.data(), ones.data(), 4) == expect);
    const double sequential = ((a[0] + a[1]) + a[2]) + a[3];
    CHECK(expect != sequential);
}

TEST_CASE("any_nonfinite detects NaN and Inf anywhere") {
    const auto& ref = kernels::scalar_table<float>();
    std::vector<float> v(35, 1.0f);
    CHECK_FALSE(ref.any_nonfinite(v.data(), v.size()));
    for (size_t pos : {size_t(0), size_t(7), size_t(8), size_t(32), size_t(34)}) {
        auto w = v;
        w[pos] = std::numeric_limits<float>::quiet_NaN();
        CHECK(ref.any_nonfinite(w.data(), w.size()));
        w[pos] = std::numeric_limits<float>::infinity();
        CHECK(ref.any_nonfinite(w.data(), w.size()));
        w[pos] = -std::numeric_limits<float>::infinity();
        CHECK(ref.any_nonfinite(w.data(), w.size()));
    }
}

TEST_CASE("adam kernel matches the hand-unrolled recurrence exactly in 64-bit") {
    const auto& ref = kernels::table<double>();
    double p = 0.5, g = 0.3;
    double m = 0, v = 0;
    oracle::AdamOracle unrolled;
    double p_oracle = 0.5;
    for (int t = 1; t <= 2; ++t) {
        const double bc1 = 1.0 - std::pow(0.9, t);
        const double bc2 = 1.0 - std::pow(0.999, t);
        ref.adam(&p, &m, &v, &g, 1, 0.01, 0.9, 0.999, 1e-8, bc1, bc2);
        p_oracle = unrolled.step(p_oracle, g, 0.01, 0.9, 0.999, 1e-8, t);
    }
    CHECK(p == p_oracle);
}

TEST_CASE("kernel selection reports a valid active table") {
    const char* name = kernels::active_name();
    const bool valid = std::strcmp(name, "scalar") == 0 || std::strcmp(name, "avx2") == 0;
    CHECK(valid);
    if (kernels::cpu_has_avx2() && !std::getenv("DLA_KERNELS"))
        CHECK(std::strcmp(name, "avx2") == 0);
}
