#include "dla/kernels.hpp"

#include <cmath>

// Reference kernels. These define the numerical contract; the AVX2 variants
// must reproduce them bit for bit.

namespace dla::kernels {
namespace {

template <class T>
void s_add(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class T>
void s_sub(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

template <class T>
void s_mul(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <class T>
void s_div(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] / b[i];
}

template <class T>
void s_acc(T* y, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

template <class T>
void s_acc_mul(T* y, const T* a, const T* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

template <class T>
void s_axpy(T* y, T a, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void s_scale(T* y, T a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] *= a;
}

template <class T>
void s_maxe(T* y, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] < x[i] ? x[i] : y[i];
}

// Fixed-lane dot product; see Table docs for the contract.
template <class T>
T s_dot(const T* a, const T* b, std::size_t n) {
    constexpr int L = dot_lanes<T>();
    T acc[L] = {};
    std::size_t i = 0;
    for (; i + L <= n; i += L)
        for (int l = 0; l < L; ++l) acc[l] += a[i + l] * b[i + l];
    T tail = T(0);
    for (; i < n; ++i) tail += a[i] * b[i];
    if constexpr (L == 4) {
        return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
    } else {
        T lo = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        T hi = (acc[4] + acc[5]) + (acc[6] + acc[7]);
        return (lo + hi) + tail;
    }
}

template <class T>
void s_relu(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void s_relu_bwd(const T* x, const T* g, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? g[i] : T(0);
}

template <class T>
bool s_any_nonfinite(const T* x, std::size_t n) {
    // x - x is 0 for finite values, NaN for Inf and NaN.
    for (std::size_t i = 0; i < n; ++i) {
        const T d = x[i] - x[i];
        if (d != T(0)) return true;
    }
    return false;
}

template <class T>
void s_adam(T* p, T* m, T* v, const T* g, std::size_t n, T lr, T beta1, T beta2,
            T eps, T bc1, T bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * (g[i] * g[i]);
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps));
    }
}

template <class T>
Table<T> make_scalar() {
    Table<T> t;
    t.name = "scalar";
    t.add = s_add<T>;
    t.sub = s_sub<T>;
    t.mul = s_mul<T>;
    t.div = s_div<T>;
    t.acc = s_acc<T>;
    t.acc_mul = s_acc_mul<T>;
    t.axpy = s_axpy<T>;
    t.scale = s_scale<T>;
    t.maxe = s_maxe<T>;
    t.dot = s_dot<T>;
    t.relu = s_relu<T>;
    t.relu_bwd = s_relu_bwd<T>;
    t.any_nonfinite = s_any_nonfinite<T>;
    t.adam = s_adam<T>;
    return t;
}

}  // namespace

template <>
const Table<float>& scalar_table<float>() {
    static const Table<float> t = make_scalar<float>();
    return t;
}

template <>
const Table<double>& scalar_table<double>() {
    static const Table<double> t = make_scalar<double>();
    return t;
}

}  // namespace dla::kernels
