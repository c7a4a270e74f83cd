#pragma once

#include <cstddef>

namespace dla::kernels {

// Flat-array inner loops behind every tensor op. Two implementations exist:
// a scalar reference and an AVX2 variant; one is selected at startup and the
// two are required to be bit-identical on all inputs.
//
// Bit-equality is by construction:
//   * elementwise kernels have no cross-lane interaction at all;
//   * accumulating kernels (acc, acc_mul, axpy) keep each output element a
//     sequential sum, vectorization runs across independent elements;
//   * dot uses a fixed multi-accumulator contract: LANES independent partial
//     sums over strided blocks, reduced in a fixed tree order, plus a scalar
//     tail. LANES is 8 for float and 4 for double in both implementations.
//   * adam applies the update in a pinned expression order; sqrt and division
//     are IEEE-correctly-rounded in both scalar and vector forms.
// No kernel may use FMA; the build disables FP contraction.
template <class T>
struct Table {
    const char* name;

    void (*add)(const T* a, const T* b, T* y, std::size_t n);   // y = a + b
    void (*sub)(const T* a, const T* b, T* y, std::size_t n);   // y = a - b
    void (*mul)(const T* a, const T* b, T* y, std::size_t n);   // y = a * b
    void (*div)(const T* a, const T* b, T* y, std::size_t n);   // y = a / b
    void (*acc)(T* y, const T* x, std::size_t n);               // y += x
    void (*acc_mul)(T* y, const T* a, const T* b, std::size_t n);  // y += a*b
    void (*axpy)(T* y, T a, const T* x, std::size_t n);         // y += a*x
    void (*scale)(T* y, T a, std::size_t n);                    // y *= a
    void (*maxe)(T* y, const T* x, std::size_t n);              // y = max(y,x)
    T (*dot)(const T* a, const T* b, std::size_t n);
    void (*relu)(const T* x, T* y, std::size_t n);              // y = max(0,x)
    void (*relu_bwd)(const T* x, const T* g, T* y, std::size_t n);  // y = x>0 ? g : 0
    bool (*any_nonfinite)(const T* x, std::size_t n);
    // Bias-corrected Adam, in place:
    //   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g*g
    //   p = p - lr * (m/bc1) / (sqrt(v/bc2) + eps)
    void (*adam)(T* p, T* m, T* v, const T* g, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T bc1, T bc2);
};

template <class T>
constexpr int dot_lanes() {
    return sizeof(T) == 4 ? 8 : 4;
}

// The active table. Selected on first call: DLA_KERNELS env var ("scalar" or
// "avx2") if set, otherwise avx2 when the CPU supports it.
template <class T>
const Table<T>& table();

template <class T>
const Table<T>& scalar_table();

// Null when the build or the CPU cannot run AVX2.
template <class T>
const Table<T>* avx2_table();

bool cpu_has_avx2();
const char* active_name();
void force(const char* name);  // "scalar" | "avx2" | nullptr to re-autodetect

}  // namespace dla::kernels
