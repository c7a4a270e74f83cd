#pragma once

#include <cstdint>
#include <vector>

#include "dla/pointcloud.hpp"
#include "dla/tape.hpp"
#include "dla/tensor.hpp"

// The op set of the tensor engine. Every op computes its forward result and,
// when ctx.tape is set, records a closure that routes gradients back to its
// inputs. Ops are pure given (inputs, ctx mode, rng state) and reject
// non-finite outputs when ctx.finite_checks is on.

namespace dla {

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.99;

// y[..., j] = sum_i x[..., i] * w[i, j] + b[j]. Bias optional: pass a
// default-constructed tensor for none.
template <class T>
Tensor<T> linear(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <class T>
Tensor<T> relu(Ctx<T>& ctx, const Tensor<T>& x);

// Per-channel normalization over all leading axes of x ([N,C] or [N,K,C]).
// Train mode uses batch statistics (needs >= 2 rows) and, when
// ctx.update_stats, folds them into the running estimates with momentum
// kBnMomentum. Eval mode normalizes with the running estimates.
template <class T>
Tensor<T> batch_norm(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& scale,
                     const Tensor<T>& shift, std::vector<T>& running_mean,
                     std::vector<T>& running_var);

// Softmax over the K axis of [N,K,C], independently per (point, channel).
template <class T>
Tensor<T> softmax_over_neighbors(Ctx<T>& ctx, const Tensor<T>& x);

// Channels of a then b; leading dims must match.
template <class T>
Tensor<T> concat_channels(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b);

// Elementwise binaries. Identical shapes, or one side [N,C] / [N,1,C]
// broadcast against the other's [N,K,C].
template <class T>
Tensor<T> add(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> subtract(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> hadamard(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b);

// Reductions over the K axis of [N,K,C]. Sums run in fixed ascending-k
// order. max breaks ties toward the smaller k.
template <class T>
Tensor<T> sum_over_neighbors(Ctx<T>& ctx, const Tensor<T>& x);
template <class T>
Tensor<T> mean_over_neighbors(Ctx<T>& ctx, const Tensor<T>& x);
template <class T>
Tensor<T> max_over_neighbors(Ctx<T>& ctx, const Tensor<T>& x);

// [N,C] -> [N,K,C], each row repeated K times; gradient sums over k.
template <class T>
Tensor<T> expand_neighbors(Ctx<T>& ctx, const Tensor<T>& x, int64_t k);

// out[n,k,:] = features[idx[n,k],:]; gradient scatter-adds into source rows.
template <class T>
Tensor<T> gather_neighbors(Ctx<T>& ctx, const Tensor<T>& features, const NeighborIndex& idx);

// out[r,:] = features[rows[r],:].
template <class T>
Tensor<T> gather_rows(Ctx<T>& ctx, const Tensor<T>& features, const std::vector<int32_t>& rows);

// Train: zero each element with probability p, scale survivors by 1/(1-p),
// consuming ctx.rng. Eval or p == 0: identity.
template <class T>
Tensor<T> dropout(Ctx<T>& ctx, const Tensor<T>& x, double p);

// Mean over rows of -log softmax(logits)[label], fused stable log-softmax.
template <class T>
Tensor<T> cross_entropy(Ctx<T>& ctx, const Tensor<T>& logits, const std::vector<int32_t>& labels);

// Argmax over the class axis, ties to the smaller class index.
template <class T>
std::vector<int32_t> predict(const Tensor<T>& logits);

// Throws NumericalError naming `op` if t contains NaN/Inf (and checks are on).
template <class T>
void check_finite(const Ctx<T>& ctx, const Tensor<T>& t, const char* op);

}  // namespace dla
