#include "dla/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dla/kernels.hpp"
#include "dla/parallel.hpp"

namespace dla {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <class T>
void check_finite(const Ctx<T>& ctx, const Tensor<T>& t, const char* op) {
    if (!ctx.finite_checks) return;
    if (kernels::table<T>().any_nonfinite(t.ptr(), static_cast<size_t>(t.numel())))
        throw NumericalError(std::string("non-finite values in output of ") + op);
}

namespace {

// Grain sizes for parallel_for, in output elements.
constexpr int64_t kRowGrain = 1 << 14;

template <class T>
int64_t rows_of(const Tensor<T>& x) {
    return x.numel() / x.shape.back();
}

template <class T>
Shape with_last(const Tensor<T>& x, int64_t c) {
    Shape s = x.shape;
    s.back() = c;
    return s;
}

// [N,K,C] accessors.
template <class T>
void require_nkc(const Tensor<T>& x, const char* op) {
    if (x.rank() != 3)
        throw ShapeError(std::string(op) + " expects a [N,K,C] tensor, got " + shape_str(x.shape));
}

}  // namespace

// ---------------------------------------------------------------------------
// linear

template <class T>
Tensor<T> linear(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (w.rank() != 2)
        throw ShapeError("linear: weight must be rank 2, got " + shape_str(w.shape));
    const int64_t cin = w.dim(0), cout = w.dim(1);
    if (x.rank() < 1 || x.shape.back() != cin)
        throw ShapeError("linear: input shape " + shape_str(x.shape) +
                         " does not end in Cin of weight shape " + shape_str(w.shape));
    const bool has_bias = b.numel() > 0;
    if (has_bias && (b.rank() != 1 || b.dim(0) != cout))
        throw ShapeError("linear: bias shape " + shape_str(b.shape) + " vs weight " + shape_str(w.shape));

    const int64_t rows = rows_of(x);
    Tensor<T> y(with_last(x, cout));
    const auto& K = kernels::table<T>();
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    const T* bp = has_bias ? b.ptr() : nullptr;
    T* yp = y.ptr();

    parallel_for(rows, std::max<int64_t>(1, kRowGrain / std::max<int64_t>(1, cin * cout)),
                 [&](int64_t r0, int64_t r1) {
                     for (int64_t r = r0; r < r1; ++r) {
                         T* yr = yp + r * cout;
                         if (has_bias)
                             std::memcpy(yr, bp, sizeof(T) * static_cast<size_t>(cout));
                         else
                             std::fill(yr, yr + cout, T(0));
                         const T* xr = xp + r * cin;
                         for (int64_t i = 0; i < cin; ++i)
                             K.axpy(yr, xr[i], wp + i * cout, static_cast<size_t>(cout));
                     }
                 });
    check_finite(ctx, y, "linear");

    if (ctx.recording()) {
        Tensor<T> xs = x, ws = w, bs = b;
        y.node = ctx.tape->add_node([xs, ws, bs, rows, cin, cout, has_bias](
                                        Tape<T>& tape, const Tensor<T>& g) {
            const auto& KK = kernels::table<T>();
            const T* gp = g.ptr();
            if (xs.node >= 0) {
                Tensor<T> gx(xs.shape);
                T* gxp = gx.ptr();
                parallel_for(rows, std::max<int64_t>(1, kRowGrain / std::max<int64_t>(1, cin * cout)),
                             [&](int64_t r0, int64_t r1) {
                                 for (int64_t r = r0; r < r1; ++r)
                                     for (int64_t i = 0; i < cin; ++i)
                                         gxp[r * cin + i] = KK.dot(gp + r * cout, ws.ptr() + i * cout,
                                                                   static_cast<size_t>(cout));
                             });
                tape.accumulate(xs.node, gx);
            }
            if (ws.node >= 0) {
                Tensor<T> gw(ws.shape);
                T* gwp = gw.ptr();
                // Parallel over input channels: each dw row sums over r in
                // ascending order regardless of the split.
                parallel_for(cin, std::max<int64_t>(1, kRowGrain / std::max<int64_t>(1, rows * cout)),
                             [&](int64_t i0, int64_t i1) {
                                 for (int64_t i = i0; i < i1; ++i) {
                                     T* gwr = gwp + i * cout;
                                     for (int64_t r = 0; r < rows; ++r)
                                         KK.axpy(gwr, xs.ptr()[r * cin + i], gp + r * cout,
                                                 static_cast<size_t>(cout));
                                 }
                             });
                tape.accumulate(ws.node, gw);
            }
            if (has_bias && bs.node >= 0) {
                Tensor<T> gb(bs.shape);
                for (int64_t r = 0; r < rows; ++r)
                    KK.acc(gb.ptr(), gp + r * cout, static_cast<size_t>(cout));
                tape.accumulate(bs.node, gb);
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// relu

template <class T>
Tensor<T> relu(Ctx<T>& ctx, const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    kernels::table<T>().relu(x.ptr(), y.ptr(), static_cast<size_t>(x.numel()));
    check_finite(ctx, y, "relu");
    if (ctx.recording()) {
        Tensor<T> xs = x;
        y.node = ctx.tape->add_node([xs](Tape<T>& tape, const Tensor<T>& g) {
            if (xs.node < 0) return;
            Tensor<T> gx(xs.shape);
            kernels::table<T>().relu_bwd(xs.ptr(), g.ptr(), gx.ptr(), static_cast<size_t>(g.numel()));
            tape.accumulate(xs.node, gx);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// batch_norm

template <class T>
Tensor<T> batch_norm(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& scale,
                     const Tensor<T>& shift, std::vector<T>& running_mean,
                     std::vector<T>& running_var) {
    if (x.rank() < 2)
        throw ShapeError("batch_norm: input must have rank >= 2, got " + shape_str(x.shape));
    const int64_t c = x.shape.back();
    const int64_t rows = rows_of(x);
    if (scale.numel() != c || shift.numel() != c || static_cast<int64_t>(running_mean.size()) != c ||
        static_cast<int64_t>(running_var.size()) != c)
        throw ShapeError("batch_norm: per-channel parameter size mismatch for C=" + std::to_string(c));
    if (ctx.train && rows < 2)
        throw Error("batch_norm: batch too small for train mode (" + std::to_string(rows) +
                    " rows, need >= 2)");

    const auto& K = kernels::table<T>();
    const T* xp = x.ptr();
    const size_t cs = static_cast<size_t>(c);

    std::vector<T> mean(cs), invstd(cs);
    if (ctx.train) {
        std::vector<T> var(cs);
        for (int64_t r = 0; r < rows; ++r) K.acc(mean.data(), xp + r * c, cs);
        K.scale(mean.data(), T(1) / static_cast<T>(rows), cs);
        std::vector<T> tmp(cs);
        for (int64_t r = 0; r < rows; ++r) {
            K.sub(xp + r * c, mean.data(), tmp.data(), cs);
            K.acc_mul(var.data(), tmp.data(), tmp.data(), cs);
        }
        K.scale(var.data(), T(1) / static_cast<T>(rows), cs);
        for (int64_t j = 0; j < c; ++j)
            invstd[static_cast<size_t>(j)] =
                T(1) / std::sqrt(var[static_cast<size_t>(j)] + static_cast<T>(kBnEpsilon));
        if (ctx.update_stats) {
            const T mom = static_cast<T>(kBnMomentum);
            const T unbias = static_cast<T>(rows) / static_cast<T>(rows - 1);
            for (int64_t j = 0; j < c; ++j) {
                const size_t js = static_cast<size_t>(j);
                running_mean[js] = mom * running_mean[js] + (T(1) - mom) * mean[js];
                running_var[js] = mom * running_var[js] + (T(1) - mom) * (var[js] * unbias);
            }
        }
    } else {
        mean = running_mean;
        for (int64_t j = 0; j < c; ++j)
            invstd[static_cast<size_t>(j)] =
                T(1) / std::sqrt(running_var[static_cast<size_t>(j)] + static_cast<T>(kBnEpsilon));
    }

    // y = xhat*scale + shift with xhat = (x - mean)*invstd, saved for backward.
    Tensor<T> xhat(x.shape);
    Tensor<T> y(x.shape);
    T* hp = xhat.ptr();
    T* yp = y.ptr();
    parallel_for(rows, std::max<int64_t>(1, kRowGrain / c), [&](int64_t r0, int64_t r1) {
        std::vector<T> tmp(cs);
        for (int64_t r = r0; r < r1; ++r) {
            K.sub(xp + r * c, mean.data(), tmp.data(), cs);
            K.mul(tmp.data(), invstd.data(), hp + r * c, cs);
            K.mul(hp + r * c, scale.ptr(), tmp.data(), cs);
            K.add(tmp.data(), shift.ptr(), yp + r * c, cs);
        }
    });
    check_finite(ctx, y, "batch_norm");

    if (ctx.recording()) {
        Tensor<T> xs = x, sc = scale, sh = shift;
        const bool train = ctx.train;
        auto inv = std::make_shared<std::vector<T>>(std::move(invstd));
        y.node = ctx.tape->add_node([xs, sc, sh, xhat, inv, rows, c, train](
                                        Tape<T>& tape, const Tensor<T>& g) {
            const auto& KK = kernels::table<T>();
            const size_t csz = static_cast<size_t>(c);
            const T* gp = g.ptr();
            const T* hp2 = xhat.ptr();
            std::vector<T> gsum(csz), gdot(csz);
            for (int64_t r = 0; r < rows; ++r) {
                KK.acc(gsum.data(), gp + r * c, csz);
                KK.acc_mul(gdot.data(), gp + r * c, hp2 + r * c, csz);
            }
            if (sc.node >= 0) tape.accumulate(sc.node, Tensor<T>(sc.shape, std::vector<T>(gdot)));
            if (sh.node >= 0) tape.accumulate(sh.node, Tensor<T>(sh.shape, std::vector<T>(gsum)));
            if (xs.node >= 0) {
                Tensor<T> gx(xs.shape);
                T* gxp = gx.ptr();
                std::vector<T> a(csz);
                KK.mul(sc.ptr(), inv->data(), a.data(), csz);
                if (train) {
                    // gx = a * (g - mean_r(g) - xhat * mean_r(g*xhat))
                    std::vector<T> mg(gsum), mgh(gdot);
                    KK.scale(mg.data(), T(1) / static_cast<T>(rows), csz);
                    KK.scale(mgh.data(), T(1) / static_cast<T>(rows), csz);
                    parallel_for(rows, std::max<int64_t>(1, kRowGrain / c), [&](int64_t r0, int64_t r1) {
                        std::vector<T> t1(csz), t2(csz);
                        for (int64_t r = r0; r < r1; ++r) {
                            KK.mul(hp2 + r * c, mgh.data(), t1.data(), csz);
                            KK.sub(gp + r * c, mg.data(), t2.data(), csz);
                            KK.sub(t2.data(), t1.data(), t1.data(), csz);
                            KK.mul(t1.data(), a.data(), gxp + r * c, csz);
                        }
                    });
                } else {
                    parallel_for(rows, std::max<int64_t>(1, kRowGrain / c), [&](int64_t r0, int64_t r1) {
                        for (int64_t r = r0; r < r1; ++r)
                            KK.mul(gp + r * c, a.data(), gxp + r * c, csz);
                    });
                }
                tape.accumulate(xs.node, gx);
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// softmax over the neighbor axis

template <class T>
Tensor<T> softmax_over_neighbors(Ctx<T>& ctx, const Tensor<T>& x) {
    require_nkc(x, "softmax_over_neighbors");
    const int64_t n = x.dim(0), k = x.dim(1), c = x.dim(2);
    const auto& K = kernels::table<T>();
    const size_t cs = static_cast<size_t>(c);
    Tensor<T> y(x.shape);
    const T* xp = x.ptr();
    T* yp = y.ptr();

    parallel_for(n, std::max<int64_t>(1, kRowGrain / (k * c)), [&](int64_t n0, int64_t n1) {
        std::vector<T> rowmax(cs), sum(cs);
        for (int64_t i = n0; i < n1; ++i) {
            const T* xi = xp + i * k * c;
            T* yi = yp + i * k * c;
            std::memcpy(rowmax.data(), xi, sizeof(T) * cs);
            for (int64_t j = 1; j < k; ++j) K.maxe(rowmax.data(), xi + j * c, cs);
            std::fill(sum.begin(), sum.end(), T(0));
            for (int64_t j = 0; j < k; ++j) {
                K.sub(xi + j * c, rowmax.data(), yi + j * c, cs);
                for (int64_t q = 0; q < c; ++q) {
                    T& e = yi[j * c + q];
                    e = std::exp(e);
                }
                K.acc(sum.data(), yi + j * c, cs);
            }
            for (int64_t j = 0; j < k; ++j) K.div(yi + j * c, sum.data(), yi + j * c, cs);
        }
    });
    check_finite(ctx, y, "softmax_over_neighbors");

    if (ctx.recording()) {
        Tensor<T> xs = x, ys = y;
        y.node = ctx.tape->add_node([xs, ys, n, k, c](Tape<T>& tape, const Tensor<T>& g) {
            if (xs.node < 0) return;
            const auto& KK = kernels::table<T>();
            const size_t csz = static_cast<size_t>(c);
            Tensor<T> gx(xs.shape);
            const T* gp = g.ptr();
            const T* sp = ys.ptr();
            T* gxp = gx.ptr();
            parallel_for(n, std::max<int64_t>(1, kRowGrain / (k * c)), [&](int64_t n0, int64_t n1) {
                std::vector<T> dot(csz), tmp(csz);
                for (int64_t i = n0; i < n1; ++i) {
                    const T* gi = gp + i * k * c;
                    const T* si = sp + i * k * c;
                    T* oi = gxp + i * k * c;
                    std::fill(dot.begin(), dot.end(), T(0));
                    for (int64_t j = 0; j < k; ++j) KK.acc_mul(dot.data(), gi + j * c, si + j * c, csz);
                    for (int64_t j = 0; j < k; ++j) {
                        KK.sub(gi + j * c, dot.data(), tmp.data(), csz);
                        KK.mul(tmp.data(), si + j * c, oi + j * c, csz);
                    }
                }
            });
            tape.accumulate(xs.node, gx);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// concat / binaries

template <class T>
Tensor<T> concat_channels(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() == 0) return b;
    if (b.numel() == 0) return a;
    if (a.rank() != b.rank())
        throw ShapeError("concat_channels: rank mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    for (int i = 0; i + 1 < a.rank(); ++i)
        if (a.dim(i) != b.dim(i))
            throw ShapeError("concat_channels: leading dims differ: " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
    const int64_t ca = a.shape.back(), cb = b.shape.back();
    const int64_t rows = rows_of(a);
    Tensor<T> y(with_last(a, ca + cb));
    T* yp = y.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        std::memcpy(yp + r * (ca + cb), a.ptr() + r * ca, sizeof(T) * static_cast<size_t>(ca));
        std::memcpy(yp + r * (ca + cb) + ca, b.ptr() + r * cb, sizeof(T) * static_cast<size_t>(cb));
    }
    if (ctx.recording()) {
        Tensor<T> as = a, bs = b;
        y.node = ctx.tape->add_node([as, bs, rows, ca, cb](Tape<T>& tape, const Tensor<T>& g) {
            const T* gp = g.ptr();
            if (as.node >= 0) {
                Tensor<T> ga(as.shape);
                for (int64_t r = 0; r < rows; ++r)
                    std::memcpy(ga.ptr() + r * ca, gp + r * (ca + cb), sizeof(T) * static_cast<size_t>(ca));
                tape.accumulate(as.node, ga);
            }
            if (bs.node >= 0) {
                Tensor<T> gb(bs.shape);
                for (int64_t r = 0; r < rows; ++r)
                    std::memcpy(gb.ptr() + r * cb, gp + r * (ca + cb) + ca,
                                sizeof(T) * static_cast<size_t>(cb));
                tape.accumulate(bs.node, gb);
            }
        });
    }
    return y;
}

namespace {

enum class BinKind { Add, Sub, Mul };

// Broadcast analysis for binaries: returns 0 (same shape), 1 (a broadcast
// over b's K axis), 2 (b broadcast over a's K axis).
template <class T>
int bin_mode(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape == b.shape) return 0;
    auto bcast = [](const Tensor<T>& small, const Tensor<T>& big) {
        if (big.rank() != 3) return false;
        if (small.rank() == 2)
            return small.dim(0) == big.dim(0) && small.dim(1) == big.dim(2);
        if (small.rank() == 3)
            return small.dim(0) == big.dim(0) && small.dim(1) == 1 && small.dim(2) == big.dim(2);
        return false;
    };
    if (bcast(a, b)) return 1;
    if (bcast(b, a)) return 2;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
}

template <class T>
Tensor<T> binary_op(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b, BinKind kind,
                    const char* name) {
    const int mode = bin_mode(a, b, name);
    const auto& K = kernels::table<T>();
    const Tensor<T>& big = mode == 1 ? b : a;
    const Tensor<T>& small = mode == 1 ? a : b;
    Tensor<T> y(big.shape);
    const size_t total = static_cast<size_t>(big.numel());

    auto apply = [&](const T* pa, const T* pb, T* py, size_t n) {
        switch (kind) {
            case BinKind::Add: K.add(pa, pb, py, n); break;
            case BinKind::Sub: K.sub(pa, pb, py, n); break;
            case BinKind::Mul: K.mul(pa, pb, py, n); break;
        }
    };

    if (mode == 0) {
        apply(a.ptr(), b.ptr(), y.ptr(), total);
    } else {
        const int64_t n = big.dim(0), k = big.dim(1), c = big.dim(2);
        const size_t cs = static_cast<size_t>(c);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < k; ++j) {
                const T* rowa = mode == 1 ? small.ptr() + i * c : a.ptr() + (i * k + j) * c;
                const T* rowb = mode == 1 ? b.ptr() + (i * k + j) * c : small.ptr() + i * c;
                apply(rowa, rowb, y.ptr() + (i * k + j) * c, cs);
            }
    }
    check_finite(ctx, y, name);

    if (ctx.recording()) {
        Tensor<T> as = a, bs = b;
        y.node = ctx.tape->add_node([as, bs, kind, mode](Tape<T>& tape, const Tensor<T>& g) {
            const auto& KK = kernels::table<T>();
            const T* gp = g.ptr();
            // Gradient for one operand: possibly scaled by the other (Mul),
            // negated (Sub's b), and K-reduced for a broadcast operand.
            auto grad_for = [&](const Tensor<T>& self, const Tensor<T>& other, bool is_a) {
                if (self.node < 0) return;
                Tensor<T> contrib(g.shape);
                const size_t total2 = static_cast<size_t>(g.numel());
                if (kind == BinKind::Mul) {
                    const int other_bcast = (is_a && mode == 2) || (!is_a && mode == 1) ? 1 : 0;
                    if (!other_bcast) {
                        KK.mul(gp, other.ptr(), contrib.ptr(), total2);
                    } else {
                        const int64_t n = g.dim(0), k = g.dim(1), c = g.dim(2);
                        for (int64_t i = 0; i < n; ++i)
                            for (int64_t j = 0; j < k; ++j)
                                KK.mul(gp + (i * k + j) * c, other.ptr() + i * c,
                                       contrib.ptr() + (i * k + j) * c, static_cast<size_t>(c));
                    }
                } else {
                    std::memcpy(contrib.ptr(), gp, sizeof(T) * total2);
                    if (kind == BinKind::Sub && !is_a) KK.scale(contrib.ptr(), T(-1), total2);
                }
                const bool self_bcast = (is_a && mode == 1) || (!is_a && mode == 2);
                if (!self_bcast) {
                    tape.accumulate(self.node, contrib);
                } else {
                    const int64_t n = g.dim(0), k = g.dim(1), c = g.dim(2);
                    Tensor<T> red(self.shape);
                    T* rp = red.ptr();
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < k; ++j)
                            KK.acc(rp + i * c, contrib.ptr() + (i * k + j) * c, static_cast<size_t>(c));
                    tape.accumulate(self.node, red);
                }
            };
            grad_for(as, bs, true);
            grad_for(bs, as, false);
        });
    }
    return y;
}

}  // namespace

template <class T>
Tensor<T> add(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(ctx, a, b, BinKind::Add, "add");
}
template <class T>
Tensor<T> subtract(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(ctx, a, b, BinKind::Sub, "subtract");
}
template <class T>
Tensor<T> hadamard(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(ctx, a, b, BinKind::Mul, "hadamard");
}

// ---------------------------------------------------------------------------
// neighbor-axis reductions

template <class T>
Tensor<T> sum_over_neighbors(Ctx<T>& ctx, const Tensor<T>& x) {
    require_nkc(x, "sum_over_neighbors");
    const int64_t n = x.dim(0), k = x.dim(1), c = x.dim(2);
    const auto& K = kernels::table<T>();
    Tensor<T> y({n, c});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j)
            K.acc(y.ptr() + i * c, x.ptr() + (i * k + j) * c, static_cast<size_t>(c));
    check_finite(ctx, y, "sum_over_neighbors");
    if (ctx.recording()) {
        Tensor<T> xs = x;
        y.node = ctx.tape->add_node([xs, n, k, c](Tape<T>& tape, const Tensor<T>& g) {
            if (xs.node < 0) return;
            Tensor<T> gx(xs.shape);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < k; ++j)
                    std::memcpy(gx.ptr() + (i * k + j) * c, g.ptr() + i * c,
                                sizeof(T) * static_cast<size_t>(c));
            tape.accumulate(xs.node, gx);
        });
    }
    return y;
}

template <class T>
Tensor<T> mean_over_neighbors(Ctx<T>& ctx, const Tensor<T>& x) {
    require_nkc(x, "mean_over_neighbors");
    const int64_t k = x.dim(1);
    // Scale each neighbor before the fixed-order sum: this is the exact
    // dataflow of attentive pooling under uniform weights, so the two
    // coincide bit for bit.
    Tensor<T> inv = Tensor<T>::full(x.shape, T(1) / static_cast<T>(k));
    Tensor<T> scaled = hadamard(ctx, x, inv);
    return sum_over_neighbors(ctx, scaled);
}

template <class T>
Tensor<T> max_over_neighbors(Ctx<T>& ctx, const Tensor<T>& x) {
    require_nkc(x, "max_over_neighbors");
    const int64_t n = x.dim(0), k = x.dim(1), c = x.dim(2);
    Tensor<T> y({n, c});
    auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(n * c));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t q = 0; q < c; ++q) {
            T best = x.ptr()[(i * k) * c + q];
            int32_t bj = 0;
            for (int64_t j = 1; j < k; ++j) {
                const T v = x.ptr()[(i * k + j) * c + q];
                if (v > best) {
                    best = v;
                    bj = static_cast<int32_t>(j);
                }
            }
            y.ptr()[i * c + q] = best;
            (*argmax)[static_cast<size_t>(i * c + q)] = bj;
        }
    check_finite(ctx, y, "max_over_neighbors");
    if (ctx.recording()) {
        Tensor<T> xs = x;
        y.node = ctx.tape->add_node([xs, argmax, n, k, c](Tape<T>& tape, const Tensor<T>& g) {
            if (xs.node < 0) return;
            Tensor<T> gx(xs.shape);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t q = 0; q < c; ++q) {
                    const int32_t j = (*argmax)[static_cast<size_t>(i * c + q)];
                    gx.ptr()[(i * k + j) * c + q] = g.ptr()[i * c + q];
                }
            tape.accumulate(xs.node, gx);
        });
    }
    return y;
}

template <class T>
Tensor<T> expand_neighbors(Ctx<T>& ctx, const Tensor<T>& x, int64_t k) {
    if (x.rank() != 2)
        throw ShapeError("expand_neighbors expects [N,C], got " + shape_str(x.shape));
    if (k < 1) throw ShapeError("expand_neighbors: k must be >= 1");
    const int64_t n = x.dim(0), c = x.dim(1);
    Tensor<T> y({n, k, c});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j)
            std::memcpy(y.ptr() + (i * k + j) * c, x.ptr() + i * c, sizeof(T) * static_cast<size_t>(c));
    if (ctx.recording()) {
        Tensor<T> xs = x;
        y.node = ctx.tape->add_node([xs, n, k, c](Tape<T>& tape, const Tensor<T>& g) {
            if (xs.node < 0) return;
            const auto& KK = kernels::table<T>();
            Tensor<T> gx(xs.shape);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < k; ++j)
                    KK.acc(gx.ptr() + i * c, g.ptr() + (i * k + j) * c, static_cast<size_t>(c));
            tape.accumulate(xs.node, gx);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// gathers

template <class T>
Tensor<T> gather_neighbors(Ctx<T>& ctx, const Tensor<T>& features, const NeighborIndex& idx) {
    if (features.rank() != 2)
        throw ShapeError("gather_neighbors expects [M,C] features, got " + shape_str(features.shape));
    const int64_t m = features.dim(0), c = features.dim(1);
    const int64_t n = idx.n, k = idx.k;
    Tensor<T> y({n, k, c});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j) {
            const int32_t s = idx.at(i, j);
            if (s < 0 || s >= m)
                throw ShapeError("gather_neighbors: index " + std::to_string(s) + " out of range [0," +
                                 std::to_string(m) + ") at row " + std::to_string(i));
            std::memcpy(y.ptr() + (i * k + j) * c, features.ptr() + s * c,
                        sizeof(T) * static_cast<size_t>(c));
        }
    if (ctx.recording()) {
        Tensor<T> fs = features;
        auto rows = std::make_shared<std::vector<int32_t>>(idx.idx);
        y.node = ctx.tape->add_node([fs, rows, n, k, c](Tape<T>& tape, const Tensor<T>& g) {
            if (fs.node < 0) return;
            const auto& KK = kernels::table<T>();
            Tensor<T> gf(fs.shape);
            for (int64_t i = 0; i < n * k; ++i)
                KK.acc(gf.ptr() + static_cast<int64_t>((*rows)[static_cast<size_t>(i)]) * c,
                       g.ptr() + i * c, static_cast<size_t>(c));
            tape.accumulate(fs.node, gf);
        });
    }
    return y;
}

template <class T>
Tensor<T> gather_rows(Ctx<T>& ctx, const Tensor<T>& features, const std::vector<int32_t>& rows) {
    if (features.rank() != 2)
        throw ShapeError("gather_rows expects [M,C] features, got " + shape_str(features.shape));
    const int64_t m = features.dim(0), c = features.dim(1);
    const int64_t r = static_cast<int64_t>(rows.size());
    if (r == 0) throw ShapeError("gather_rows: empty row list");
    Tensor<T> y({r, c});
    for (int64_t i = 0; i < r; ++i) {
        const int32_t s = rows[static_cast<size_t>(i)];
        if (s < 0 || s >= m)
            throw ShapeError("gather_rows: index " + std::to_string(s) + " out of range [0," +
                             std::to_string(m) + ")");
        std::memcpy(y.ptr() + i * c, features.ptr() + s * c, sizeof(T) * static_cast<size_t>(c));
    }
    if (ctx.recording()) {
        Tensor<T> fs = features;
        auto saved = std::make_shared<std::vector<int32_t>>(rows);
        y.node = ctx.tape->add_node([fs, saved, r, c](Tape<T>& tape, const Tensor<T>& g) {
            if (fs.node < 0) return;
            const auto& KK = kernels::table<T>();
            Tensor<T> gf(fs.shape);
            for (int64_t i = 0; i < r; ++i)
                KK.acc(gf.ptr() + static_cast<int64_t>((*saved)[static_cast<size_t>(i)]) * c,
                       g.ptr() + i * c, static_cast<size_t>(c));
            tape.accumulate(fs.node, gf);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// dropout

template <class T>
Tensor<T> dropout(Ctx<T>& ctx, const Tensor<T>& x, double p) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: probability must be in [0,1), got " + std::to_string(p));
    if (!ctx.train || p == 0.0) return x;
    if (!ctx.rng) throw Error("dropout: train mode requires ctx.rng");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    const int64_t total = x.numel();
    auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(total));
    Tensor<T> y(x.shape);
    for (int64_t i = 0; i < total; ++i) {
        const bool keep = ctx.rng->next_double() >= p;
        (*mask)[static_cast<size_t>(i)] = keep;
        y.ptr()[i] = keep ? x.ptr()[i] * keep_scale : T(0);
    }
    check_finite(ctx, y, "dropout");
    if (ctx.recording()) {
        Tensor<T> xs = x;
        y.node = ctx.tape->add_node([xs, mask, keep_scale, total](Tape<T>& tape, const Tensor<T>& g) {
            if (xs.node < 0) return;
            Tensor<T> gx(xs.shape);
            for (int64_t i = 0; i < total; ++i)
                gx.ptr()[i] = (*mask)[static_cast<size_t>(i)] ? g.ptr()[i] * keep_scale : T(0);
            tape.accumulate(xs.node, gx);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// cross entropy

template <class T>
Tensor<T> cross_entropy(Ctx<T>& ctx, const Tensor<T>& logits, const std::vector<int32_t>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy expects [N,n_class] logits, got " + shape_str(logits.shape));
    const int64_t n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    Tensor<T> probs({n, c});
    double loss_sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const int32_t lab = labels[static_cast<size_t>(i)];
        if (lab < 0 || lab >= c)
            throw DataError("cross_entropy: label " + std::to_string(lab) + " out of range [0," +
                            std::to_string(c) + ") at row " + std::to_string(i));
        const T* row = logits.ptr() + i * c;
        T m = row[0];
        for (int64_t q = 1; q < c; ++q) m = std::max(m, row[q]);
        T sum = T(0);
        for (int64_t q = 0; q < c; ++q) sum += std::exp(row[q] - m);
        const T lse = m + std::log(sum);
        for (int64_t q = 0; q < c; ++q) probs.ptr()[i * c + q] = std::exp(row[q] - lse);
        loss_sum += static_cast<double>(lse - row[lab]);
    }
    Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(loss_sum / static_cast<double>(n)));
    check_finite(ctx, loss, "cross_entropy");
    if (ctx.recording()) {
        Tensor<T> ls = logits;
        auto labs = std::make_shared<std::vector<int32_t>>(labels);
        loss.node = ctx.tape->add_node([ls, probs, labs, n, c](Tape<T>& tape, const Tensor<T>& g) {
            if (ls.node < 0) return;
            const T go = g.item();
            Tensor<T> gl({n, c});
            const T invn = T(1) / static_cast<T>(n);
            for (int64_t i = 0; i < n; ++i) {
                const int64_t lab = (*labs)[static_cast<size_t>(i)];
                for (int64_t q = 0; q < c; ++q) {
                    T v = probs.ptr()[i * c + q];
                    if (q == lab) v -= T(1);
                    gl.ptr()[i * c + q] = go * v * invn;
                }
            }
            tape.accumulate(ls.node, gl);
        });
    }
    return loss;
}

template <class T>
std::vector<int32_t> predict(const Tensor<T>& logits) {
    if (logits.rank() != 2)
        throw ShapeError("predict expects [N,n_class] logits, got " + shape_str(logits.shape));
    const int64_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int32_t> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const T* row = logits.ptr() + i * c;
        int32_t best = 0;
        for (int64_t q = 1; q < c; ++q)
            if (row[q] > row[best]) best = static_cast<int32_t>(q);
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------

#define DLA_INSTANTIATE_OPS(T)                                                                   \
    template void check_finite<T>(const Ctx<T>&, const Tensor<T>&, const char*);                 \
    template Tensor<T> linear<T>(Ctx<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> relu<T>(Ctx<T>&, const Tensor<T>&);                                       \
    template Tensor<T> batch_norm<T>(Ctx<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                     const Tensor<T>&, std::vector<T>&, std::vector<T>&);        \
    template Tensor<T> softmax_over_neighbors<T>(Ctx<T>&, const Tensor<T>&);                     \
    template Tensor<T> concat_channels<T>(Ctx<T>&, const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> add<T>(Ctx<T>&, const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> subtract<T>(Ctx<T>&, const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> hadamard<T>(Ctx<T>&, const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> sum_over_neighbors<T>(Ctx<T>&, const Tensor<T>&);                         \
    template Tensor<T> mean_over_neighbors<T>(Ctx<T>&, const Tensor<T>&);                        \
    template Tensor<T> max_over_neighbors<T>(Ctx<T>&, const Tensor<T>&);                         \
    template Tensor<T> expand_neighbors<T>(Ctx<T>&, const Tensor<T>&, int64_t);                  \
    template Tensor<T> gather_neighbors<T>(Ctx<T>&, const Tensor<T>&, const NeighborIndex&);     \
    template Tensor<T> gather_rows<T>(Ctx<T>&, const Tensor<T>&, const std::vector<int32_t>&);   \
    template Tensor<T> dropout<T>(Ctx<T>&, const Tensor<T>&, double);                            \
    template Tensor<T> cross_entropy<T>(Ctx<T>&, const Tensor<T>&, const std::vector<int32_t>&); \
    template std::vector<int32_t> predict<T>(const Tensor<T>&);

DLA_INSTANTIATE_OPS(float)
DLA_INSTANTIATE_OPS(double)

}  // namespace dla
