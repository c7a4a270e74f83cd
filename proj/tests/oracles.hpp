#pragma once

// Test-only oracles. Everything here is written as straight-line loops over
// plain doubles, independent of the tensor/tape/kernel machinery it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dla/dla_module.hpp"
#include "dla/params.hpp"
#include "dla/pointcloud.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Brute-force exact KNN with the same tie rule as the library contract.

inline std::vector<int32_t> brute_knn_row(const dla::Vec3& q,
                                          const std::vector<dla::Vec3>& support, int64_t k,
                                          int32_t self_idx) {
    struct Cand {
        double d2;
        int32_t idx;
    };
    std::vector<Cand> all;
    all.reserve(support.size());
    for (size_t s = 0; s < support.size(); ++s) {
        const double dx = q[0] - support[s][0];
        const double dy = q[1] - support[s][1];
        const double dz = q[2] - support[s][2];
        all.push_back({dx * dx + dy * dy + dz * dz, static_cast<int32_t>(s)});
    }
    std::sort(all.begin(), all.end(), [&](const Cand& a, const Cand& b) {
        if (a.d2 != b.d2) return a.d2 < b.d2;
        const bool as = a.idx == self_idx, bs = b.idx == self_idx;
        if (as != bs) return as;
        return a.idx < b.idx;
    });
    std::vector<int32_t> out(static_cast<size_t>(k));
    for (int64_t j = 0; j < k; ++j) out[static_cast<size_t>(j)] = all[static_cast<size_t>(j)].idx;
    return out;
}

// ---------------------------------------------------------------------------
// Dense matrices copied out of a ParamStore for the desk evaluation.

struct Mat {
    int64_t in = 0, out = 0;
    std::vector<double> v;  // row-major [in][out]
    double at(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * out + j)]; }
};

struct Vecd {
    std::vector<double> v;
    double operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }
};

template <class T>
Mat mat_of(const dla::ParamStore<T>& store, const std::string& name) {
    const auto* p = store.find(name);
    if (!p) throw dla::Error("oracle: missing parameter " + name);
    Mat m;
    m.in = p->value.dim(0);
    m.out = p->value.dim(1);
    m.v.assign(p->value.ptr(), p->value.ptr() + p->value.numel());
    return m;
}

template <class T>
Vecd vec_of(const dla::ParamStore<T>& store, const std::string& name) {
    const auto* p = store.find(name);
    if (!p) throw dla::Error("oracle: missing parameter " + name);
    return Vecd{std::vector<double>(p->value.ptr(), p->value.ptr() + p->value.numel())};
}

inline std::vector<double> apply_linear(const std::vector<double>& x, const Mat& w, const Vecd& b,
                                        bool bias = true) {
    std::vector<double> y(static_cast<size_t>(w.out), 0.0);
    for (int64_t j = 0; j < w.out; ++j) {
        double acc = bias ? b[j] : 0.0;
        for (int64_t i = 0; i < w.in; ++i) acc += x[static_cast<size_t>(i)] * w.at(i, j);
        y[static_cast<size_t>(j)] = acc;
    }
    return y;
}

inline void relu_inplace(std::vector<double>& x) {
    for (auto& v : x) v = v > 0 ? v : 0;
}

// Softmax over the k axis of values[k][c], independently per channel c.
inline void softmax_over_k(std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return;
    const size_t c = rows[0].size();
    for (size_t q = 0; q < c; ++q) {
        double m = rows[0][q];
        for (const auto& r : rows) m = std::max(m, r[q]);
        double sum = 0;
        for (auto& r : rows) {
            r[q] = std::exp(r[q] - m);
            sum += r[q];
        }
        for (auto& r : rows) r[q] /= sum;
    }
}

// ---------------------------------------------------------------------------
// Straight-line evaluation of the position encoding, self-attention and
// attentive pooling chain, plus the residual wrapper, for one point set.

struct DeskDla {
    // pe
    Mat pe_w1, pe_w2;
    Vecd pe_b1, pe_b2;
    // sa
    Mat alpha_w, beta_w, gamma_w, eta1_w, eta2_w;
    Vecd alpha_b, beta_b, gamma_b, eta1_b, eta2_b;
    // ap
    Mat score_w;
    Vecd score_b;
    bool has_score = false;
    // residual
    Mat in_w, post_w, skip_w;
    Vecd in_b, post_b;
    bool has_residual = false;
    bool skip_identity = false;

    dla::DlaOptions opt;

    template <class T>
    static DeskDla from_store(const dla::ParamStore<T>& store, const std::string& prefix,
                              const dla::DlaOptions& options, bool residual) {
        DeskDla d;
        d.opt = options;
        d.pe_w1 = mat_of(store, prefix + ".pe.l1.w");
        d.pe_b1 = vec_of(store, prefix + ".pe.l1.b");
        d.pe_w2 = mat_of(store, prefix + ".pe.l2.w");
        d.pe_b2 = vec_of(store, prefix + ".pe.l2.b");
        d.alpha_w = mat_of(store, prefix + ".sa.alpha.w");
        d.alpha_b = vec_of(store, prefix + ".sa.alpha.b");
        d.beta_w = mat_of(store, prefix + ".sa.beta.w");
        d.beta_b = vec_of(store, prefix + ".sa.beta.b");
        d.gamma_w = mat_of(store, prefix + ".sa.gamma.w");
        d.gamma_b = vec_of(store, prefix + ".sa.gamma.b");
        d.eta1_w = mat_of(store, prefix + ".sa.eta1.w");
        d.eta1_b = vec_of(store, prefix + ".sa.eta1.b");
        d.eta2_w = mat_of(store, prefix + ".sa.eta2.w");
        d.eta2_b = vec_of(store, prefix + ".sa.eta2.b");
        if (options.ap_mode == dla::ApMode::attentive || options.ap_mode == dla::ApMode::no_pe) {
            d.score_w = mat_of(store, prefix + ".ap.score.w");
            d.score_b = vec_of(store, prefix + ".ap.score.b");
            d.has_score = true;
        }
        if (residual) {
            d.has_residual = true;
            d.in_w = mat_of(store, prefix + ".in_proj.w");
            d.in_b = vec_of(store, prefix + ".in_proj.b");
            d.post_w = mat_of(store, prefix + ".post.w");
            d.post_b = vec_of(store, prefix + ".post.b");
            d.skip_identity = store.find(prefix + ".skip.w") == nullptr;
            if (!d.skip_identity) d.skip_w = mat_of(store, prefix + ".skip.w");
        }
        return d;
    }

    std::vector<double> raw_vector(const dla::Vec3& pi, const dla::Vec3& pk) const {
        const double rel[3] = {pi[0] - pk[0], pi[1] - pk[1], pi[2] - pk[2]};
        const double dist = std::sqrt(rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]);
        std::vector<double> raw;
        using dla::PeVariant;
        switch (opt.pe_variant) {
            case PeVariant::neighbor_only: raw = {pk[0], pk[1], pk[2]}; break;
            case PeVariant::relative_only: raw = {rel[0], rel[1], rel[2]}; break;
            case PeVariant::relative_dist: raw = {rel[0], rel[1], rel[2], dist}; break;
            case PeVariant::center_relative_dist:
                raw = {pi[0], pi[1], pi[2], rel[0], rel[1], rel[2], dist};
                break;
            case PeVariant::neighbor_relative_dist:
                raw = {pk[0], pk[1], pk[2], rel[0], rel[1], rel[2], dist};
                break;
            case PeVariant::all:
                raw = {pi[0], pi[1], pi[2], pk[0], pk[1], pk[2], rel[0], rel[1], rel[2], dist};
                break;
        }
        return raw;
    }

    std::vector<double> encode(const dla::Vec3& pi, const dla::Vec3& pk) const {
        std::vector<double> h = apply_linear(raw_vector(pi, pk), pe_w1, pe_b1);
        relu_inplace(h);
        return apply_linear(h, pe_w2, pe_b2);
    }

    // Output rows: 1 x d (sum aggregate) or K x d (per-neighbor).
    std::vector<std::vector<double>> attention(const std::vector<double>& f_center,
                                               const std::vector<std::vector<double>>& f_neighbors,
                                               const std::vector<std::vector<double>>& c) const {
        using dla::SaPePlacement;
        const size_t k = f_neighbors.size();
        const size_t d = f_center.size();
        const std::vector<double> af = apply_linear(f_center, alpha_w, alpha_b);
        std::vector<std::vector<double>> logits(k), values(k);
        for (size_t j = 0; j < k; ++j) {
            const std::vector<double> bf = apply_linear(f_neighbors[j], beta_w, beta_b);
            std::vector<double> rel(d);
            for (size_t q = 0; q < d; ++q) {
                rel[q] = af[q] - bf[q];
                if (opt.sa_pe == SaPePlacement::both || opt.sa_pe == SaPePlacement::mapping_only)
                    rel[q] += c[j][q];
            }
            std::vector<double> h = apply_linear(rel, eta1_w, eta1_b);
            relu_inplace(h);
            logits[j] = apply_linear(h, eta2_w, eta2_b);
            values[j] = apply_linear(f_neighbors[j], gamma_w, gamma_b);
            if (opt.sa_pe == SaPePlacement::both || opt.sa_pe == SaPePlacement::values_only)
                for (size_t q = 0; q < d; ++q) values[j][q] += c[j][q];
        }
        softmax_over_k(logits);
        if (opt.sa_aggregate == dla::SaAggregate::sum) {
            std::vector<double> out(d, 0.0);
            for (size_t j = 0; j < k; ++j)
                for (size_t q = 0; q < d; ++q) out[q] += logits[j][q] * values[j][q];
            return {out};
        }
        std::vector<std::vector<double>> out(k, std::vector<double>(d));
        for (size_t j = 0; j < k; ++j)
            for (size_t q = 0; q < d; ++q) out[j][q] = logits[j][q] * values[j][q];
        return out;
    }

    std::vector<double> pool(const std::vector<std::vector<double>>& attn,
                             const std::vector<std::vector<double>>& c) const {
        using dla::ApMode;
        const size_t k = c.size();
        if (opt.ap_mode == ApMode::passthrough) return attn[0];
        std::vector<std::vector<double>> hat(k);
        for (size_t j = 0; j < k; ++j) {
            const std::vector<double>& f = attn.size() == 1 ? attn[0] : attn[j];
            hat[j] = f;
            if (opt.ap_mode != ApMode::no_pe)
                hat[j].insert(hat[j].end(), c[j].begin(), c[j].end());
        }
        const size_t w = hat[0].size();
        if (opt.ap_mode == ApMode::max) {
            std::vector<double> out = hat[0];
            for (size_t j = 1; j < k; ++j)
                for (size_t q = 0; q < w; ++q) out[q] = std::max(out[q], hat[j][q]);
            return out;
        }
        if (opt.ap_mode == ApMode::avg) {
            std::vector<double> out(w, 0.0);
            for (size_t j = 0; j < k; ++j)
                for (size_t q = 0; q < w; ++q) out[q] += hat[j][q] / static_cast<double>(k);
            return out;
        }
        std::vector<std::vector<double>> scores(k);
        for (size_t j = 0; j < k; ++j) scores[j] = apply_linear(hat[j], score_w, score_b);
        softmax_over_k(scores);
        std::vector<double> out(w, 0.0);
        for (size_t j = 0; j < k; ++j)
            for (size_t q = 0; q < w; ++q) out[q] += scores[j][q] * hat[j][q];
        return out;
    }

    // Eq. 2 -> 3 -> 4 -> 5 for every point; BN must be disabled in the
    // options this oracle mirrors.
    std::vector<std::vector<double>> forward_blocks(const std::vector<dla::Vec3>& pos,
                                                    const dla::NeighborIndex& idx,
                                                    const std::vector<std::vector<double>>& feats) const {
        std::vector<std::vector<double>> out;
        for (int64_t i = 0; i < idx.n; ++i) {
            std::vector<std::vector<double>> c, fn;
            for (int64_t j = 0; j < idx.k; ++j) {
                const int32_t nb = idx.at(i, j);
                c.push_back(encode(pos[static_cast<size_t>(i)], pos[static_cast<size_t>(nb)]));
                fn.push_back(feats[static_cast<size_t>(nb)]);
            }
            out.push_back(pool(attention(feats[static_cast<size_t>(i)], fn, c), c));
        }
        return out;
    }

    // Residual wrapper around forward_blocks.
    std::vector<std::vector<double>> forward_residual(const std::vector<dla::Vec3>& pos,
                                                      const dla::NeighborIndex& idx,
                                                      const std::vector<std::vector<double>>& feats) const {
        std::vector<std::vector<double>> projected;
        for (const auto& f : feats) projected.push_back(apply_linear(f, in_w, in_b));
        std::vector<std::vector<double>> pooled = forward_blocks(pos, idx, projected);
        std::vector<std::vector<double>> out;
        for (size_t i = 0; i < pooled.size(); ++i) {
            std::vector<double> main = apply_linear(pooled[i], post_w, post_b);
            for (size_t q = 0; q < main.size(); ++q) {
                double skip = skip_identity ? feats[i][q] : 0.0;
                if (!skip_identity)
                    for (int64_t r = 0; r < skip_w.in; ++r)
                        skip += feats[i][static_cast<size_t>(r)] * skip_w.at(r, static_cast<int64_t>(q));
                main[q] += skip;
                main[q] = main[q] > 0 ? main[q] : 0;
            }
            out.push_back(main);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Hand-unrolled Adam recurrence.

struct AdamOracle {
    double m = 0, v = 0;
    double step(double p, double g, double lr, double b1, double b2, double eps, int64_t t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * (g * g);
        const double mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
        const double vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
        return p - lr * (mhat / (std::sqrt(vhat) + eps));
    }
};

// ---------------------------------------------------------------------------
// Naive per-point metric recomputation.

struct NaiveMetrics {
    double oa, macc, miou;
};

inline NaiveMetrics naive_metrics(const std::vector<int32_t>& truth,
                                  const std::vector<int32_t>& pred, int n_class) {
    int64_t correct = 0;
    double acc_sum = 0, iou_sum = 0;
    int acc_n = 0, iou_n = 0;
    for (int c = 0; c < n_class; ++c) {
        int64_t tp = 0, in_t = 0, in_p = 0;
        for (size_t i = 0; i < truth.size(); ++i) {
            tp += truth[i] == c && pred[i] == c;
            in_t += truth[i] == c;
            in_p += pred[i] == c;
        }
        correct += tp;
        if (in_t > 0) {
            acc_sum += static_cast<double>(tp) / static_cast<double>(in_t);
            ++acc_n;
        }
        if (in_t + in_p > 0) {
            iou_sum += static_cast<double>(tp) / static_cast<double>(in_t + in_p - tp);
            ++iou_n;
        }
    }
    return {static_cast<double>(correct) / static_cast<double>(truth.size()),
            acc_n ? acc_sum / acc_n : 0.0, iou_n ? iou_sum / iou_n : 0.0};
}

}  // namespace oracle
