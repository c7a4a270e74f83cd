#include "dla/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>

#include "dla/dataset.hpp"
#include "dla/dla_module.hpp"
#include "dla/geometry.hpp"
#include "dla/gradcheck.hpp"
#include "dla/metrics.hpp"
#include "dla/network.hpp"

namespace dla {

namespace {

using D = double;

struct Harness {
    std::ostream& out;
    int failures = 0;

    void check(const std::string& name, bool ok, const std::string& detail = "") {
        out << (ok ? "[ok]   " : "[FAIL] ") << name;
        if (!ok && !detail.empty()) out << " (" << detail << ")";
        out << "\n";
        failures += !ok;
    }
};

Tensor<D> random_tensor(Shape shape, Prng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<D> t(std::move(shape));
    for (auto& v : *t.data) v = rng.uniform(lo, hi);
    return t;
}

// Gradient checks over the op set, each through a tiny scalarizing head so
// the loss depends on every output element with distinct weights.
void op_gradients(Harness& h, bool inject_fault) {
    Prng rng(42);

    auto weighted_sum = [](Ctx<D>& ctx, const Tensor<D>& y) {
        Tensor<D> w(y.shape);
        for (int64_t i = 0; i < w.numel(); ++i)
            w.ptr()[i] = 0.25 + 0.5 * std::sin(static_cast<double>(i) * 0.7);
        Tensor<D> prod = hadamard(ctx, y, w);
        // Fold everything into one scalar via repeated neighbor sums.
        Tensor<D> flat({1, prod.numel(), 1}, std::vector<D>(prod.data->begin(), prod.data->end()));
        flat.node = prod.node >= 0 ? ctx.tape->add_node([prod](Tape<D>& tape, const Tensor<D>& g) {
            Tensor<D> gx(prod.shape, std::vector<D>(g.data->begin(), g.data->end()));
            tape.accumulate(prod.node, gx);
        }) : -1;
        Tensor<D> s = sum_over_neighbors(ctx, flat);
        return s;
    };

    struct Case {
        const char* name;
        double tol;
        std::function<Tensor<D>(Ctx<D>&, ParamStore<D>&)> fn;
    };

    std::vector<Case> cases;
    cases.push_back({"grad linear", 1e-7, [](Ctx<D>& ctx, ParamStore<D>& ps) {
                         return linear(ctx, ps.find("x")->value, ps.find("w")->value,
                                       ps.find("b")->value);
                     }});
    cases.push_back({"grad relu", 1e-7, [](Ctx<D>& ctx, ParamStore<D>& ps) {
                         return relu(ctx, ps.find("x")->value);
                     }});
    cases.push_back({"grad softmax", 1e-6, [](Ctx<D>& ctx, ParamStore<D>& ps) {
                         Tensor<D> r({2, 4, 3}, std::vector<D>(ps.find("x")->value.data->begin(),
                                                               ps.find("x")->value.data->end()));
                         r.node = ps.find("x")->value.node;
                         return softmax_over_neighbors(ctx, r);
                     }});
    cases.push_back({"grad hadamard+subtract", 1e-7, [](Ctx<D>& ctx, ParamStore<D>& ps) {
                         Tensor<D> d = subtract(ctx, ps.find("x")->value, ps.find("w2")->value);
                         return hadamard(ctx, d, ps.find("x")->value);
                     }});

    for (auto& c : cases) {
        ParamStore<D> ps;
        Prng init(7);
        ps.create("x", {4, 6});
        ps.create("w", {6, 5});
        ps.create("b", {5});
        ps.create("w2", {4, 6});
        for (auto& p : ps.items())
            for (auto& v : *p->value.data) v = init.uniform(-1.0, 1.0) + 0.2;
        auto fn = [&](Tape<D>* tape) {
            Ctx<D> ctx;
            ctx.tape = tape;
            Tensor<D> y = c.fn(ctx, ps);
            return weighted_sum(ctx, y);
        };
        GradCheckOptions opt;
        const auto report = grad_check(fn, ps, opt);
        char buf[96];
        std::snprintf(buf, sizeof buf, "max rel err %.3g over %lld probes", report.max_rel_err,
                      static_cast<long long>(report.probes));
        h.check(c.name, report.max_rel_err < c.tol && report.probes > 0, buf);
    }

    // Cross entropy.
    {
        ParamStore<D> ps;
        Prng init(11);
        ps.create("logits", {5, 8});
        for (auto& v : *ps.find("logits")->value.data) v = init.uniform(-2.0, 2.0);
        std::vector<int32_t> labels = {0, 3, 7, 2, 5};
        auto fn = [&](Tape<D>* tape) {
            Ctx<D> ctx;
            ctx.tape = tape;
            return cross_entropy(ctx, ps.find("logits")->value, labels);
        };
        const auto report = grad_check(fn, ps, {});
        h.check("grad cross_entropy", report.max_rel_err < 1e-6 && report.probes > 0);
    }

    // Full DLA residual on a small cloud.
    {
        Prng geo(3);
        std::vector<Vec3> pos;
        for (int i = 0; i < 12; ++i)
            pos.push_back({geo.uniform(0, 2), geo.uniform(0, 2), geo.uniform(0, 0.4)});
        NeighborIndex idx = knn(pos, pos, 4, true);
        ParamStore<D> ps;
        Prng init(5);
        DlaOptions opt;
        auto residual = make_dla_residual(ps, "blk", 6, 8, opt, init);
        auto feats = ps.create("feats", {12, 6});
        for (auto& v : *feats.value.data) v = init.uniform(-1.0, 1.0);
        // Zero-initialized biases put the self-neighbor rows (all-zero raw
        // position vectors) exactly on the ReLU kink, where central
        // differences disagree with the defined subgradient; jitter every
        // parameter off such points.
        for (auto& p : ps.items()) {
            if (!p->trainable) continue;
            for (auto& v : *p->value.data)
                v += init.uniform(0.02, 0.1) * (init.next_double() < 0.5 ? -1.0 : 1.0);
        }
        std::vector<int32_t> labels(12, 1);
        for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int32_t>(i % 8);
        const bool fault = inject_fault;
        auto fn = [&](Tape<D>* tape) {
            Ctx<D> ctx;
            ctx.tape = tape;
            ctx.train = true;
            ctx.update_stats = false;
            Tensor<D> y = dla_residual(ctx, ps.find("feats")->value, pos, idx, residual);
            if (fault && tape) {
                // Deliberately wrong backward: forward is identity, backward
                // doubles the gradient.
                Tensor<D> z(y.shape, std::vector<D>(y.data->begin(), y.data->end()));
                const int parent = y.node;
                z.node = tape->add_node([parent](Tape<D>& t, const Tensor<D>& g) {
                    Tensor<D> g2(g.shape, std::vector<D>(g.data->begin(), g.data->end()));
                    kernels::table<D>().scale(g2.ptr(), 2.0, static_cast<size_t>(g2.numel()));
                    t.accumulate(parent, g2);
                });
                y = z;
            }
            Ctx<D> lctx = ctx;
            return cross_entropy(lctx, y, labels);
        };
        GradCheckOptions gopt;
        gopt.max_probes_per_tensor = 6;
        const auto report = grad_check(fn, ps, gopt);
        char buf[96];
        std::snprintf(buf, sizeof buf, "max rel err %.3g over %lld probes", report.max_rel_err,
                      static_cast<long long>(report.probes));
        h.check("grad dla_residual", report.max_rel_err < 1e-4 && report.probes > 0, buf);
    }
}

void knn_oracle(Harness& h) {
    Prng rng(77);
    bool ok = true;
    std::string detail;
    for (int trial = 0; trial < 30 && ok; ++trial) {
        const int64_t ns = 40 + static_cast<int64_t>(rng.next_below(1200));
        const int64_t nq = 1 + static_cast<int64_t>(rng.next_below(60));
        const int64_t k = 1 + static_cast<int64_t>(rng.next_below(std::min<int64_t>(ns, 20)));
        std::vector<Vec3> support, query;
        const bool grid_case = trial % 3 == 0;  // exact ties on integer grids
        for (int64_t i = 0; i < ns; ++i)
            support.push_back(grid_case
                                  ? Vec3{static_cast<double>(rng.next_below(8)),
                                         static_cast<double>(rng.next_below(8)),
                                         static_cast<double>(rng.next_below(4))}
                                  : Vec3{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 1)});
        for (int64_t i = 0; i < nq; ++i)
            query.push_back(grid_case ? support[rng.next_below(support.size())]
                                      : Vec3{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 1)});
        NeighborIndex fast = knn(query, support, k, false);
        for (int64_t q = 0; q < nq && ok; ++q) {
            std::vector<std::pair<double, int32_t>> all;
            for (int64_t s = 0; s < ns; ++s) {
                const double dx = query[q][0] - support[s][0], dy = query[q][1] - support[s][1],
                             dz = query[q][2] - support[s][2];
                all.push_back({dx * dx + dy * dy + dz * dz, static_cast<int32_t>(s)});
            }
            std::sort(all.begin(), all.end());
            for (int64_t j = 0; j < k; ++j)
                if (fast.at(q, j) != all[static_cast<size_t>(j)].second) {
                    ok = false;
                    detail = "trial " + std::to_string(trial) + " query " + std::to_string(q);
                    break;
                }
        }
    }
    h.check("knn matches brute force", ok, detail);
}

void metric_oracle(Harness& h) {
    Prng rng(123);
    bool ok = true;
    for (int trial = 0; trial < 40 && ok; ++trial) {
        const int64_t n = 1 + static_cast<int64_t>(rng.next_below(600));
        std::vector<int32_t> truth(static_cast<size_t>(n)), pred(static_cast<size_t>(n));
        for (auto& v : truth) v = static_cast<int32_t>(rng.next_below(8));
        for (auto& v : pred) v = static_cast<int32_t>(rng.next_below(8));
        ConfusionMatrix cm;
        accumulate(cm, truth, pred);
        Metrics m = metrics(cm);
        // Naive recount.
        int64_t correct = 0;
        double iou_sum = 0, acc_sum = 0;
        int iou_n = 0, acc_n = 0;
        for (int c = 0; c < 8; ++c) {
            int64_t tp = 0, in_t = 0, in_p = 0;
            for (int64_t i = 0; i < n; ++i) {
                const bool t = truth[static_cast<size_t>(i)] == c, p = pred[static_cast<size_t>(i)] == c;
                tp += t && p;
                in_t += t;
                in_p += p;
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
        ok = std::abs(m.oa - static_cast<double>(correct) / static_cast<double>(n)) < 1e-12 &&
             std::abs(m.macc - acc_sum / acc_n) < 1e-12 && std::abs(m.miou - iou_sum / iou_n) < 1e-12;
    }
    h.check("metrics match naive recount", ok);
}

void attention_invariants(Harness& h) {
    Prng rng(9);
    ParamStore<D> ps;
    DlaOptions opt;
    opt.pe_bn = false;
    opt.sa_bn = false;
    Prng init(13);
    const int64_t d = 6, n = 10, k = 5;
    auto pe = make_position_encoding(ps, "pe", d, opt, init);
    auto sa = make_self_attention(ps, "sa", d, opt, init);
    auto ap = make_attentive_pooling(ps, "ap", d, opt, init);

    std::vector<Vec3> pos;
    for (int64_t i = 0; i < n; ++i)
        pos.push_back({rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)});
    NeighborIndex idx = knn(pos, pos, k, true);
    Tensor<D> f = random_tensor({n, d}, rng);

    Ctx<D> ctx;
    Tensor<D> c = position_encoding(ctx, pos, idx, pe);
    Tensor<D> attn = self_attention(ctx, f, c, idx, sa);
    Tensor<D> pooled = attentive_pooling(ctx, attn, c, ap);

    // Neighbor-order permutation.
    bool ok = true;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        NeighborIndex perm = idx;
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = k - 1; j > 0; --j) {
                const int64_t r = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(j + 1)));
                std::swap(perm.idx[static_cast<size_t>(i * k + j)],
                          perm.idx[static_cast<size_t>(i * k + r)]);
            }
        }
        Tensor<D> c2 = position_encoding(ctx, pos, perm, pe);
        Tensor<D> attn2 = self_attention(ctx, f, c2, perm, sa);
        Tensor<D> pooled2 = attentive_pooling(ctx, attn2, c2, ap);
        for (int64_t i = 0; i < pooled.numel(); ++i)
            worst = std::max(worst, std::abs(pooled.ptr()[i] - pooled2.ptr()[i]));
        for (int64_t i = 0; i < attn.numel(); ++i)
            worst = std::max(worst, std::abs(attn.ptr()[i] - attn2.ptr()[i]));
    }
    ok = worst < 1e-12;
    char buf[64];
    std::snprintf(buf, sizeof buf, "max |delta| %.3g", worst);
    h.check("neighbor-permutation invariance", ok, buf);

    // Softmax weights: nonnegative, sum to 1 per channel.
    Tensor<D> logits = random_tensor({n, k, d}, rng, -4, 4);
    Tensor<D> w = softmax_over_neighbors(ctx, logits);
    double sum_err = 0.0;
    bool nonneg = true;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t q = 0; q < d; ++q) {
            double s = 0;
            for (int64_t j = 0; j < k; ++j) {
                const double v = w.ptr()[(i * k + j) * d + q];
                nonneg = nonneg && v >= 0.0;
                s += v;
            }
            sum_err = std::max(sum_err, std::abs(s - 1.0));
        }
    h.check("attention weights normalized", nonneg && sum_err < 1e-6);

    // Zero-score attentive pooling equals avg pooling bitwise.
    for (auto& v : *ps.find("ap.score.w")->value.data) v = 0.0;
    for (auto& v : *ps.find("ap.score.b")->value.data) v = 0.0;
    Tensor<D> att_pool = attentive_pooling(ctx, attn, c, ap);
    AttentivePoolingParams<D> avg_params;
    avg_params.mode = ApMode::avg;
    avg_params.d = d;
    Tensor<D> avg_pool = attentive_pooling(ctx, attn, c, avg_params);
    bool bitwise = att_pool.numel() == avg_pool.numel();
    for (int64_t i = 0; bitwise && i < att_pool.numel(); ++i)
        bitwise = att_pool.ptr()[i] == avg_pool.ptr()[i];
    h.check("zero-score attentive pooling == avg pooling (bitwise)", bitwise);
}

void format_roundtrip(Harness& h) {
    Prng rng(31);
    PointCloud cloud;
    for (int i = 0; i < 500; ++i) {
        cloud.pos.push_back({rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-5, 5)});
        cloud.color.push_back({static_cast<uint8_t>(rng.next_below(256)),
                               static_cast<uint8_t>(rng.next_below(256)),
                               static_cast<uint8_t>(rng.next_below(256))});
        cloud.label.push_back(static_cast<uint8_t>(rng.next_below(8)));
    }
    const std::string path =
        (std::filesystem::temp_directory_path() / "dla_selftest_roundtrip.fpc").string();
    save_cloud(cloud, path, CloudFormat::fpc_bin);
    PointCloud back = load_cloud(path, CloudFormat::fpc_bin);
    std::filesystem::remove(path);
    bool ok = back.size() == cloud.size() && back.color == cloud.color && back.label == cloud.label;
    for (int64_t i = 0; ok && i < cloud.size(); ++i)
        for (int a = 0; a < 3; ++a)
            ok = ok && back.pos[static_cast<size_t>(i)][static_cast<size_t>(a)] ==
                           cloud.pos[static_cast<size_t>(i)][static_cast<size_t>(a)];
    h.check("fpc_bin round-trip bitwise", ok);
}

}  // namespace

int run_selftest(const SelftestOptions& opt, std::ostream& out) {
    Harness h{out};
    op_gradients(h, opt.inject_gradient_fault);
    knn_oracle(h);
    metric_oracle(h);
    attention_invariants(h);
    format_roundtrip(h);
    out << (h.failures == 0 ? "selftest: all checks passed\n"
                            : "selftest: " + std::to_string(h.failures) + " check(s) FAILED\n");
    return h.failures;
}

}  // namespace dla
