#include "dla/dla_module.hpp"

#include <cmath>

namespace dla {

int pe_raw_width(PeVariant v) {
    switch (v) {
        case PeVariant::neighbor_only: return 3;
        case PeVariant::relative_only: return 3;
        case PeVariant::relative_dist: return 4;
        case PeVariant::center_relative_dist: return 7;
        case PeVariant::neighbor_relative_dist: return 7;
        case PeVariant::all: return 10;
    }
    throw Error("unreachable pe variant");
}

const char* to_string(PeVariant v) {
    switch (v) {
        case PeVariant::neighbor_only: return "neighbor_only";
        case PeVariant::relative_only: return "relative_only";
        case PeVariant::relative_dist: return "relative_dist";
        case PeVariant::center_relative_dist: return "center_relative_dist";
        case PeVariant::neighbor_relative_dist: return "neighbor_relative_dist";
        case PeVariant::all: return "all";
    }
    return "?";
}
const char* to_string(SaPePlacement v) {
    switch (v) {
        case SaPePlacement::both: return "both";
        case SaPePlacement::mapping_only: return "mapping_only";
        case SaPePlacement::values_only: return "values_only";
        case SaPePlacement::none: return "none";
    }
    return "?";
}
const char* to_string(ApMode v) {
    switch (v) {
        case ApMode::attentive: return "attentive";
        case ApMode::max: return "max";
        case ApMode::avg: return "avg";
        case ApMode::passthrough: return "passthrough";
        case ApMode::no_pe: return "no_pe";
    }
    return "?";
}
const char* to_string(SaAggregate v) {
    return v == SaAggregate::sum ? "sum" : "per_neighbor";
}

namespace {

[[noreturn]] void bad_enum(const char* what, const std::string& got, const char* allowed) {
    throw ConfigError(std::string("invalid ") + what + " '" + got + "'; allowed: " + allowed);
}

}  // namespace

PeVariant pe_variant_from_string(const std::string& s) {
    for (PeVariant v : {PeVariant::neighbor_only, PeVariant::relative_only, PeVariant::relative_dist,
                        PeVariant::center_relative_dist, PeVariant::neighbor_relative_dist,
                        PeVariant::all})
        if (s == to_string(v)) return v;
    bad_enum("pe.variant", s,
             "neighbor_only, relative_only, relative_dist, center_relative_dist, "
             "neighbor_relative_dist, all");
}

SaPePlacement sa_pe_placement_from_string(const std::string& s) {
    for (SaPePlacement v : {SaPePlacement::both, SaPePlacement::mapping_only,
                            SaPePlacement::values_only, SaPePlacement::none})
        if (s == to_string(v)) return v;
    bad_enum("sa.pe_placement", s, "both, mapping_only, values_only, none");
}

ApMode ap_mode_from_string(const std::string& s) {
    for (ApMode v : {ApMode::attentive, ApMode::max, ApMode::avg, ApMode::passthrough, ApMode::no_pe})
        if (s == to_string(v)) return v;
    bad_enum("ap.mode", s, "attentive, max, avg, passthrough, no_pe");
}

SaAggregate sa_aggregate_from_string(const std::string& s) {
    for (SaAggregate v : {SaAggregate::sum, SaAggregate::per_neighbor})
        if (s == to_string(v)) return v;
    bad_enum("sa.aggregate", s, "sum, per_neighbor");
}

int64_t pooled_width(ApMode mode, int64_t d) {
    switch (mode) {
        case ApMode::attentive:
        case ApMode::max:
        case ApMode::avg: return 2 * d;
        case ApMode::no_pe:
        case ApMode::passthrough: return d;
    }
    throw Error("unreachable ap mode");
}

// ---------------------------------------------------------------------------
// builders

template <class T>
PositionEncodingParams<T> make_position_encoding(ParamStore<T>& store, const std::string& prefix,
                                                 int64_t d, const DlaOptions& opt, Prng& rng) {
    PositionEncodingParams<T> p;
    p.variant = opt.pe_variant;
    p.bn_enabled = opt.pe_bn;
    p.d = d;
    p.l1 = make_linear(store, prefix + ".l1", pe_raw_width(opt.pe_variant), d, true, rng);
    p.l2 = make_linear(store, prefix + ".l2", d, d, true, rng);
    if (p.bn_enabled) p.bn = make_batch_norm(store, prefix + ".bn", d);
    return p;
}

template <class T>
SelfAttentionParams<T> make_self_attention(ParamStore<T>& store, const std::string& prefix,
                                           int64_t d, const DlaOptions& opt, Prng& rng) {
    SelfAttentionParams<T> p;
    p.placement = opt.sa_pe;
    p.bn_enabled = opt.sa_bn;
    p.aggregate = opt.sa_aggregate;
    p.d = d;
    p.alpha = make_linear(store, prefix + ".alpha", d, d, true, rng);
    p.beta = make_linear(store, prefix + ".beta", d, d, true, rng);
    p.gamma = make_linear(store, prefix + ".gamma", d, d, true, rng);
    p.eta1 = make_linear(store, prefix + ".eta1", d, d, true, rng);
    p.eta2 = make_linear(store, prefix + ".eta2", d, d, true, rng);
    if (p.bn_enabled) p.bn = make_batch_norm(store, prefix + ".bn", d);
    return p;
}

template <class T>
AttentivePoolingParams<T> make_attentive_pooling(ParamStore<T>& store, const std::string& prefix,
                                                 int64_t d, const DlaOptions& opt, Prng& rng) {
    AttentivePoolingParams<T> p;
    p.mode = opt.ap_mode;
    p.d = d;
    if (p.mode == ApMode::attentive || p.mode == ApMode::no_pe) {
        const int64_t w = p.mode == ApMode::attentive ? 2 * d : d;
        p.score = make_linear(store, prefix + ".score", w, w, true, rng);
    }
    return p;
}

template <class T>
DlaResidualParams<T> make_dla_residual(ParamStore<T>& store, const std::string& prefix,
                                       int64_t cin, int64_t dout, const DlaOptions& opt, Prng& rng) {
    if (dout % 2 != 0)
        throw ConfigError("dla residual output width must be even, got " + std::to_string(dout));
    if (opt.ap_mode == ApMode::passthrough && opt.sa_aggregate == SaAggregate::per_neighbor)
        throw ConfigError("ap.mode=passthrough requires sa.aggregate=sum (per-neighbor output "
                          "cannot skip pooling)");
    DlaResidualParams<T> p;
    p.cin = cin;
    p.dout = dout;
    p.d = dout / 2;
    p.in_proj = make_linear(store, prefix + ".in_proj", cin, p.d, true, rng);
    p.pe = make_position_encoding(store, prefix + ".pe", p.d, opt, rng);
    p.sa = make_self_attention(store, prefix + ".sa", p.d, opt, rng);
    p.ap = make_attentive_pooling(store, prefix + ".ap", p.d, opt, rng);
    p.post = make_linear(store, prefix + ".post", pooled_width(opt.ap_mode, p.d), dout, true, rng);
    p.skip_identity = cin == dout;
    if (!p.skip_identity) p.skip = make_linear(store, prefix + ".skip", cin, dout, false, rng);
    return p;
}

// ---------------------------------------------------------------------------
// forward blocks

template <class T>
Tensor<T> position_encoding(Ctx<T>& ctx, const std::vector<Vec3>& positions,
                            const NeighborIndex& idx, const PositionEncodingParams<T>& params) {
    const int64_t n = idx.n, k = idx.k;
    const int64_t w = pe_raw_width(params.variant);
    if (params.l1.w->value.dim(0) != w)
        throw ShapeError(std::string("position_encoding: variant ") + to_string(params.variant) +
                         " needs raw width " + std::to_string(w) + " but l1 expects " +
                         std::to_string(params.l1.w->value.dim(0)));

    if (n != static_cast<int64_t>(positions.size()))
        throw ShapeError("position_encoding: " + std::to_string(positions.size()) +
                         " positions for a neighbor table of " + std::to_string(n) + " rows");
    Tensor<T> raw({n, k, w});
    T* rp = raw.ptr();
    for (int64_t i = 0; i < n; ++i) {
        const Vec3& pi = positions[static_cast<size_t>(i)];
        for (int64_t j = 0; j < k; ++j) {
            const int32_t nb = idx.at(i, j);
            if (nb < 0 || nb >= n)
                throw ShapeError("position_encoding: neighbor index out of range at row " +
                                 std::to_string(i));
            const Vec3& pk = positions[static_cast<size_t>(nb)];
            const double rel[3] = {pi[0] - pk[0], pi[1] - pk[1], pi[2] - pk[2]};
            const double dist = std::sqrt(rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]);
            T* out = rp + (i * k + j) * w;
            switch (params.variant) {
                case PeVariant::neighbor_only:
                    for (int a = 0; a < 3; ++a) out[a] = static_cast<T>(pk[static_cast<size_t>(a)]);
                    break;
                case PeVariant::relative_only:
                    for (int a = 0; a < 3; ++a) out[a] = static_cast<T>(rel[a]);
                    break;
                case PeVariant::relative_dist:
                    for (int a = 0; a < 3; ++a) out[a] = static_cast<T>(rel[a]);
                    out[3] = static_cast<T>(dist);
                    break;
                case PeVariant::center_relative_dist:
                    for (int a = 0; a < 3; ++a) out[a] = static_cast<T>(pi[static_cast<size_t>(a)]);
                    for (int a = 0; a < 3; ++a) out[3 + a] = static_cast<T>(rel[a]);
                    out[6] = static_cast<T>(dist);
                    break;
                case PeVariant::neighbor_relative_dist:
                    for (int a = 0; a < 3; ++a) out[a] = static_cast<T>(pk[static_cast<size_t>(a)]);
                    for (int a = 0; a < 3; ++a) out[3 + a] = static_cast<T>(rel[a]);
                    out[6] = static_cast<T>(dist);
                    break;
                case PeVariant::all:
                    for (int a = 0; a < 3; ++a) out[a] = static_cast<T>(pi[static_cast<size_t>(a)]);
                    for (int a = 0; a < 3; ++a) out[3 + a] = static_cast<T>(pk[static_cast<size_t>(a)]);
                    for (int a = 0; a < 3; ++a) out[6 + a] = static_cast<T>(rel[a]);
                    out[9] = static_cast<T>(dist);
                    break;
            }
        }
    }

    Tensor<T> h = linear(ctx, raw, params.l1.w->value, params.l1.b->value);
    h = relu(ctx, h);
    h = linear(ctx, h, params.l2.w->value, params.l2.b->value);
    if (params.bn_enabled) {
        h = batch_norm(ctx, h, params.bn.scale->value, params.bn.shift->value,
                       *params.bn.running_mean->value.data, *params.bn.running_var->value.data);
        h = relu(ctx, h);
    }
    return h;
}

template <class T>
Tensor<T> self_attention(Ctx<T>& ctx, const Tensor<T>& f, const Tensor<T>& c,
                         const NeighborIndex& idx, const SelfAttentionParams<T>& params) {
    if (f.rank() != 2 || f.dim(1) != params.d)
        throw ShapeError("self_attention: features must be [N," + std::to_string(params.d) +
                         "], got " + shape_str(f.shape));
    if (c.rank() != 3 || c.dim(2) != params.d)
        throw ShapeError("self_attention: encoding must be [N,K," + std::to_string(params.d) +
                         "], got " + shape_str(c.shape));
    if (idx.k < 1) throw ShapeError("self_attention: K must be >= 1");

    Tensor<T> center = linear(ctx, f, params.alpha.w->value, params.alpha.b->value);  // [N,d]
    Tensor<T> gathered = gather_neighbors(ctx, f, idx);                               // [N,K,d]
    Tensor<T> keys = linear(ctx, gathered, params.beta.w->value, params.beta.b->value);

    Tensor<T> rel = subtract(ctx, center, keys);  // alpha(f_i) broadcast over k
    if (params.placement == SaPePlacement::both || params.placement == SaPePlacement::mapping_only)
        rel = add(ctx, rel, c);
    Tensor<T> logits = linear(ctx, rel, params.eta1.w->value, params.eta1.b->value);
    logits = relu(ctx, logits);
    logits = linear(ctx, logits, params.eta2.w->value, params.eta2.b->value);
    Tensor<T> weights = softmax_over_neighbors(ctx, logits);

    Tensor<T> values = linear(ctx, gathered, params.gamma.w->value, params.gamma.b->value);
    if (params.placement == SaPePlacement::both || params.placement == SaPePlacement::values_only)
        values = add(ctx, values, c);

    Tensor<T> weighted = hadamard(ctx, weights, values);  // [N,K,d]
    Tensor<T> out = params.aggregate == SaAggregate::sum ? sum_over_neighbors(ctx, weighted)
                                                         : weighted;
    if (params.bn_enabled) {
        out = batch_norm(ctx, out, params.bn.scale->value, params.bn.shift->value,
                         *params.bn.running_mean->value.data, *params.bn.running_var->value.data);
        out = relu(ctx, out);
    }
    return out;
}

template <class T>
Tensor<T> attentive_pooling(Ctx<T>& ctx, const Tensor<T>& f, const Tensor<T>& c,
                            const AttentivePoolingParams<T>& params) {
    if (params.mode == ApMode::passthrough) {
        if (f.rank() != 2)
            throw ShapeError("attentive_pooling: passthrough needs a pooled [N,d] input, got " +
                             shape_str(f.shape));
        return f;
    }
    if (c.rank() != 3)
        throw ShapeError("attentive_pooling: encoding must be [N,K,d], got " + shape_str(c.shape));
    const int64_t k = c.dim(1);

    // F broadcast across the neighbor axis when the attention block already
    // aggregated; kept per neighbor otherwise.
    Tensor<T> fk;
    if (f.rank() == 2)
        fk = expand_neighbors(ctx, f, k);
    else if (f.rank() == 3 && f.dim(1) == k)
        fk = f;
    else
        throw ShapeError("attentive_pooling: feature shape " + shape_str(f.shape) +
                         " does not match encoding " + shape_str(c.shape));

    Tensor<T> hat = params.mode == ApMode::no_pe ? fk : concat_channels(ctx, fk, c);

    switch (params.mode) {
        case ApMode::max: return max_over_neighbors(ctx, hat);
        case ApMode::avg: return mean_over_neighbors(ctx, hat);
        case ApMode::attentive:
        case ApMode::no_pe: {
            Tensor<T> score_logits = linear(ctx, hat, params.score.w->value, params.score.b->value);
            Tensor<T> scores = softmax_over_neighbors(ctx, score_logits);
            Tensor<T> weighted = hadamard(ctx, scores, hat);
            return sum_over_neighbors(ctx, weighted);
        }
        case ApMode::passthrough: break;  // handled above
    }
    throw Error("unreachable ap mode");
}

template <class T>
Tensor<T> dla_residual(Ctx<T>& ctx, const Tensor<T>& features, const std::vector<Vec3>& positions,
                       const NeighborIndex& idx, const DlaResidualParams<T>& params) {
    if (features.rank() != 2 || features.dim(1) != params.cin)
        throw ShapeError("dla_residual: features must be [N," + std::to_string(params.cin) +
                         "], got " + shape_str(features.shape));
    Tensor<T> x = linear(ctx, features, params.in_proj.w->value, params.in_proj.b->value);
    Tensor<T> c = position_encoding(ctx, positions, idx, params.pe);
    Tensor<T> attn = self_attention(ctx, x, c, idx, params.sa);
    Tensor<T> pooled = attentive_pooling(ctx, attn, c, params.ap);
    Tensor<T> main = linear(ctx, pooled, params.post.w->value, params.post.b->value);
    Tensor<T> skip = params.skip_identity
                         ? features
                         : linear(ctx, features, params.skip.w->value, Tensor<T>());
    return relu(ctx, add(ctx, main, skip));
}

#define DLA_INSTANTIATE_MODULE(T)                                                                 \
    template PositionEncodingParams<T> make_position_encoding<T>(                                 \
        ParamStore<T>&, const std::string&, int64_t, const DlaOptions&, Prng&);                   \
    template SelfAttentionParams<T> make_self_attention<T>(ParamStore<T>&, const std::string&,    \
                                                           int64_t, const DlaOptions&, Prng&);    \
    template AttentivePoolingParams<T> make_attentive_pooling<T>(                                 \
        ParamStore<T>&, const std::string&, int64_t, const DlaOptions&, Prng&);                   \
    template DlaResidualParams<T> make_dla_residual<T>(ParamStore<T>&, const std::string&,        \
                                                       int64_t, int64_t, const DlaOptions&, Prng&); \
    template Tensor<T> position_encoding<T>(Ctx<T>&, const std::vector<Vec3>&,                    \
                                            const NeighborIndex&, const PositionEncodingParams<T>&); \
    template Tensor<T> self_attention<T>(Ctx<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                         const NeighborIndex&, const SelfAttentionParams<T>&);    \
    template Tensor<T> attentive_pooling<T>(Ctx<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                            const AttentivePoolingParams<T>&);                    \
    template Tensor<T> dla_residual<T>(Ctx<T>&, const Tensor<T>&, const std::vector<Vec3>&,       \
                                       const NeighborIndex&, const DlaResidualParams<T>&);

DLA_INSTANTIATE_MODULE(float)
DLA_INSTANTIATE_MODULE(double)

}  // namespace dla
