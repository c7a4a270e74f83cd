#pragma once

#include <string>

#include "dla/ops.hpp"
#include "dla/params.hpp"

namespace dla {

// Ablation axes. The strings are the exact config/CLI vocabulary.

enum class PeVariant {
    neighbor_only,           // p_k                         (width 3)
    relative_only,           // p_i - p_k                   (width 3)
    relative_dist,           // (p_i - p_k) (+) |p_i - p_k| (width 4, default)
    center_relative_dist,    // p_i (+) rel (+) dist        (width 7)
    neighbor_relative_dist,  // p_k (+) rel (+) dist        (width 7)
    all,                     // p_i (+) p_k (+) rel (+) dist (width 10)
};

enum class SaPePlacement { both, mapping_only, values_only, none };
enum class ApMode { attentive, max, avg, passthrough, no_pe };
enum class SaAggregate { sum, per_neighbor };

int pe_raw_width(PeVariant v);

const char* to_string(PeVariant v);
const char* to_string(SaPePlacement v);
const char* to_string(ApMode v);
const char* to_string(SaAggregate v);
PeVariant pe_variant_from_string(const std::string& s);
SaPePlacement sa_pe_placement_from_string(const std::string& s);
ApMode ap_mode_from_string(const std::string& s);
SaAggregate sa_aggregate_from_string(const std::string& s);

// Option block shared by the builders below.
struct DlaOptions {
    PeVariant pe_variant = PeVariant::relative_dist;
    bool pe_bn = true;
    SaPePlacement sa_pe = SaPePlacement::both;
    bool sa_bn = true;
    SaAggregate sa_aggregate = SaAggregate::sum;
    ApMode ap_mode = ApMode::attentive;
};

// Two linear maps with a ReLU between, then optional BN+ReLU; the learned
// embedding of per-neighbor spatial relations.
template <class T>
struct PositionEncodingParams {
    LinearParams<T> l1, l2;
    BatchNormParams<T> bn;
    PeVariant variant = PeVariant::relative_dist;
    bool bn_enabled = true;
    int64_t d = 0;
};

template <class T>
struct SelfAttentionParams {
    LinearParams<T> alpha, beta, gamma;
    LinearParams<T> eta1, eta2;
    BatchNormParams<T> bn;
    SaPePlacement placement = SaPePlacement::both;
    bool bn_enabled = true;
    SaAggregate aggregate = SaAggregate::sum;
    int64_t d = 0;
};

template <class T>
struct AttentivePoolingParams {
    LinearParams<T> score;  // square over the pooled width (2d, or d for no_pe)
    ApMode mode = ApMode::attentive;
    int64_t d = 0;
};

template <class T>
struct DlaResidualParams {
    LinearParams<T> in_proj;
    PositionEncodingParams<T> pe;
    SelfAttentionParams<T> sa;
    AttentivePoolingParams<T> ap;
    LinearParams<T> post;
    LinearParams<T> skip;  // bias-free; identity when cin == dout
    int64_t cin = 0, dout = 0, d = 0;
    bool skip_identity = false;
};

template <class T>
PositionEncodingParams<T> make_position_encoding(ParamStore<T>& store, const std::string& prefix,
                                                 int64_t d, const DlaOptions& opt, Prng& rng);
template <class T>
SelfAttentionParams<T> make_self_attention(ParamStore<T>& store, const std::string& prefix,
                                           int64_t d, const DlaOptions& opt, Prng& rng);
template <class T>
AttentivePoolingParams<T> make_attentive_pooling(ParamStore<T>& store, const std::string& prefix,
                                                 int64_t d, const DlaOptions& opt, Prng& rng);
template <class T>
DlaResidualParams<T> make_dla_residual(ParamStore<T>& store, const std::string& prefix,
                                       int64_t cin, int64_t dout, const DlaOptions& opt, Prng& rng);

// Width of the pooled feature entering the post projection.
int64_t pooled_width(ApMode mode, int64_t d);

// c[n,k,:] from the raw per-neighbor spatial vector of the chosen variant.
template <class T>
Tensor<T> position_encoding(Ctx<T>& ctx, const std::vector<Vec3>& positions,
                            const NeighborIndex& idx, const PositionEncodingParams<T>& params);

// F_i = sum_k softmax_k(eta(alpha(f_i) - beta(f_k) + c_k)) (.) (gamma(f_k) + c_k),
// softmax per channel over the neighbor axis. Returns [N,d] under the sum
// aggregate, [N,K,d] under per_neighbor.
template <class T>
Tensor<T> self_attention(Ctx<T>& ctx, const Tensor<T>& f, const Tensor<T>& c,
                         const NeighborIndex& idx, const SelfAttentionParams<T>& params);

// Pools concat(F, c) over the neighbor axis with learned softmax scores
// (or max/avg/passthrough/no_pe per the ablation mode). Returns [N, pooled].
template <class T>
Tensor<T> attentive_pooling(Ctx<T>& ctx, const Tensor<T>& f, const Tensor<T>& c,
                            const AttentivePoolingParams<T>& params);

// ReLU(post(pool(sa(pe, in_proj(x)))) + skip(x)).
template <class T>
Tensor<T> dla_residual(Ctx<T>& ctx, const Tensor<T>& features, const std::vector<Vec3>& positions,
                       const NeighborIndex& idx, const DlaResidualParams<T>& params);

}  // namespace dla
