#pragma once

#include <vector>

#include "dla/dla_module.hpp"
#include "dla/geometry.hpp"

namespace dla {

// Architecture configuration (Fig.-style defaults). JSON (de)serialization
// lives in config.cpp; unknown keys are rejected there.
struct DlaNetConfig {
    int64_t d_in = 6;  // xyz + rgb; 3 without rgb
    int64_t n_class = 8;
    std::vector<int64_t> encoder_dims = {32, 128, 256, 512};
    int64_t decimation = 4;
    int64_t k_neighbors = 16;
    std::vector<int64_t> head_dims = {64, 32};
    double dropout_p = 0.5;
    bool use_rgb = true;
    DlaOptions dla;

    void validate() const;
    int64_t levels() const { return static_cast<int64_t>(encoder_dims.size()) + 1; }
};

template <class T>
struct DecoderLayerParams {
    LinearParams<T> mlp;
    BatchNormParams<T> bn;
};

template <class T>
struct DlaNetParams {
    LinearParams<T> stem;  // d_in -> 8
    std::vector<DlaResidualParams<T>> enc;
    std::vector<DecoderLayerParams<T>> dec;
    LinearParams<T> head1, head2, classifier;
};

inline constexpr int64_t kStemWidth = 8;

template <class T>
DlaNetParams<T> build_dla_net(ParamStore<T>& store, const DlaNetConfig& cfg, Prng& rng);

// The per-sample resolution pyramid: positions, self-inclusive KNN and the
// subsample/upsample wiring for each level. Level 0 holds all N points,
// level l holds ceil(N / decimation^l).
struct Pyramid {
    struct Level {
        std::vector<Vec3> pos;
        NeighborIndex neighbors;        // levels 0..L-1 (not built for the last)
        std::vector<int32_t> sub_idx;   // rows of this level forming the next
        std::vector<int32_t> up_map;    // for level l >= 1: nearest index in this
                                        // level for every point of level l-1
    };
    std::vector<Level> levels;
    int64_t n_points() const { return static_cast<int64_t>(levels.front().pos.size()); }
};

Pyramid build_pyramid(const std::vector<Vec3>& positions, const DlaNetConfig& cfg, Prng& rng);

// Disjoint union of per-item pyramids with index offsets, so a whole batch
// runs as one forward pass (BN statistics then span the batch).
Pyramid merge_pyramids(std::vector<Pyramid> parts);

// Input feature assembly: xyz, plus rgb scaled to [0,1] when configured.
template <class T>
Tensor<T> assemble_features(const PointCloud& cloud, const DlaNetConfig& cfg);

// Full encoder-decoder pass; returns [N, n_class] raw logits.
template <class T>
Tensor<T> dla_net_forward(Ctx<T>& ctx, const Pyramid& pyramid, const Tensor<T>& features,
                          const DlaNetParams<T>& params, const DlaNetConfig& cfg);

}  // namespace dla
