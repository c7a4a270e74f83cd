#include "dla/network.hpp"

namespace dla {

void DlaNetConfig::validate() const {
    if (d_in != (use_rgb ? 6 : 3))
        throw ConfigError("d_in must be 6 with rgb / 3 without, got " + std::to_string(d_in));
    if (n_class < 2) throw ConfigError("n_class must be >= 2");
    if (encoder_dims.size() != 4)
        throw ConfigError("expected 4 encoder layers, got " + std::to_string(encoder_dims.size()));
    for (int64_t dim : encoder_dims)
        if (dim < 2 || dim % 2) throw ConfigError("encoder dims must be even and >= 2");
    if (decimation < 2) throw ConfigError("decimation must be >= 2");
    if (k_neighbors < 1) throw ConfigError("k_neighbors must be >= 1");
    if (head_dims.size() != 2) throw ConfigError("expected 2 head widths");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0,1)");
}

template <class T>
DlaNetParams<T> build_dla_net(ParamStore<T>& store, const DlaNetConfig& cfg, Prng& rng) {
    cfg.validate();
    DlaNetParams<T> net;
    net.stem = make_linear(store, "stem", cfg.d_in, kStemWidth, true, rng);

    int64_t width = kStemWidth;
    for (size_t l = 0; l < cfg.encoder_dims.size(); ++l) {
        net.enc.push_back(make_dla_residual(store, "enc" + std::to_string(l), width,
                                            cfg.encoder_dims[l], cfg.dla, rng));
        width = cfg.encoder_dims[l];
    }

    // Decoder mirrors the encoder: each layer consumes the upsampled features
    // concatenated with the skip from the same level.
    const int64_t n_enc = static_cast<int64_t>(cfg.encoder_dims.size());
    int64_t carried = cfg.encoder_dims.back();
    for (int64_t j = 0; j < n_enc; ++j) {
        const int64_t skip_level = n_enc - 1 - j;
        const int64_t skip_width = cfg.encoder_dims[static_cast<size_t>(skip_level)];
        const int64_t out_width =
            skip_level > 0 ? cfg.encoder_dims[static_cast<size_t>(skip_level - 1)] : cfg.head_dims[1];
        DecoderLayerParams<T> dec;
        dec.mlp = make_linear(store, "dec" + std::to_string(j) + ".mlp", carried + skip_width,
                              out_width, true, rng);
        dec.bn = make_batch_norm(store, "dec" + std::to_string(j) + ".bn", out_width);
        net.dec.push_back(dec);
        carried = out_width;
    }

    net.head1 = make_linear(store, "head.fc1", carried, cfg.head_dims[0], true, rng);
    net.head2 = make_linear(store, "head.fc2", cfg.head_dims[0], cfg.head_dims[1], true, rng);
    net.classifier = make_linear(store, "head.classifier", cfg.head_dims[1], cfg.n_class, true, rng);
    return net;
}

Pyramid build_pyramid(const std::vector<Vec3>& positions, const DlaNetConfig& cfg, Prng& rng) {
    const int64_t n = static_cast<int64_t>(positions.size());
    int64_t need = 1;
    for (int64_t l = 0; l < cfg.levels() - 1; ++l) need *= cfg.decimation;
    if (n < need)
        throw DataError("build_pyramid: cloud of " + std::to_string(n) + " points is too small (need >= " +
                        std::to_string(need) + " so the last level is nonempty)");

    Pyramid py;
    py.levels.resize(static_cast<size_t>(cfg.levels()));
    py.levels[0].pos = positions;
    for (int64_t l = 0; l < cfg.levels(); ++l) {
        auto& level = py.levels[static_cast<size_t>(l)];
        const int64_t nl = static_cast<int64_t>(level.pos.size());
        if (l + 1 < cfg.levels()) {
            const int64_t k = std::min(cfg.k_neighbors, nl);
            level.neighbors = knn(level.pos, level.pos, k, /*self_mode=*/true);
            level.neighbors.level = static_cast<int>(l);

            const int64_t keep = (nl + cfg.decimation - 1) / cfg.decimation;
            level.sub_idx = random_subsample(nl, keep, rng);
            auto& next = py.levels[static_cast<size_t>(l + 1)];
            next.pos.reserve(static_cast<size_t>(keep));
            for (int32_t s : level.sub_idx) next.pos.push_back(level.pos[static_cast<size_t>(s)]);
            next.up_map = nearest_coarse_map(level.pos, next.pos);
        }
    }
    return py;
}

Pyramid merge_pyramids(std::vector<Pyramid> parts) {
    if (parts.empty()) throw DataError("merge_pyramids: no parts");
    if (parts.size() == 1) return std::move(parts.front());
    const size_t levels = parts.front().levels.size();
    for (const auto& p : parts)
        if (p.levels.size() != levels) throw ShapeError("merge_pyramids: level count mismatch");

    Pyramid out;
    out.levels.resize(levels);
    for (size_t l = 0; l < levels; ++l) {
        auto& dst = out.levels[l];
        int64_t pos_offset = 0;  // offset into this level's union
        for (auto& p : parts) {
            auto& src = p.levels[l];
            const int64_t nl = static_cast<int64_t>(src.pos.size());
            dst.pos.insert(dst.pos.end(), src.pos.begin(), src.pos.end());
            if (!src.neighbors.idx.empty()) {
                if (dst.neighbors.k == 0) dst.neighbors.k = src.neighbors.k;
                if (dst.neighbors.k != src.neighbors.k)
                    throw ShapeError("merge_pyramids: neighbor K differs between batch items");
                dst.neighbors.level = src.neighbors.level;
                for (int32_t v : src.neighbors.idx)
                    dst.neighbors.idx.push_back(static_cast<int32_t>(v + pos_offset));
                dst.neighbors.n += src.neighbors.n;
            }
            for (int32_t v : src.sub_idx)
                dst.sub_idx.push_back(static_cast<int32_t>(v + pos_offset));
            // up_map entries index into this level, same offset as the rest.
            for (int32_t v : src.up_map)
                dst.up_map.push_back(static_cast<int32_t>(v + pos_offset));
            pos_offset += nl;
        }
    }
    return out;
}

template <class T>
Tensor<T> assemble_features(const PointCloud& cloud, const DlaNetConfig& cfg) {
    const int64_t n = cloud.size();
    Tensor<T> f({n, cfg.d_in});
    T* fp = f.ptr();
    if (cfg.use_rgb && !cloud.has_color())
        throw DataError("config asks for rgb features but the cloud has no colors");
    for (int64_t i = 0; i < n; ++i) {
        const Vec3& p = cloud.pos[static_cast<size_t>(i)];
        T* row = fp + i * cfg.d_in;
        for (int a = 0; a < 3; ++a) row[a] = static_cast<T>(p[static_cast<size_t>(a)]);
        if (cfg.use_rgb)
            for (int a = 0; a < 3; ++a)
                row[3 + a] = static_cast<T>(cloud.color[static_cast<size_t>(i)][static_cast<size_t>(a)] / 255.0);
    }
    return f;
}

template <class T>
Tensor<T> dla_net_forward(Ctx<T>& ctx, const Pyramid& pyramid, const Tensor<T>& features,
                          const DlaNetParams<T>& params, const DlaNetConfig& cfg) {
    const int64_t n_enc = static_cast<int64_t>(params.enc.size());
    if (pyramid.levels.size() != static_cast<size_t>(n_enc + 1))
        throw ShapeError("forward: pyramid has " + std::to_string(pyramid.levels.size()) +
                         " levels for " + std::to_string(n_enc) + " encoder layers");
    if (features.rank() != 2 || features.dim(0) != pyramid.n_points() ||
        features.dim(1) != cfg.d_in)
        throw ShapeError("forward: feature tensor " + shape_str(features.shape) +
                         " does not match pyramid/d_in");

    Tensor<T> x = linear(ctx, features, params.stem.w->value, params.stem.b->value);

    std::vector<Tensor<T>> skips;
    skips.reserve(static_cast<size_t>(n_enc));
    for (int64_t l = 0; l < n_enc; ++l) {
        const auto& level = pyramid.levels[static_cast<size_t>(l)];
        x = dla_residual(ctx, x, level.pos, level.neighbors, params.enc[static_cast<size_t>(l)]);
        skips.push_back(x);
        x = gather_rows(ctx, x, level.sub_idx);  // decimate to the next level
    }

    for (int64_t j = 0; j < n_enc; ++j) {
        const int64_t fine = n_enc - 1 - j;  // level we upsample back onto
        const auto& up_map = pyramid.levels[static_cast<size_t>(fine + 1)].up_map;
        Tensor<T> up = gather_rows(ctx, x, up_map);
        Tensor<T> cat = concat_channels(ctx, up, skips[static_cast<size_t>(fine)]);
        const auto& dec = params.dec[static_cast<size_t>(j)];
        x = linear(ctx, cat, dec.mlp.w->value, dec.mlp.b->value);
        x = batch_norm(ctx, x, dec.bn.scale->value, dec.bn.shift->value,
                       *dec.bn.running_mean->value.data, *dec.bn.running_var->value.data);
        x = relu(ctx, x);
    }

    x = relu(ctx, linear(ctx, x, params.head1.w->value, params.head1.b->value));
    x = relu(ctx, linear(ctx, x, params.head2.w->value, params.head2.b->value));
    x = dropout(ctx, x, cfg.dropout_p);
    return linear(ctx, x, params.classifier.w->value, params.classifier.b->value);
}

#define DLA_INSTANTIATE_NET(T)                                                             \
    template DlaNetParams<T> build_dla_net<T>(ParamStore<T>&, const DlaNetConfig&, Prng&); \
    template Tensor<T> assemble_features<T>(const PointCloud&, const DlaNetConfig&);       \
    template Tensor<T> dla_net_forward<T>(Ctx<T>&, const Pyramid&, const Tensor<T>&,       \
                                          const DlaNetParams<T>&, const DlaNetConfig&);

DLA_INSTANTIATE_NET(float)
DLA_INSTANTIATE_NET(double)

}  // namespace dla
