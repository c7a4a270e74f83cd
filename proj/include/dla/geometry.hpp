#pragma once

#include <vector>

#include "dla/pointcloud.hpp"
#include "dla/rng.hpp"

namespace dla {

// Exact K nearest supports per query under Euclidean distance. Ties break
// toward the smaller support index. When `self_mode` and query/support are
// the same set, entry (q,0) is q itself (distance 0 outranks the tie rule).
// Accelerated by a uniform voxel grid above 256 supports, brute force below;
// both paths produce identical results.
NeighborIndex knn(const std::vector<Vec3>& query, const std::vector<Vec3>& support, int64_t k,
                  bool self_mode = false);

// `keep` uniformly random distinct indices out of [0, n), ascending. One pass
// over [0, n), no distance computations (selection sampling).
std::vector<int32_t> random_subsample(int64_t n, int64_t keep, Prng& rng);

// For every fine point, the index of its nearest coarse point.
std::vector<int32_t> nearest_coarse_map(const std::vector<Vec3>& fine,
                                        const std::vector<Vec3>& coarse);

struct Crop {
    PointCloud cloud;
    std::vector<int32_t> source;  // index into the original cloud per output point
};

// A random center point's `count` nearest neighbors, ordered by distance.
// Clouds smaller than `count` are padded by re-sampling existing points.
Crop crop_fixed_count(const PointCloud& cloud, int64_t count, Prng& rng);

// Deterministic center variant used by chunked evaluation.
Crop crop_around(const PointCloud& cloud, int64_t center, int64_t count, Prng& rng);

}  // namespace dla
