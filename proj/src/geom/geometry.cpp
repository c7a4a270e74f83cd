#include "dla/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dla/parallel.hpp"

namespace dla {

namespace {

inline double dist2(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// Candidate ordering: (distance^2, index), with the self point first in
// self mode. `rank` maps the index so that self sorts below everything.
struct Best {
    double d2;
    int32_t idx;
};

inline bool better(const Best& a, const Best& b, int32_t self) {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    const bool a_self = a.idx == self, b_self = b.idx == self;
    if (a_self != b_self) return a_self;
    return a.idx < b.idx;
}

// Fixed-capacity worst-at-top heap of the k best candidates seen so far.
class BestSet {
public:
    BestSet(int64_t k, int32_t self) : k_(k), self_(self), cmp_{self} {
        heap_.reserve(static_cast<size_t>(k));
    }

    bool full() const { return static_cast<int64_t>(heap_.size()) == k_; }
    double worst_d2() const { return heap_.front().d2; }

    void offer(double d2, int32_t idx) {
        const Best cand{d2, idx};
        if (!full()) {
            heap_.push_back(cand);
            std::push_heap(heap_.begin(), heap_.end(), cmp_);
        } else if (better(cand, heap_.front(), self_)) {
            std::pop_heap(heap_.begin(), heap_.end(), cmp_);
            heap_.back() = cand;
            std::push_heap(heap_.begin(), heap_.end(), cmp_);
        }
    }

    // Ascending (d2, index) order, self first on distance ties with it.
    void extract(int32_t* out) {
        std::sort(heap_.begin(), heap_.end(),
                  [&](const Best& a, const Best& b) { return better(a, b, self_); });
        for (size_t i = 0; i < heap_.size(); ++i) out[i] = heap_[i].idx;
    }

private:
    struct Cmp {
        int32_t self;
        // Max-heap under `better`: the front is the worst kept candidate.
        bool operator()(const Best& a, const Best& b) const { return better(a, b, self); }
    };
    int64_t k_;
    int32_t self_;
    Cmp cmp_{-1};
    std::vector<Best> heap_;
};

struct VoxelGrid {
    Vec3 origin{};
    double h = 0.0;
    int64_t nx = 0, ny = 0, nz = 0;
    std::vector<int64_t> cell_start;  // CSR offsets, nx*ny*nz+1
    std::vector<int32_t> order;       // support indices sorted by cell, ascending inside

    int64_t cell_of(const Vec3& p, int axis) const {
        const double rel = (p[static_cast<size_t>(axis)] - origin[static_cast<size_t>(axis)]) / h;
        int64_t c = static_cast<int64_t>(std::floor(rel));
        const int64_t n = axis == 0 ? nx : axis == 1 ? ny : nz;
        return std::clamp<int64_t>(c, 0, n - 1);
    }
    int64_t flat(int64_t cx, int64_t cy, int64_t cz) const { return (cx * ny + cy) * nz + cz; }
};

constexpr int64_t kBruteForceBelow = 256;
constexpr int64_t kMaxCellsPerAxis = 512;

VoxelGrid build_grid(const std::vector<Vec3>& support, double h) {
    VoxelGrid g;
    Vec3 lo = support[0], hi = support[0];
    for (const auto& p : support)
        for (int a = 0; a < 3; ++a) {
            lo[static_cast<size_t>(a)] = std::min(lo[static_cast<size_t>(a)], p[static_cast<size_t>(a)]);
            hi[static_cast<size_t>(a)] = std::max(hi[static_cast<size_t>(a)], p[static_cast<size_t>(a)]);
        }
    g.origin = lo;
    g.h = h;
    auto axis_cells = [&](int a) {
        const double extent = hi[static_cast<size_t>(a)] - lo[static_cast<size_t>(a)];
        int64_t n = static_cast<int64_t>(std::floor(extent / h)) + 1;
        return std::clamp<int64_t>(n, 1, kMaxCellsPerAxis);
    };
    g.nx = axis_cells(0);
    g.ny = axis_cells(1);
    g.nz = axis_cells(2);

    const int64_t total = g.nx * g.ny * g.nz;
    std::vector<int64_t> counts(static_cast<size_t>(total), 0);
    std::vector<int64_t> cell_id(support.size());
    for (size_t i = 0; i < support.size(); ++i) {
        const int64_t c = g.flat(g.cell_of(support[i], 0), g.cell_of(support[i], 1),
                                 g.cell_of(support[i], 2));
        cell_id[i] = c;
        ++counts[static_cast<size_t>(c)];
    }
    g.cell_start.assign(static_cast<size_t>(total) + 1, 0);
    for (int64_t c = 0; c < total; ++c)
        g.cell_start[static_cast<size_t>(c) + 1] =
            g.cell_start[static_cast<size_t>(c)] + counts[static_cast<size_t>(c)];
    g.order.resize(support.size());
    std::vector<int64_t> cursor(g.cell_start.begin(), g.cell_start.end() - 1);
    // Ascending input order within each cell keeps tie handling deterministic.
    for (size_t i = 0; i < support.size(); ++i)
        g.order[static_cast<size_t>(cursor[static_cast<size_t>(cell_id[i])]++)] =
            static_cast<int32_t>(i);
    return g;
}

// Median nearest-neighbor spacing over a strided sample, estimated with a
// provisional grid sized from the bounding-box volume.
double estimate_spacing(const std::vector<Vec3>& support) {
    Vec3 lo = support[0], hi = support[0];
    for (const auto& p : support)
        for (int a = 0; a < 3; ++a) {
            lo[static_cast<size_t>(a)] = std::min(lo[static_cast<size_t>(a)], p[static_cast<size_t>(a)]);
            hi[static_cast<size_t>(a)] = std::max(hi[static_cast<size_t>(a)], p[static_cast<size_t>(a)]);
        }
    double ext[3];
    double max_ext = 0.0;
    for (int a = 0; a < 3; ++a) {
        ext[a] = hi[static_cast<size_t>(a)] - lo[static_cast<size_t>(a)];
        max_ext = std::max(max_ext, ext[a]);
    }
    if (max_ext <= 0.0) return 0.0;  // all points coincide
    const double n = static_cast<double>(support.size());
    double vol = 1.0;
    for (int a = 0; a < 3; ++a) vol *= std::max(ext[a], 1e-9 * max_ext);
    double h0 = std::cbrt(vol / n);
    if (!(h0 > 0.0) || !std::isfinite(h0)) h0 = max_ext / std::cbrt(n);

    VoxelGrid grid = build_grid(support, h0);
    std::vector<double> nn;
    const size_t sample = std::min<size_t>(support.size(), 256);
    const size_t stride = std::max<size_t>(1, support.size() / sample);
    for (size_t i = 0; i < support.size(); i += stride) {
        const Vec3& q = support[i];
        // Expand rings until a neighbor other than i itself is found.
        const int64_t cx = grid.cell_of(q, 0), cy = grid.cell_of(q, 1), cz = grid.cell_of(q, 2);
        double best = std::numeric_limits<double>::infinity();
        const int64_t max_ring = std::max({grid.nx, grid.ny, grid.nz});
        for (int64_t r = 0; r <= max_ring; ++r) {
            if (std::isfinite(best)) {
                const double bound = (static_cast<double>(r) - 1.0) * grid.h;
                if (bound > 0.0 && bound * bound > best) break;
            }
            for (int64_t x = std::max<int64_t>(0, cx - r); x <= std::min(grid.nx - 1, cx + r); ++x)
                for (int64_t y = std::max<int64_t>(0, cy - r); y <= std::min(grid.ny - 1, cy + r); ++y)
                    for (int64_t z = std::max<int64_t>(0, cz - r); z <= std::min(grid.nz - 1, cz + r); ++z) {
                        const int64_t ring = std::max({std::abs(x - cx), std::abs(y - cy), std::abs(z - cz)});
                        if (ring != r) continue;
                        const int64_t cell = grid.flat(x, y, z);
                        for (int64_t s = grid.cell_start[static_cast<size_t>(cell)];
                             s < grid.cell_start[static_cast<size_t>(cell) + 1]; ++s) {
                            const int32_t j = grid.order[static_cast<size_t>(s)];
                            if (static_cast<size_t>(j) == i) continue;
                            best = std::min(best, dist2(q, support[static_cast<size_t>(j)]));
                        }
                    }
        }
        if (std::isfinite(best)) nn.push_back(std::sqrt(best));
    }
    if (nn.empty()) return 0.0;
    std::nth_element(nn.begin(), nn.begin() + static_cast<int64_t>(nn.size()) / 2, nn.end());
    return nn[nn.size() / 2];
}

void knn_brute_row(const Vec3& q, const std::vector<Vec3>& support, int64_t k, int32_t self,
                   int32_t* out) {
    BestSet best(k, self);
    for (size_t j = 0; j < support.size(); ++j)
        best.offer(dist2(q, support[j]), static_cast<int32_t>(j));
    best.extract(out);
}

void knn_grid_row(const Vec3& q, const std::vector<Vec3>& support, const VoxelGrid& grid,
                  int64_t k, int32_t self, int32_t* out) {
    BestSet best(k, self);
    const int64_t cx = grid.cell_of(q, 0), cy = grid.cell_of(q, 1), cz = grid.cell_of(q, 2);
    const int64_t max_ring = std::max({grid.nx, grid.ny, grid.nz});
    for (int64_t r = 0; r <= max_ring; ++r) {
        if (best.full()) {
            // Points in ring r are at least (r-1)*h away; the small slack
            // keeps constructed boundary ties inside the scan.
            const double bound = (static_cast<double>(r) - 1.0) * grid.h * (1.0 - 1e-12);
            if (bound > 0.0 && bound * bound > best.worst_d2()) break;
        }
        const int64_t x0 = std::max<int64_t>(0, cx - r), x1 = std::min(grid.nx - 1, cx + r);
        const int64_t y0 = std::max<int64_t>(0, cy - r), y1 = std::min(grid.ny - 1, cy + r);
        const int64_t z0 = std::max<int64_t>(0, cz - r), z1 = std::min(grid.nz - 1, cz + r);
        for (int64_t x = x0; x <= x1; ++x)
            for (int64_t y = y0; y <= y1; ++y)
                for (int64_t z = z0; z <= z1; ++z) {
                    const int64_t ring = std::max({std::abs(x - cx), std::abs(y - cy), std::abs(z - cz)});
                    if (ring != r) continue;
                    const int64_t cell = grid.flat(x, y, z);
                    for (int64_t s = grid.cell_start[static_cast<size_t>(cell)];
                         s < grid.cell_start[static_cast<size_t>(cell) + 1]; ++s) {
                        const int32_t j = grid.order[static_cast<size_t>(s)];
                        best.offer(dist2(q, support[static_cast<size_t>(j)]), j);
                    }
                }
    }
    best.extract(out);
}

}  // namespace

NeighborIndex knn(const std::vector<Vec3>& query, const std::vector<Vec3>& support, int64_t k,
                  bool self_mode) {
    if (support.empty()) throw DataError("knn: empty support set");
    if (k < 1 || k > static_cast<int64_t>(support.size()))
        throw DataError("knn: k=" + std::to_string(k) + " out of range for " +
                        std::to_string(support.size()) + " supports");
    NeighborIndex out;
    out.n = static_cast<int64_t>(query.size());
    out.k = k;
    out.idx.resize(static_cast<size_t>(out.n * k));

    const bool brute = static_cast<int64_t>(support.size()) < kBruteForceBelow;
    VoxelGrid grid;
    if (!brute) {
        const double spacing = estimate_spacing(support);
        if (spacing <= 0.0) {
            // Degenerate geometry (coincident points); fall back.
            parallel_for(out.n, 64, [&](int64_t q0, int64_t q1) {
                for (int64_t i = q0; i < q1; ++i)
                    knn_brute_row(query[static_cast<size_t>(i)], support, k,
                                  self_mode ? static_cast<int32_t>(i) : -1, out.idx.data() + i * k);
            });
            return out;
        }
        grid = build_grid(support, 2.0 * spacing);
    }

    parallel_for(out.n, 64, [&](int64_t q0, int64_t q1) {
        for (int64_t i = q0; i < q1; ++i) {
            const int32_t self = self_mode ? static_cast<int32_t>(i) : -1;
            if (brute)
                knn_brute_row(query[static_cast<size_t>(i)], support, k, self, out.idx.data() + i * k);
            else
                knn_grid_row(query[static_cast<size_t>(i)], support, grid, k, self,
                             out.idx.data() + i * k);
        }
    });
    return out;
}

std::vector<int32_t> random_subsample(int64_t n, int64_t keep, Prng& rng) {
    if (keep < 1 || keep > n)
        throw DataError("random_subsample: keep=" + std::to_string(keep) + " out of range for n=" +
                        std::to_string(n));
    // Selection sampling: accept i with probability remaining/(n-i). Once
    // remaining == n-i acceptance is certain, so exactly `keep` indices come
    // out, already ascending.
    std::vector<int32_t> out;
    out.reserve(static_cast<size_t>(keep));
    int64_t remaining = keep;
    for (int64_t i = 0; i < n && remaining > 0; ++i) {
        const double u = rng.next_double();
        if (u * static_cast<double>(n - i) < static_cast<double>(remaining)) {
            out.push_back(static_cast<int32_t>(i));
            --remaining;
        }
    }
    return out;
}

std::vector<int32_t> nearest_coarse_map(const std::vector<Vec3>& fine,
                                        const std::vector<Vec3>& coarse) {
    if (coarse.empty()) throw DataError("nearest_coarse_map: empty coarse set");
    NeighborIndex nn = knn(fine, coarse, 1, /*self_mode=*/false);
    return nn.idx;
}

namespace {

Crop crop_nearest(const PointCloud& cloud, int64_t center, int64_t count, Prng& rng) {
    const int64_t n = cloud.size();
    std::vector<std::pair<double, int32_t>> order(static_cast<size_t>(n));
    const Vec3& c = cloud.pos[static_cast<size_t>(center)];
    for (int64_t i = 0; i < n; ++i)
        order[static_cast<size_t>(i)] = {dist2(c, cloud.pos[static_cast<size_t>(i)]),
                                         static_cast<int32_t>(i)};
    const int64_t take = std::min(count, n);
    std::partial_sort(order.begin(), order.begin() + take, order.end());

    Crop crop;
    crop.source.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < take; ++i) crop.source.push_back(order[static_cast<size_t>(i)].second);
    for (int64_t i = take; i < count; ++i)
        crop.source.push_back(crop.source[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(n)))]);

    crop.cloud.pos.reserve(crop.source.size());
    for (int32_t s : crop.source) crop.cloud.pos.push_back(cloud.pos[static_cast<size_t>(s)]);
    if (cloud.has_color()) {
        crop.cloud.color.reserve(crop.source.size());
        for (int32_t s : crop.source) crop.cloud.color.push_back(cloud.color[static_cast<size_t>(s)]);
    }
    if (cloud.has_label()) {
        crop.cloud.label.reserve(crop.source.size());
        for (int32_t s : crop.source) crop.cloud.label.push_back(cloud.label[static_cast<size_t>(s)]);
    }
    return crop;
}

}  // namespace

Crop crop_fixed_count(const PointCloud& cloud, int64_t count, Prng& rng) {
    if (count <= 0) throw DataError("crop_fixed_count: count must be positive");
    if (cloud.size() == 0) throw DataError("crop_fixed_count: empty cloud");
    const int64_t center = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(cloud.size())));
    return crop_nearest(cloud, center, count, rng);
}

Crop crop_around(const PointCloud& cloud, int64_t center, int64_t count, Prng& rng) {
    if (count <= 0) throw DataError("crop_around: count must be positive");
    if (center < 0 || center >= cloud.size()) throw DataError("crop_around: center out of range");
    return crop_nearest(cloud, center, count, rng);
}

}  // namespace dla
