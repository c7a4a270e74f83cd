#include <algorithm>
#include <cmath>
#include <numeric>

#include "dla/dataset.hpp"

namespace dla {

namespace {

struct Patch {
    Vec3 origin;
    Vec3 e1, e2;     // edge vectors; points are origin + u*e1 + v*e2
    Vec3 normal;     // jitter direction
    double area;
    Rgb color;
};

double vlen(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Patch rect(Vec3 origin, Vec3 e1, Vec3 e2, Vec3 normal, Rgb color) {
    return {origin, e1, e2, normal, vlen(e1) * vlen(e2), color};
}

uint8_t jitter(Prng& rng, int base, int amount) {
    const int v = base + static_cast<int>(rng.next_below(static_cast<uint64_t>(2 * amount + 1))) - amount;
    return static_cast<uint8_t>(std::clamp(v, 0, 255));
}

struct Rect2 {
    double x0, y0, x1, y1;
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct Scene {
    std::array<std::vector<Patch>, ClassSchema::n_class> patches;
    std::vector<Rect2> window_holes;  // wall-plane regions to avoid
    double x0 = 0.0;
};

// Base colors. Balcony is deliberately close to wall and clutter/advboard
// colors vary, so those classes need geometric cues.
constexpr Rgb kColBalustrade{105, 105, 110};
constexpr Rgb kColBalcony{196, 188, 178};
constexpr Rgb kColWall{205, 198, 186};
constexpr Rgb kColEave{150, 95, 75};
constexpr Rgb kColColumn{158, 146, 132};
constexpr Rgb kColWindow{75, 95, 135};

Scene build_scene(const SceneSpec& spec, Prng& rng) {
    Scene scene;
    const double W = spec.width, H = spec.height;
    const double x0 = spec.x_offset;
    scene.x0 = x0;
    const double floor_h = H / spec.floors;
    const double cell_w = W / spec.window_cols;

    auto& P = scene.patches;
    const int kBalustrade = 0, kBalcony = 1, kAdvboard = 2, kWall = 3, kEave = 4, kColumn = 5,
              kWindow = 6, kClutter = 7;

    // Wall plane (window holes carved at sampling time).
    P[kWall].push_back(rect({x0, 0, 0}, {W, 0, 0}, {0, H, 0}, {0, 0, 1}, kColWall));

    // Window grid, recessed.
    const double win_w = 0.5 * cell_w, win_h = 0.45 * floor_h;
    for (int f = 0; f < spec.floors; ++f)
        for (int c = 0; c < spec.window_cols; ++c) {
            const double cx = x0 + (c + 0.5) * cell_w, cy = (f + 0.55) * floor_h;
            const double wx0 = cx - win_w / 2, wy0 = cy - win_h / 2;
            P[kWindow].push_back(rect({wx0, wy0, -0.15}, {win_w, 0, 0}, {0, win_h, 0}, {0, 0, 1},
                                      kColWindow));
            scene.window_holes.push_back({wx0 - x0, wy0, wx0 - x0 + win_w, wy0 + win_h});
        }

    // Columns: protruding boxes over the full height.
    const double col_w = 0.4, col_d = 0.4;
    std::vector<double> col_x;
    for (int i = 0; i < spec.columns; ++i) {
        const double cx = x0 + (i + 0.5) * (W / spec.columns) - col_w / 2;
        col_x.push_back(cx);
        P[kColumn].push_back(rect({cx, 0, col_d}, {col_w, 0, 0}, {0, H, 0}, {0, 0, 1}, kColColumn));
        P[kColumn].push_back(rect({cx, 0, 0}, {0, 0, col_d}, {0, H, 0}, {-1, 0, 0}, kColColumn));
        P[kColumn].push_back(rect({cx + col_w, 0, 0}, {0, 0, col_d}, {0, H, 0}, {1, 0, 0}, kColColumn));
    }

    // Eave strip along the top.
    P[kEave].push_back(rect({x0, H - 0.35, 0.5}, {W, 0, 0}, {0, 0.35, 0}, {0, 0, 1}, kColEave));
    P[kEave].push_back(rect({x0, H - 0.35, 0}, {W, 0, 0}, {0, 0, 0.5}, {0, -1, 0}, kColEave));

    // Balconies on upper floors (random cells), balustrade strip on top.
    for (int f = 1; f < spec.floors; ++f)
        for (int c = 0; c < spec.window_cols; ++c) {
            if (rng.next_double() >= 0.45) continue;
            const double bx0 = x0 + c * cell_w + 0.1 * cell_w;
            const double bw = 0.8 * cell_w;
            const double by = f * floor_h;
            const double bh = 1.0, bd = 0.8;
            P[kBalcony].push_back(rect({bx0, by, bd}, {bw, 0, 0}, {0, bh, 0}, {0, 0, 1}, kColBalcony));
            P[kBalcony].push_back(rect({bx0, by, 0}, {0, 0, bd}, {0, bh, 0}, {-1, 0, 0}, kColBalcony));
            P[kBalcony].push_back(rect({bx0 + bw, by, 0}, {0, 0, bd}, {0, bh, 0}, {1, 0, 0}, kColBalcony));
            P[kBalcony].push_back(rect({bx0, by, 0}, {bw, 0, 0}, {0, 0, bd}, {0, -1, 0}, kColBalcony));
            P[kBalustrade].push_back(rect({bx0, by + bh, bd}, {bw, 0, 0}, {0, 0.35, 0}, {0, 0, 1},
                                          kColBalustrade));
        }

    // Advertising boards between columns above the ground floor; hue varies
    // per scene.
    const Rgb adv_base = {jitter(rng, 200, 55), jitter(rng, 80, 60), jitter(rng, 70, 50)};
    for (size_t i = 0; i + 1 < col_x.size(); ++i) {
        if (rng.next_double() >= 0.7) continue;
        const double ax0 = col_x[i] + col_w + 0.15;
        const double ax1 = col_x[i + 1] - 0.15;
        if (ax1 <= ax0) continue;
        P[kAdvboard].push_back(rect({ax0, floor_h - 0.4, 0.45}, {ax1 - ax0, 0, 0}, {0, 1.0, 0},
                                    {0, 0, 1}, adv_base));
    }

    // Clutter blobs (box shells with random color) stuck to the wall.
    for (int b = 0; b < spec.clutter_blobs; ++b) {
        const double s = 0.2 + 0.3 * rng.next_double();
        const double bx = x0 + 0.5 + rng.next_double() * std::max(0.1, W - 1.0 - s);
        const double by = 0.3 + rng.next_double() * std::max(0.1, H - 1.0 - s);
        const Rgb col = {jitter(rng, 128, 120), jitter(rng, 128, 120), jitter(rng, 128, 120)};
        P[kClutter].push_back(rect({bx, by, s}, {s, 0, 0}, {0, s, 0}, {0, 0, 1}, col));
        P[kClutter].push_back(rect({bx, by, 0}, {0, 0, s}, {0, s, 0}, {-1, 0, 0}, col));
        P[kClutter].push_back(rect({bx + s, by, 0}, {0, 0, s}, {0, s, 0}, {1, 0, 0}, col));
        P[kClutter].push_back(rect({bx, by + s, 0}, {s, 0, 0}, {0, 0, s}, {0, 1, 0}, col));
    }
    return scene;
}

}  // namespace

PointCloud generate_synthetic_facade(uint64_t seed, int64_t n_points,
                                     const std::optional<SceneSpec>& spec_in) {
    if (n_points < 256) throw DataError("generate_synthetic_facade: need at least 256 points");
    const SceneSpec spec = spec_in.value_or(SceneSpec{});
    Prng rng(seed);
    Scene scene = build_scene(spec, rng);

    // Exact per-class allocation: floor(share*n) plus largest remainders.
    std::array<int64_t, ClassSchema::n_class> count{};
    std::array<double, ClassSchema::n_class> frac{};
    int64_t assigned = 0;
    double share_sum = 0.0;
    for (double s : spec.class_share) share_sum += s;
    for (int c = 0; c < ClassSchema::n_class; ++c) {
        const double want = spec.class_share[static_cast<size_t>(c)] / share_sum *
                            static_cast<double>(n_points);
        count[static_cast<size_t>(c)] = static_cast<int64_t>(want);
        frac[static_cast<size_t>(c)] = want - std::floor(want);
        assigned += count[static_cast<size_t>(c)];
    }
    while (assigned < n_points) {
        int best = 0;
        for (int c = 1; c < ClassSchema::n_class; ++c)
            if (frac[static_cast<size_t>(c)] > frac[static_cast<size_t>(best)]) best = c;
        ++count[static_cast<size_t>(best)];
        frac[static_cast<size_t>(best)] = -1.0;
        ++assigned;
    }

    PointCloud cloud;
    cloud.pos.reserve(static_cast<size_t>(n_points));
    cloud.color.reserve(static_cast<size_t>(n_points));
    cloud.label.reserve(static_cast<size_t>(n_points));

    for (int c = 0; c < ClassSchema::n_class; ++c) {
        const auto& patches = scene.patches[static_cast<size_t>(c)];
        if (patches.empty())
            throw Error("synthetic scene has no surface for class " + ClassSchema::names()[static_cast<size_t>(c)]);
        double total_area = 0.0;
        for (const auto& p : patches) total_area += p.area;
        const bool is_wall = c == 3;
        for (int64_t i = 0; i < count[static_cast<size_t>(c)]; ++i) {
            // Weighted patch pick, then uniform (u,v) with normal jitter.
            const Patch* patch = &patches.back();
            double pick = rng.next_double() * total_area;
            for (const auto& p : patches) {
                if (pick < p.area) {
                    patch = &p;
                    break;
                }
                pick -= p.area;
            }
            double u = 0.0, v = 0.0;
            for (int attempt = 0; attempt < 16; ++attempt) {
                u = rng.next_double();
                v = rng.next_double();
                if (!is_wall) break;
                const double wx = u * patch->e1[0], wy = v * patch->e2[1];
                bool inside = false;
                for (const auto& hole : scene.window_holes)
                    if (hole.contains(wx, wy)) {
                        inside = true;
                        break;
                    }
                if (!inside) break;
            }
            const double j = rng.next_gaussian() * spec.noise;
            Vec3 pos;
            for (int a = 0; a < 3; ++a)
                pos[static_cast<size_t>(a)] = patch->origin[static_cast<size_t>(a)] +
                                              u * patch->e1[static_cast<size_t>(a)] +
                                              v * patch->e2[static_cast<size_t>(a)] +
                                              j * patch->normal[static_cast<size_t>(a)];
            cloud.pos.push_back(pos);
            cloud.color.push_back({jitter(rng, patch->color[0], spec.color_noise),
                                   jitter(rng, patch->color[1], spec.color_noise),
                                   jitter(rng, patch->color[2], spec.color_noise)});
            cloud.label.push_back(static_cast<uint8_t>(c));
        }
    }
    cloud.validate(ClassSchema::n_class);
    return cloud;
}

PointCloud generate_synthetic_area(uint64_t base_seed, int area_index, int64_t n_points) {
    const uint64_t seed = Prng::derive(base_seed, static_cast<uint64_t>(area_index));
    Prng shape_rng(Prng::derive(seed, 0xa5a5));
    SceneSpec spec;
    spec.width = 12.0 + 6.0 * shape_rng.next_double();
    spec.height = 9.0 + 5.0 * shape_rng.next_double();
    spec.floors = 3 + static_cast<int>(shape_rng.next_below(2));
    spec.window_cols = 4 + static_cast<int>(shape_rng.next_below(3));
    spec.columns = 4 + static_cast<int>(shape_rng.next_below(3));
    spec.clutter_blobs = 8 + static_cast<int>(shape_rng.next_below(5));
    // Areas sit at distinct spots along the street, so absolute coordinates
    // shift between train and test areas.
    spec.x_offset = 40.0 * area_index;
    return generate_synthetic_facade(seed, n_points, spec);
}

}  // namespace dla
