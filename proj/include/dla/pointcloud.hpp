#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dla/errors.hpp"

namespace dla {

using Vec3 = std::array<double, 3>;
using Rgb = std::array<uint8_t, 3>;

// Positions plus optional per-point colors and labels for one scene/area.
// color/label are either empty or exactly N entries.
struct PointCloud {
    std::vector<Vec3> pos;
    std::vector<Rgb> color;
    std::vector<uint8_t> label;

    int64_t size() const { return static_cast<int64_t>(pos.size()); }
    bool has_color() const { return !color.empty(); }
    bool has_label() const { return !label.empty(); }

    void validate(int n_class) const;
};

// Per-point K-nearest-neighbor table at one resolution level. idx[n*k + j]
// indexes into the support set the table was built against.
struct NeighborIndex {
    int64_t n = 0;
    int64_t k = 0;
    std::vector<int32_t> idx;
    int level = 0;

    int32_t at(int64_t point, int64_t j) const { return idx[static_cast<size_t>(point * k + j)]; }
};

// The eight facade categories, in label-id order, with the fixed colormap
// used for PLY export.
struct ClassSchema {
    static constexpr int n_class = 8;
    static const std::array<std::string, 8>& names();
    static const std::array<Rgb, 8>& colormap();
    static int id_of(const std::string& name);  // -1 if unknown
};

}  // namespace dla
