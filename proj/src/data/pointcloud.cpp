#include "dla/pointcloud.hpp"

#include <cmath>

namespace dla {

void PointCloud::validate(int n_class) const {
    if (has_color() && color.size() != pos.size())
        throw DataError("point cloud: " + std::to_string(color.size()) + " colors for " +
                        std::to_string(pos.size()) + " points");
    if (has_label() && label.size() != pos.size())
        throw DataError("point cloud: " + std::to_string(label.size()) + " labels for " +
                        std::to_string(pos.size()) + " points");
    for (size_t i = 0; i < pos.size(); ++i)
        for (int a = 0; a < 3; ++a)
            if (!std::isfinite(pos[i][static_cast<size_t>(a)]))
                throw DataError("point cloud: non-finite coordinate at point " + std::to_string(i));
    if (has_label())
        for (size_t i = 0; i < label.size(); ++i)
            if (label[i] >= n_class)
                throw DataError("point cloud: label " + std::to_string(int(label[i])) +
                                " out of range [0," + std::to_string(n_class) + ") at point " +
                                std::to_string(i));
}

const std::array<std::string, 8>& ClassSchema::names() {
    static const std::array<std::string, 8> n = {"balustrade", "balcony", "advboard", "wall",
                                                 "eave",       "column",  "window",   "clutter"};
    return n;
}

const std::array<Rgb, 8>& ClassSchema::colormap() {
    static const std::array<Rgb, 8> c = {{{214, 39, 40},
                                          {255, 127, 14},
                                          {148, 103, 189},
                                          {127, 127, 127},
                                          {140, 86, 75},
                                          {31, 119, 180},
                                          {44, 160, 44},
                                          {188, 189, 34}}};
    return c;
}

int ClassSchema::id_of(const std::string& name) {
    const auto& ns = names();
    for (size_t i = 0; i < ns.size(); ++i)
        if (ns[i] == name) return static_cast<int>(i);
    return -1;
}

}  // namespace dla
