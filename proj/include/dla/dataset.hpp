#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dla/pointcloud.hpp"
#include "dla/rng.hpp"

namespace dla {

// File formats.
//
// fpc_text v1: header "FPC 1 <count> <has_color 0|1> <has_label 0|1>",
// then one point per line: "x y z [r g b] [label]".
//
// fpc_bin v1: magic "FPC1" | u16 version=1 | u8 flags (bit0 color, bit1
// label) | u64 count | packed little-endian records of 3 f64 positions,
// 3 u8 colors when flagged, u8 label when flagged. Round-trips bit-exactly.
//
// ply_ascii: "element vertex N" with x,y,z float and red,green,blue uchar;
// export colors points by the predicted-label colormap.

enum class CloudFormat { fpc_text, fpc_bin, ply_ascii };

CloudFormat format_from_string(const std::string& s);
CloudFormat sniff_format(const std::string& path);  // by magic/header

PointCloud load_cloud(const std::string& path, CloudFormat format);
void save_cloud(const PointCloud& cloud, const std::string& path, CloudFormat format);

// Named labeled areas; default layout <root>/Area<i>/*.fpc.
struct AreaSet {
    std::vector<std::string> names;
    std::vector<PointCloud> clouds;

    int find(const std::string& name) const;
    int64_t size() const { return static_cast<int64_t>(names.size()); }
};

AreaSet load_areas(const std::string& root);

struct Split {
    std::vector<int> train;
    std::vector<int> test;
};

// "leave_one_out:<AreaName>" -> one split; "kfold6" -> one split per area.
std::vector<Split> make_splits(const AreaSet& areas, const std::string& mode);

// Per-area, per-class point counts plus totals.
struct ClassStats {
    std::vector<std::string> area_names;
    std::vector<std::array<int64_t, ClassSchema::n_class>> per_area;
    std::array<int64_t, ClassSchema::n_class> totals{};
    int64_t grand_total = 0;
};

ClassStats class_stats(const AreaSet& areas);

// Synthetic facade scene: wall plane with recessed windows, protruding
// balconies topped by balustrades, columns carrying advertising boards, an
// eave strip along the top, and clutter blobs. Deterministic per seed.
struct SceneSpec {
    double width = 15.0;        // facade extent in x (meters)
    double height = 12.0;       // facade extent in y
    double x_offset = 0.0;      // global translation along the street
    int floors = 3;
    int window_cols = 5;
    int columns = 5;
    double noise = 0.01;        // surface sampling jitter (meters)
    int color_noise = 8;        // per-point color jitter
    int clutter_blobs = 10;
    // Target share of points per class, ClassSchema order.
    std::array<double, ClassSchema::n_class> class_share = {0.04, 0.08, 0.10, 0.30,
                                                            0.06, 0.20, 0.17, 0.05};
};

PointCloud generate_synthetic_facade(uint64_t seed, int64_t n_points,
                                     const std::optional<SceneSpec>& spec = std::nullopt);

// Area variant: derives per-area scene parameters (size, grid, translation
// along the street) from the seed so areas differ but share class geometry.
PointCloud generate_synthetic_area(uint64_t base_seed, int area_index, int64_t n_points);

}  // namespace dla
