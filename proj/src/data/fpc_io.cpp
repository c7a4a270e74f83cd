#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dla/dataset.hpp"

namespace dla {

namespace {

constexpr char kBinMagic[4] = {'F', 'P', 'C', '1'};

[[noreturn]] void parse_error(const std::string& path, int64_t line, const std::string& what) {
    throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

PointCloud load_fpc_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) parse_error(path, 1, "missing header");
    std::istringstream hs(header);
    std::string tag;
    int version = 0, has_color = -1, has_label = -1;
    int64_t count = -1;
    hs >> tag >> version >> count >> has_color >> has_label;
    if (hs.fail() || tag != "FPC")
        parse_error(path, 1, "malformed header, expected 'FPC 1 <count> <has_color> <has_label>'");
    if (version != 1) parse_error(path, 1, "unsupported fpc version " + std::to_string(version));
    if (count < 0) parse_error(path, 1, "negative point count");
    if (has_color != 0 && has_color != 1) parse_error(path, 1, "has_color must be 0 or 1");
    if (has_label != 0 && has_label != 1) parse_error(path, 1, "has_label must be 0 or 1");

    PointCloud cloud;
    cloud.pos.reserve(static_cast<size_t>(count));
    std::string line;
    for (int64_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) parse_error(path, i + 2, "unexpected end of file");
        std::istringstream ls(line);
        Vec3 p;
        ls >> p[0] >> p[1] >> p[2];
        if (ls.fail()) parse_error(path, i + 2, "expected 'x y z'");
        cloud.pos.push_back(p);
        if (has_color) {
            int r, g, b;
            ls >> r >> g >> b;
            if (ls.fail()) parse_error(path, i + 2, "expected 'r g b'");
            for (int v : {r, g, b})
                if (v < 0 || v > 255) parse_error(path, i + 2, "color out of range [0,255]");
            cloud.color.push_back({static_cast<uint8_t>(r), static_cast<uint8_t>(g),
                                   static_cast<uint8_t>(b)});
        }
        if (has_label) {
            int lab;
            ls >> lab;
            if (ls.fail()) parse_error(path, i + 2, "expected label");
            if (lab < 0 || lab >= ClassSchema::n_class)
                parse_error(path, i + 2, "label " + std::to_string(lab) + " out of range [0," +
                                             std::to_string(ClassSchema::n_class) + ")");
            cloud.label.push_back(static_cast<uint8_t>(lab));
        }
    }
    return cloud;
}

void save_fpc_text(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    char buf[192];
    std::snprintf(buf, sizeof buf, "FPC 1 %" PRId64 " %d %d\n", cloud.size(),
                  cloud.has_color() ? 1 : 0, cloud.has_label() ? 1 : 0);
    out << buf;
    for (int64_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.pos[static_cast<size_t>(i)];
        int len = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", p[0], p[1], p[2]);
        if (cloud.has_color()) {
            const Rgb& c = cloud.color[static_cast<size_t>(i)];
            len += std::snprintf(buf + len, sizeof buf - len, " %d %d %d", c[0], c[1], c[2]);
        }
        if (cloud.has_label())
            len += std::snprintf(buf + len, sizeof buf - len, " %d",
                                 static_cast<int>(cloud.label[static_cast<size_t>(i)]));
        buf[len] = '\n';
        out.write(buf, len + 1);
    }
    if (!out) throw DataError("short write on " + path);
}

PointCloud load_fpc_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    auto read = [&](void* dst, size_t n, const char* what) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw DataError(path + ": truncated while reading " + std::string(what) + " (offset " +
                            std::to_string(static_cast<int64_t>(in.tellg())) + ")");
    };
    char magic[4];
    read(magic, 4, "magic");
    if (std::memcmp(magic, kBinMagic, 4) != 0) throw DataError(path + ": bad fpc_bin magic");
    unsigned char vbuf[2];
    read(vbuf, 2, "version");
    const uint16_t version = static_cast<uint16_t>(vbuf[0] | (vbuf[1] << 8));
    if (version != 1) throw DataError(path + ": unsupported fpc_bin version " + std::to_string(version));
    uint8_t flags;
    read(&flags, 1, "flags");
    if (flags & ~0x03u) throw DataError(path + ": unknown flag bits");
    unsigned char cbuf[8];
    read(cbuf, 8, "count");
    uint64_t count = 0;
    for (int i = 0; i < 8; ++i) count |= static_cast<uint64_t>(cbuf[i]) << (8 * i);

    const bool has_color = flags & 0x01, has_label = flags & 0x02;
    PointCloud cloud;
    cloud.pos.resize(count);
    if (has_color) cloud.color.resize(count);
    if (has_label) cloud.label.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
        unsigned char rec[24];
        read(rec, 24, "positions");
        for (int a = 0; a < 3; ++a) {
            uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(rec[a * 8 + b]) << (8 * b);
            double v;
            std::memcpy(&v, &bits, 8);
            cloud.pos[i][static_cast<size_t>(a)] = v;
        }
        if (has_color) read(cloud.color[i].data(), 3, "colors");
        if (has_label) {
            read(&cloud.label[i], 1, "labels");
            if (cloud.label[i] >= ClassSchema::n_class)
                throw DataError(path + ": label out of range at point " + std::to_string(i));
        }
    }
    return cloud;
}

void save_fpc_bin(const PointCloud& cloud, const std::string& path) {
    std::string out;
    out.append(kBinMagic, 4);
    out.push_back(1);
    out.push_back(0);  // u16 version = 1, little-endian
    const uint8_t flags = (cloud.has_color() ? 1 : 0) | (cloud.has_label() ? 2 : 0);
    out.push_back(static_cast<char>(flags));
    const uint64_t count = static_cast<uint64_t>(cloud.size());
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((count >> (8 * i)) & 0xff));
    for (int64_t i = 0; i < cloud.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            uint64_t bits;
            std::memcpy(&bits, &cloud.pos[static_cast<size_t>(i)][static_cast<size_t>(a)], 8);
            for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
        if (cloud.has_color())
            out.append(reinterpret_cast<const char*>(cloud.color[static_cast<size_t>(i)].data()), 3);
        if (cloud.has_label()) out.push_back(static_cast<char>(cloud.label[static_cast<size_t>(i)]));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write on " + path);
}

PointCloud load_ply_ascii(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    int64_t line_no = 0, count = -1;
    bool in_header = true;
    std::vector<std::string> props;
    while (in_header && std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line != "ply") parse_error(path, 1, "not a ply file");
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "element") {
            std::string what;
            ls >> what >> count;
            if (what != "vertex") parse_error(path, line_no, "only 'element vertex' is supported");
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            props.push_back(name);
        } else if (word == "end_header") {
            in_header = false;
        }
    }
    if (in_header) parse_error(path, line_no, "missing end_header");
    if (count < 0) parse_error(path, line_no, "missing vertex element");
    const bool has_color = std::find(props.begin(), props.end(), "red") != props.end();

    PointCloud cloud;
    cloud.pos.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) parse_error(path, line_no + i + 1, "unexpected end of file");
        std::istringstream ls(line);
        Vec3 p;
        ls >> p[0] >> p[1] >> p[2];
        if (ls.fail()) parse_error(path, line_no + i + 1, "expected 'x y z'");
        cloud.pos.push_back(p);
        if (has_color) {
            int r, g, b;
            ls >> r >> g >> b;
            if (ls.fail()) parse_error(path, line_no + i + 1, "expected colors");
            cloud.color.push_back({static_cast<uint8_t>(r), static_cast<uint8_t>(g),
                                   static_cast<uint8_t>(b)});
        }
    }
    return cloud;
}

void save_ply_ascii(const PointCloud& cloud, const std::string& path) {
    if (!cloud.has_label())
        throw DataError("ply export colors by label but the cloud has no labels");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << cloud.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    const auto& cmap = ClassSchema::colormap();
    char buf[128];
    for (int64_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.pos[static_cast<size_t>(i)];
        const Rgb& c = cmap[cloud.label[static_cast<size_t>(i)]];
        const int len = std::snprintf(buf, sizeof buf, "%g %g %g %d %d %d\n",
                                      static_cast<float>(p[0]), static_cast<float>(p[1]),
                                      static_cast<float>(p[2]), c[0], c[1], c[2]);
        out.write(buf, len);
    }
    if (!out) throw DataError("short write on " + path);
}

}  // namespace

CloudFormat format_from_string(const std::string& s) {
    if (s == "fpc_text") return CloudFormat::fpc_text;
    if (s == "fpc_bin") return CloudFormat::fpc_bin;
    if (s == "ply_ascii" || s == "ply") return CloudFormat::ply_ascii;
    throw ConfigError("unknown cloud format '" + s + "'; allowed: fpc_text, fpc_bin, ply_ascii");
}

CloudFormat sniff_format(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char head[4] = {};
    in.read(head, 4);
    if (std::memcmp(head, kBinMagic, 4) == 0) return CloudFormat::fpc_bin;
    if (std::memcmp(head, "FPC ", 4) == 0) return CloudFormat::fpc_text;
    if (std::memcmp(head, "ply", 3) == 0) return CloudFormat::ply_ascii;
    throw DataError(path + ": unrecognized point cloud format");
}

PointCloud load_cloud(const std::string& path, CloudFormat format) {
    PointCloud cloud;
    switch (format) {
        case CloudFormat::fpc_text: cloud = load_fpc_text(path); break;
        case CloudFormat::fpc_bin: cloud = load_fpc_bin(path); break;
        case CloudFormat::ply_ascii: cloud = load_ply_ascii(path); break;
    }
    cloud.validate(ClassSchema::n_class);
    return cloud;
}

void save_cloud(const PointCloud& cloud, const std::string& path, CloudFormat format) {
    switch (format) {
        case CloudFormat::fpc_text: save_fpc_text(cloud, path); return;
        case CloudFormat::fpc_bin: save_fpc_bin(cloud, path); return;
        case CloudFormat::ply_ascii: save_ply_ascii(cloud, path); return;
    }
}

AreaSet load_areas(const std::string& root) {
    namespace fs = std::filesystem;
    AreaSet set;
    if (!fs::is_directory(root)) throw DataError("area root is not a directory: " + root);
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && entry.path().filename().string().rfind("Area", 0) == 0)
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw DataError("no Area<i> directories under " + root);
    for (const auto& dir : dirs) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().extension() == ".fpc")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no .fpc files under " + dir.string());
        PointCloud merged;
        for (const auto& f : files) {
            PointCloud part = load_cloud(f.string(), sniff_format(f.string()));
            if (!part.has_label()) throw DataError(f.string() + ": area clouds must carry labels");
            merged.pos.insert(merged.pos.end(), part.pos.begin(), part.pos.end());
            if (part.has_color())
                merged.color.insert(merged.color.end(), part.color.begin(), part.color.end());
            merged.label.insert(merged.label.end(), part.label.begin(), part.label.end());
        }
        merged.validate(ClassSchema::n_class);
        set.names.push_back(dir.filename().string());
        set.clouds.push_back(std::move(merged));
    }
    return set;
}

int AreaSet::find(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

std::vector<Split> make_splits(const AreaSet& areas, const std::string& mode) {
    if (areas.size() < 2) throw DataError("need at least 2 areas to split");
    std::vector<Split> splits;
    auto full_minus = [&](int test) {
        Split s;
        s.test.push_back(test);
        for (int i = 0; i < areas.size(); ++i)
            if (i != test) s.train.push_back(i);
        return s;
    };
    if (mode.rfind("leave_one_out:", 0) == 0) {
        const std::string name = mode.substr(std::strlen("leave_one_out:"));
        const int idx = areas.find(name);
        if (idx < 0) throw ConfigError("unknown area '" + name + "' in split mode");
        splits.push_back(full_minus(idx));
    } else if (mode == "kfold6" || mode == "kfold") {
        for (int i = 0; i < areas.size(); ++i) splits.push_back(full_minus(i));
    } else {
        throw ConfigError("unknown split mode '" + mode +
                          "'; allowed: leave_one_out:<Area>, kfold6");
    }
    return splits;
}

ClassStats class_stats(const AreaSet& areas) {
    ClassStats stats;
    for (int i = 0; i < areas.size(); ++i) {
        const PointCloud& cloud = areas.clouds[static_cast<size_t>(i)];
        if (!cloud.has_label()) throw DataError("class_stats: area without labels");
        std::array<int64_t, ClassSchema::n_class> row{};
        for (uint8_t lab : cloud.label) ++row[lab];
        stats.area_names.push_back(areas.names[static_cast<size_t>(i)]);
        stats.per_area.push_back(row);
        for (int c = 0; c < ClassSchema::n_class; ++c) stats.totals[static_cast<size_t>(c)] += row[static_cast<size_t>(c)];
        stats.grand_total += cloud.size();
    }
    return stats;
}

}  // namespace dla
