#include "dla/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace dla {

namespace {

constexpr char kMagic[4] = {'D', 'L', 'A', 'W'};

template <class U>
void put(std::string& out, U v) {
    for (size_t i = 0; i < sizeof(U); ++i)
        out.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put(out, bits);
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put(out, bits);
}

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw DataError("cannot open checkpoint: " + path);
    }
    template <class U>
    U get() {
        unsigned char buf[sizeof(U)];
        read(buf, sizeof(U));
        uint64_t v = 0;
        for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
        return static_cast<U>(v);
    }
    float get_f32() {
        const uint32_t bits = get<uint32_t>();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double get_f64() {
        const uint64_t bits = get<uint64_t>();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void read(void* dst, size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n)
            throw DataError("truncated checkpoint: " + path_);
    }

private:
    std::ifstream in_;
    std::string path_;
};

template <class T>
constexpr uint8_t dtype_tag() {
    return sizeof(T) == 4 ? 0 : 1;
}

template <class T>
void write_record(std::string& out, const std::string& name, const Shape& shape, const T* values,
                  int64_t count) {
    if (name.size() > 0xffff) throw Error("parameter name too long: " + name);
    put(out, static_cast<uint16_t>(name.size()));
    out.append(name);
    put(out, dtype_tag<T>());
    put(out, static_cast<uint8_t>(shape.size()));
    for (int64_t d : shape) put(out, static_cast<uint64_t>(d));
    for (int64_t i = 0; i < count; ++i) {
        if constexpr (sizeof(T) == 4)
            put_f32(out, static_cast<float>(values[i]));
        else
            put_f64(out, static_cast<double>(values[i]));
    }
}

void write_u64_record(std::string& out, const std::string& name, uint64_t v) {
    put(out, static_cast<uint16_t>(name.size()));
    out.append(name);
    put(out, static_cast<uint8_t>(2));
    put(out, static_cast<uint8_t>(0));  // rank 0: one value
    put(out, v);
}

struct RecordHead {
    std::string name;
    uint8_t dtype = 0;
    Shape shape;
    int64_t count = 1;
};

RecordHead read_head(Reader& r) {
    RecordHead h;
    const uint16_t len = r.get<uint16_t>();
    h.name.resize(len);
    if (len) r.read(h.name.data(), len);
    h.dtype = r.get<uint8_t>();
    const uint8_t rank = r.get<uint8_t>();
    for (int i = 0; i < rank; ++i) {
        const uint64_t d = r.get<uint64_t>();
        h.shape.push_back(static_cast<int64_t>(d));
        h.count *= static_cast<int64_t>(d);
    }
    return h;
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const CheckpointMeta& meta) {
    std::string out;
    out.append(kMagic, 4);
    put(out, kCheckpointVersion);
    put(out, static_cast<uint32_t>(store.items().size()));
    for (const auto& p : store.items())
        write_record(out, p->name, p->value.shape, p->value.ptr(), p->value.numel());

    uint32_t n_state = 2;  // #step, #epoch
    for (const auto& p : store.items())
        if (p->trainable) n_state += 2;
    put(out, n_state);
    for (const auto& p : store.items()) {
        if (!p->trainable) continue;
        write_record(out, p->name + "#m", p->value.shape, p->adam_m.data(), p->value.numel());
        write_record(out, p->name + "#v", p->value.shape, p->adam_v.data(), p->value.numel());
    }
    write_u64_record(out, "#step", meta.step);
    write_u64_record(out, "#epoch", meta.epoch);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write on checkpoint: " + path);
}

template <class T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<T>& store) {
    Reader r(path);
    char magic[4];
    r.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad checkpoint magic in " + path);
    const uint32_t version = r.get<uint32_t>();
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);

    const uint32_t n_params = r.get<uint32_t>();
    if (n_params != store.items().size())
        throw ShapeError("checkpoint has " + std::to_string(n_params) + " parameters, model has " +
                         std::to_string(store.items().size()));
    size_t seen = 0;
    for (uint32_t i = 0; i < n_params; ++i) {
        RecordHead h = read_head(r);
        Parameter<T>* p = store.find(h.name);
        if (!p) throw ShapeError("checkpoint parameter not in model: " + h.name);
        if (h.dtype != dtype_tag<T>())
            throw ShapeError("checkpoint dtype mismatch for " + h.name);
        if (h.shape != p->value.shape)
            throw ShapeError("checkpoint shape " + shape_str(h.shape) + " vs model " +
                             shape_str(p->value.shape) + " for " + h.name);
        for (int64_t j = 0; j < h.count; ++j)
            p->value.ptr()[j] = sizeof(T) == 4 ? static_cast<T>(r.get_f32()) : static_cast<T>(r.get_f64());
        ++seen;
    }
    (void)seen;

    CheckpointMeta meta;
    const uint32_t n_state = r.get<uint32_t>();
    for (uint32_t i = 0; i < n_state; ++i) {
        RecordHead h = read_head(r);
        if (h.dtype == 2) {
            const uint64_t v = r.get<uint64_t>();
            if (h.name == "#step")
                meta.step = v;
            else if (h.name == "#epoch")
                meta.epoch = v;
            else
                throw DataError("unknown u64 state record '" + h.name + "' in " + path);
            continue;
        }
        if (h.dtype != dtype_tag<T>())
            throw ShapeError("checkpoint dtype mismatch for state record " + h.name);
        const auto hash_pos = h.name.rfind('#');
        if (hash_pos == std::string::npos)
            throw DataError("malformed state record name '" + h.name + "' in " + path);
        const std::string base = h.name.substr(0, hash_pos);
        const std::string kind = h.name.substr(hash_pos + 1);
        Parameter<T>* p = store.find(base);
        if (!p) throw ShapeError("checkpoint state for unknown parameter: " + h.name);
        if (h.shape != p->value.shape)
            throw ShapeError("checkpoint state shape mismatch for " + h.name);
        std::vector<T>& slot = kind == "m" ? p->adam_m : p->adam_v;
        if (kind != "m" && kind != "v")
            throw DataError("unknown state kind '" + kind + "' in " + path);
        for (int64_t j = 0; j < h.count; ++j)
            slot[static_cast<size_t>(j)] =
                sizeof(T) == 4 ? static_cast<T>(r.get_f32()) : static_cast<T>(r.get_f64());
    }
    return meta;
}

int checkpoint_dtype(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad checkpoint magic in " + path);
    const uint32_t version = r.get<uint32_t>();
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    const uint32_t n_params = r.get<uint32_t>();
    if (n_params == 0) throw DataError("empty checkpoint: " + path);
    RecordHead h = read_head(r);
    if (h.dtype > 1) throw DataError("unexpected dtype tag in first record of " + path);
    return h.dtype;
}

template void save_checkpoint<float>(const std::string&, const ParamStore<float>&, const CheckpointMeta&);
template void save_checkpoint<double>(const std::string&, const ParamStore<double>&, const CheckpointMeta&);
template CheckpointMeta load_checkpoint<float>(const std::string&, ParamStore<float>&);
template CheckpointMeta load_checkpoint<double>(const std::string&, ParamStore<double>&);

}  // namespace dla
