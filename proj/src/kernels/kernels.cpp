#include "dla/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

#include "dla/errors.hpp"

namespace dla::kernels {

namespace {

const char* g_forced = nullptr;

const char* pick_name() {
    if (g_forced) return g_forced;
    if (const char* env = std::getenv("DLA_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return "scalar";
        if (std::strcmp(env, "avx2") == 0) return "avx2";
        throw ConfigError(std::string("DLA_KERNELS must be 'scalar' or 'avx2', got '") + env + "'");
    }
    return cpu_has_avx2() ? "avx2" : "scalar";
}

template <class T>
const Table<T>* resolve(const char* name) {
    if (std::strcmp(name, "avx2") == 0) {
        const Table<T>* t = avx2_table<T>();
        if (!t) throw ConfigError("AVX2 kernels requested but this CPU does not support AVX2");
        return t;
    }
    return &scalar_table<T>();
}

// The two dtype tables always agree on the selected variant.
struct Active {
    const Table<float>* f;
    const Table<double>* d;
    Active() {
        const char* name = pick_name();
        f = resolve<float>(name);
        d = resolve<double>(name);
    }
};

Active& active() {
    static Active a;
    return a;
}

}  // namespace

template <>
const Table<float>& table<float>() {
    return *active().f;
}

template <>
const Table<double>& table<double>() {
    return *active().d;
}

const char* active_name() { return active().f->name; }

void force(const char* name) {
    g_forced = name;
    active() = Active();
}

}  // namespace dla::kernels
