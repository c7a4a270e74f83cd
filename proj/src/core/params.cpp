#include "dla/params.hpp"

#include <cmath>

#include "dla/kernels.hpp"

namespace dla {

template <class T>
void init_glorot(Parameter<T>& w, int64_t fan_in, int64_t fan_out, Prng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : *w.value.data) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <class T>
LinearParams<T> make_linear(ParamStore<T>& store, const std::string& prefix, int64_t in,
                            int64_t out, bool bias, Prng& rng) {
    LinearParams<T> lp;
    lp.w = &store.create(prefix + ".w", {in, out});
    init_glorot(*lp.w, in, out, rng);
    if (bias) lp.b = &store.create(prefix + ".b", {out});
    return lp;
}

template <class T>
BatchNormParams<T> make_batch_norm(ParamStore<T>& store, const std::string& prefix, int64_t c) {
    BatchNormParams<T> bn;
    bn.scale = &store.create(prefix + ".scale", {c});
    for (auto& v : *bn.scale->value.data) v = T(1);
    bn.shift = &store.create(prefix + ".shift", {c});
    bn.running_mean = &store.create(prefix + ".running_mean", {c}, /*trainable=*/false);
    bn.running_var = &store.create(prefix + ".running_var", {c}, /*trainable=*/false);
    for (auto& v : *bn.running_var->value.data) v = T(1);
    return bn;
}

template <class T>
void adam_step_one(Parameter<T>& p, const T* grad, const AdamConfig& cfg, int64_t t) {
    if (t < 1) throw Error("adam_step: step count must be >= 1");
    const size_t n = static_cast<size_t>(p.value.numel());
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
    kernels::table<T>().adam(p.value.ptr(), p.adam_m.data(), p.adam_v.data(), grad, n,
                             static_cast<T>(cfg.lr), static_cast<T>(cfg.beta1),
                             static_cast<T>(cfg.beta2), static_cast<T>(cfg.eps), bc1, bc2);
}

template <class T>
void adam_step(ParamStore<T>& store, const Tape<T>& tape, const AdamConfig& cfg, int64_t t) {
    std::vector<T> zeros;
    for (const auto& p : store.items()) {
        if (!p->trainable) continue;
        const Tensor<T>* g = tape.grad(p->value.node);
        if (g) {
            if (!g->same_shape(p->value))
                throw ShapeError("adam_step: gradient shape " + shape_str(g->shape) +
                                 " vs parameter " + p->name + " " + shape_str(p->value.shape));
            if (kernels::table<T>().any_nonfinite(g->ptr(), static_cast<size_t>(g->numel())))
                throw NumericalError("adam_step: non-finite gradient for " + p->name);
            adam_step_one(*p, g->ptr(), cfg, t);
        } else {
            if (zeros.size() < static_cast<size_t>(p->value.numel()))
                zeros.assign(static_cast<size_t>(p->value.numel()), T(0));
            adam_step_one(*p, zeros.data(), cfg, t);
        }
    }
}

#define DLA_INSTANTIATE_PARAMS(T)                                                              \
    template void init_glorot<T>(Parameter<T>&, int64_t, int64_t, Prng&);                      \
    template LinearParams<T> make_linear<T>(ParamStore<T>&, const std::string&, int64_t,       \
                                            int64_t, bool, Prng&);                             \
    template BatchNormParams<T> make_batch_norm<T>(ParamStore<T>&, const std::string&, int64_t); \
    template void adam_step_one<T>(Parameter<T>&, const T*, const AdamConfig&, int64_t);       \
    template void adam_step<T>(ParamStore<T>&, const Tape<T>&, const AdamConfig&, int64_t);

DLA_INSTANTIATE_PARAMS(float)
DLA_INSTANTIATE_PARAMS(double)

}  // namespace dla
