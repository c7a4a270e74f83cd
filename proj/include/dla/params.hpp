#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dla/rng.hpp"
#include "dla/tape.hpp"
#include "dla/tensor.hpp"

namespace dla {

// One learnable (or tracked, e.g. BN running stats) tensor with its Adam
// slots. Names are hierarchical, e.g. "enc0.pe.l1.w".
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    std::vector<T> adam_m, adam_v;
    bool trainable = true;
};

// Ordered registry of parameters. Creation order is the checkpoint order and
// the optimizer traversal order, so it must be deterministic.
template <class T>
class ParamStore {
public:
    Parameter<T>& create(const std::string& name, Shape shape, bool trainable = true) {
        if (index_.count(name)) throw Error("duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter<T>>();
        p->name = name;
        p->value = Tensor<T>(std::move(shape));
        p->adam_m.assign(static_cast<size_t>(p->value.numel()), T(0));
        p->adam_v.assign(static_cast<size_t>(p->value.numel()), T(0));
        p->trainable = trainable;
        items_.push_back(std::move(p));
        index_[name] = items_.size() - 1;
        return *items_.back();
    }

    Parameter<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }
    const Parameter<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }

    const std::vector<std::unique_ptr<Parameter<T>>>& items() const { return items_; }

    // Register every parameter as a tape leaf for the coming step.
    void begin_step(Tape<T>& tape) {
        for (auto& p : items_) p->value.node = tape.add_leaf();
    }
    void end_step() {
        for (auto& p : items_) p->value.node = -1;
    }

    int64_t total_values() const {
        int64_t n = 0;
        for (const auto& p : items_) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> items_;
    std::unordered_map<std::string, size_t> index_;
};

// Initialization: uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases,
// BN scale 1 / shift 0 / running mean 0 / running var 1.
template <class T>
void init_glorot(Parameter<T>& w, int64_t fan_in, int64_t fan_out, Prng& rng);

template <class T>
struct LinearParams {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;  // null for bias-free
};

template <class T>
struct BatchNormParams {
    Parameter<T>* scale = nullptr;
    Parameter<T>* shift = nullptr;
    Parameter<T>* running_mean = nullptr;  // non-trainable
    Parameter<T>* running_var = nullptr;   // non-trainable
};

template <class T>
LinearParams<T> make_linear(ParamStore<T>& store, const std::string& prefix, int64_t in,
                            int64_t out, bool bias, Prng& rng);

template <class T>
BatchNormParams<T> make_batch_norm(ParamStore<T>& store, const std::string& prefix, int64_t c);

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over every trainable parameter, gradients read from the
// consumed tape (parameters the loss never reached get zero gradient).
// t is the 1-based global step count.
template <class T>
void adam_step(ParamStore<T>& store, const Tape<T>& tape, const AdamConfig& cfg, int64_t t);

// Single-parameter variant with an explicit gradient.
template <class T>
void adam_step_one(Parameter<T>& p, const T* grad, const AdamConfig& cfg, int64_t t);

}  // namespace dla
