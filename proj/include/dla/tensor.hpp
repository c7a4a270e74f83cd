#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "dla/errors.hpp"

namespace dla {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

// Dense n-d array of float or double. Copies are shallow; the buffer of a
// tensor produced by an op is treated as immutable from then on. `node` links
// the tensor into the active tape (-1 = constant, no gradient).
template <class T>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    int node = -1;

    Tensor() : data(std::make_shared<std::vector<T>>()) {}
    explicit Tensor(Shape s)
        : shape(std::move(s)), data(std::make_shared<std::vector<T>>(shape_numel(shape))) {
        check_dims();
    }
    Tensor(Shape s, std::vector<T> values)
        : shape(std::move(s)), data(std::make_shared<std::vector<T>>(std::move(values))) {
        check_dims();
        if (shape_numel(shape) != static_cast<int64_t>(data->size()))
            throw ShapeError("tensor values length " + std::to_string(data->size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        for (auto& x : *t.data) x = v;
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data->size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape));
        return (*data)[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

private:
    void check_dims() const {
        for (int64_t d : shape)
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    }
};

}  // namespace dla
