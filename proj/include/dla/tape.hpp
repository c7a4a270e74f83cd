#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "dla/kernels.hpp"
#include "dla/rng.hpp"
#include "dla/tensor.hpp"

namespace dla {

// Records one training step's forward pass and replays it in reverse.
// Nodes are closures: each reads its own accumulated output gradient and adds
// contributions into its parents' accumulators. Recording order is the
// topological order, so one reverse sweep suffices.
template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

    int add_leaf() {
        nodes_.emplace_back();
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add_node(BackwardFn fn) {
        nodes_.push_back(std::move(fn));
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Sum a contribution into a node's gradient accumulator. node < 0 means
    // the producer is a constant; the contribution is dropped.
    void accumulate(int node, const Tensor<T>& g) {
        if (node < 0) return;
        auto& slot = grads_[static_cast<size_t>(node)];
        if (!slot) {
            Tensor<T> copy(g.shape);
            std::copy(g.ptr(), g.ptr() + g.numel(), copy.ptr());
            slot = std::move(copy);
        } else {
            if (!slot->same_shape(g))
                throw ShapeError("gradient shape mismatch: " + shape_str(slot->shape) + " vs " +
                                 shape_str(g.shape));
            kernels::table<T>().acc(slot->ptr(), g.ptr(), static_cast<size_t>(g.numel()));
        }
    }

    void backward(const Tensor<T>& loss) {
        if (consumed_)
            throw Error("tape already consumed by a previous backward(); reset() and re-run forward");
        if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape));
        if (loss.node < 0 || loss.node >= static_cast<int>(nodes_.size()))
            throw Error("loss tensor is not recorded on this tape");
        consumed_ = true;
        grads_[static_cast<size_t>(loss.node)] = Tensor<T>::full({1}, T(1));
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            auto& g = grads_[static_cast<size_t>(id)];
            if (g && nodes_[static_cast<size_t>(id)]) nodes_[static_cast<size_t>(id)](*this, *g);
        }
    }

    const Tensor<T>* grad(int node) const {
        if (node < 0 || node >= static_cast<int>(grads_.size())) return nullptr;
        const auto& g = grads_[static_cast<size_t>(node)];
        return g ? &*g : nullptr;
    }

    void reset() {
        nodes_.clear();
        grads_.clear();
        consumed_ = false;
    }

    bool consumed() const { return consumed_; }
    size_t size() const { return nodes_.size(); }

private:
    std::vector<BackwardFn> nodes_;
    std::vector<std::optional<Tensor<T>>> grads_;
    bool consumed_ = false;
};

// Everything an op needs to know about the surrounding pass.
template <class T>
struct Ctx {
    Tape<T>* tape = nullptr;   // null: inference, nothing recorded
    bool train = false;        // batch-norm batch statistics + dropout active
    bool update_stats = true;  // train mode may update BN running statistics
    Prng* rng = nullptr;       // consumed by dropout
    bool finite_checks = true; // validate op outputs for NaN/Inf

    bool recording() const { return tape != nullptr; }
};

}  // namespace dla
