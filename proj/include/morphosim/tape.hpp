#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "morphosim/error.hpp"
#include "morphosim/tensor.hpp"

namespace morphosim {

// Reverse-mode tape. Values are created in topological order by construction;
// backward() replays the recorded nodes once, in reverse creation order.
//
// Leaves may alias external tensors (parameters) so that building a graph
// never copies the parameter set. Gradients are materialized lazily: a node
// whose outputs were never differentiated skips its backward work entirely.
template <typename T>
class Tape {
public:
    using Id = int32_t;

    explicit Tape(bool recording = true) : recording(recording) {}

    bool recording;

    // Owned value.
    Id put(Tensor<T> t) {
        values_.push_back(Slot{std::move(t), nullptr});
        grads_.emplace_back(nullptr);
        return static_cast<Id>(values_.size() - 1);
    }

    // Aliased external value (parameter leaf). The pointee must outlive the tape.
    Id leaf(const Tensor<T>* external) {
        values_.push_back(Slot{Tensor<T>{}, external});
        grads_.emplace_back(nullptr);
        return static_cast<Id>(values_.size() - 1);
    }

    const Tensor<T>& val(Id i) const {
        const Slot& s = values_[static_cast<size_t>(i)];
        return s.ref ? *s.ref : s.own;
    }

    // Gradient buffer, zero-initialized on first use.
    Tensor<T>& grad(Id i) {
        auto& g = grads_[static_cast<size_t>(i)];
        if (!g) g = std::make_unique<Tensor<T>>(val(i).shape);
        return *g;
    }

    // Gradient buffer if it was ever touched, else nullptr.
    Tensor<T>* grad_if(Id i) { return grads_[static_cast<size_t>(i)].get(); }

    void record(std::function<void(Tape&)> back) {
        if (recording) nodes_.push_back(std::move(back));
    }

    void backward(Id loss) {
        if (!recording) throw ContractError("backward: tape was built in no-grad mode");
        if (val(loss).numel() != 1) throw ContractError("backward: loss must be a scalar");
        grad(loss)[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
    }

    // Drop all values and nodes but keep vector capacity for reuse.
    void reset() {
        values_.clear();
        grads_.clear();
        nodes_.clear();
    }

    size_t size() const { return values_.size(); }
    size_t node_count() const { return nodes_.size(); }

private:
    struct Slot {
        Tensor<T> own;
        const Tensor<T>* ref;
    };
    std::vector<Slot> values_;
    std::vector<std::unique_ptr<Tensor<T>>> grads_;
    std::vector<std::function<void(Tape&)>> nodes_;
};

}  // namespace morphosim
