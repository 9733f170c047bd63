#pragma once

#include <map>
#include <string>
#include <vector>

#include "morphosim/error.hpp"
#include "morphosim/rng.hpp"
#include "morphosim/tensor.hpp"

namespace morphosim {

// One named parameter plus its gradient and per-parameter optimizer slots.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> acc_grad_sq;    // Adadelta E[g^2]
    Tensor<T> acc_update_sq;  // Adadelta E[dx^2]
};

template <typename T>
class ParamStore {
public:
    Param<T>& add(const std::string& name, Tensor<T> value) {
        if (index_.count(name)) throw ContractError("parameter already exists: " + name);
        index_[name] = params_.size();
        params_.push_back(Param<T>{name, std::move(value), {}, {}, {}});
        Param<T>& p = params_.back();
        p.grad = Tensor<T>(p.value.shape);
        p.acc_grad_sq = Tensor<T>(p.value.shape);
        p.acc_update_sq = Tensor<T>(p.value.shape);
        return p;
    }

    Param<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return params_[it->second];
    }
    const Param<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return params_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Param<T>>& all() { return params_; }
    const std::vector<Param<T>>& all() const { return params_; }
    size_t size() const { return params_.size(); }

    void zero_grads() {
        for (auto& p : params_) p.grad.fill(T(0));
    }

    int64_t value_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    // Fill every value with uniform(-scale, scale) draws in insertion order.
    void init_uniform(Rng& rng, double scale) {
        for (auto& p : params_)
            for (auto& v : p.value.data) v = static_cast<T>(rng.uniform(-scale, scale));
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& p : params_) {
            auto& q = out.add(p.name, p.value.template cast<U>());
            q.acc_grad_sq = p.acc_grad_sq.template cast<U>();
            q.acc_update_sq = p.acc_update_sq.template cast<U>();
        }
        return out;
    }

private:
    std::vector<Param<T>> params_;
    std::map<std::string, size_t> index_;
};

}  // namespace morphosim
