#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>

#include "mivae/diffcore/rng.hpp"
#include "mivae/diffcore/tape.hpp"
#include "mivae/diffcore/tensor.hpp"
#include "mivae/errors.hpp"

namespace mivae::diff {

struct NamedParameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

// Owns every trainable tensor of a model together with its gradient accumulator.
// Elements live in a deque so references stay valid while parameters are added.
class ParameterSet {
public:
    std::size_t add(std::string name, Tensor value) {
        if (index_.contains(name)) throw ContractError("parameter '" + name + "' registered twice");
        Tensor grad(value.shape(), 0.0);
        params_.push_back({name, std::move(value), std::move(grad)});
        index_.emplace(std::move(name), params_.size() - 1);
        return params_.size() - 1;
    }

    std::size_t size() const noexcept { return params_.size(); }
    NamedParameter& operator[](std::size_t i) { return params_[i]; }
    const NamedParameter& operator[](std::size_t i) const { return params_[i]; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad() {
        for (auto& p : params_) p.grad.fill(0.0);
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

private:
    std::deque<NamedParameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Binds parameters of a set onto one tape, each at most once.
class ParameterBinder {
public:
    // Training binding: gradients accumulate into the set's grad tensors.
    ParameterBinder(Tape& tape, ParameterSet& params) : tape_(tape), const_params_(params), params_(&params) {
        bound_.resize(params.size());
    }
    // Inference binding: parameters enter the tape as constants.
    ParameterBinder(Tape& tape, const ParameterSet& params) : tape_(tape), const_params_(params) {
        bound_.resize(params.size());
    }

    Var operator()(std::size_t index) {
        Var& slot = bound_.at(index);
        if (!slot.bound()) {
            Tensor* sink = params_ ? &(*params_)[index].grad : nullptr;
            slot = tape_.parameter(const_params_[index].value, sink);
        }
        return slot;
    }

    Tape& tape() noexcept { return tape_; }

private:
    Tape& tape_;
    const ParameterSet& const_params_;
    ParameterSet* params_ = nullptr;
    std::vector<Var> bound_;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w = Tensor::zeros(fan_in, fan_out);
    for (double& v : w.values()) v = (2.0 * rng.uniform() - 1.0) * a;
    return w;
}

} // namespace mivae::diff
