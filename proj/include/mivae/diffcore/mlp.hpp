#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mivae/diffcore/ops.hpp"
#include "mivae/diffcore/parameters.hpp"
#include "mivae/diffcore/rng.hpp"

namespace mivae::diff {

enum class Activation { none, relu, sigmoid };

inline Var activate(Var x, Activation act) {
    switch (act) {
    case Activation::none: return x;
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
    }
    return x;
}

// y = x W + b, with W [in x out] and b [1 x out] stored in a ParameterSet.
struct Linear {
    std::size_t weight = 0;
    std::size_t bias = 0;
    std::size_t in = 0;
    std::size_t out = 0;

    static Linear create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        Linear layer;
        layer.in = in;
        layer.out = out;
        layer.weight = params.add(name + ".weight", glorot_uniform(in, out, rng));
        layer.bias = params.add(name + ".bias", Tensor::zeros(1, out));
        return layer;
    }

    Var operator()(ParameterBinder& bind, Var x) const {
        return add_bias(matmul(x, bind(weight)), bind(bias));
    }
};

// Stack of affine layers with an activation between them; the last layer is
// affine-only unless an output activation is requested.
struct Mlp {
    std::vector<Linear> layers;

    // dims = {in, hidden..., out}
    static Mlp create(ParameterSet& params, const std::string& name, const std::vector<std::size_t>& dims, Rng& rng) {
        if (dims.size() < 2) throw ContractError("Mlp '" + name + "' needs at least input and output dimensions");
        Mlp mlp;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            mlp.layers.push_back(Linear::create(params, name + "." + std::to_string(i), dims[i], dims[i + 1], rng));
        }
        return mlp;
    }

    std::size_t input_dim() const { return layers.front().in; }
    std::size_t output_dim() const { return layers.back().out; }
};

// Forward pass of an affine/activation stack. Checks that the layer
// dimensions chain and that x has the expected width.
inline Var mlp_forward(ParameterBinder& bind, const Mlp& mlp, Var x, Activation hidden,
                       Activation output = Activation::none) {
    if (mlp.layers.empty()) throw ContractError("mlp_forward: no layers");
    if (x.cols() != mlp.layers.front().in) {
        throw DimensionError("mlp_forward: input width " + std::to_string(x.cols()) + " but first layer expects " +
                             std::to_string(mlp.layers.front().in));
    }
    Var h = x;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        const Linear& layer = mlp.layers[i];
        if (i > 0 && mlp.layers[i - 1].out != layer.in) {
            throw DimensionError("mlp_forward: layer " + std::to_string(i - 1) + " emits " +
                                 std::to_string(mlp.layers[i - 1].out) + " but layer " + std::to_string(i) +
                                 " expects " + std::to_string(layer.in));
        }
        h = layer(bind, h);
        h = activate(h, i + 1 < mlp.layers.size() ? hidden : output);
    }
    return h;
}

} // namespace mivae::diff
