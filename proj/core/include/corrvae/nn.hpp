#pragma once

#include <string>
#include <vector>

#include "corrvae/rng.hpp"
#include "corrvae/tensor.hpp"

namespace corrvae {

enum class Act { Relu, Tanh, None };

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear init(std::size_t in, std::size_t out, Rng& rng, double weight_scale);
    static Linear zeros(std::size_t in, std::size_t out);

    Tensor forward(const Tensor& x) const;  // x [B,in] -> [B,out]
};

/// Plain feed-forward stack; the final layer is linear (no activation).
struct Mlp {
    std::vector<Linear> layers;
    Act act = Act::Relu;

    /// Hidden layers at `hidden` width; the output layer is zero-initialized
    /// so fresh nets start at the origin.
    static Mlp make(std::size_t in, std::vector<std::size_t> hidden, std::size_t out, Act act,
                    Rng& rng, bool zero_output = true);

    Tensor forward(const Tensor& x) const;
    std::size_t in_dim() const { return layers.front().weight.dim(0); }
    std::size_t out_dim() const { return layers.back().weight.dim(1); }
};

/// Named views over trainable leaves; the registry is what the optimizer
/// walks and what checkpoints serialize.
struct ParamRegistry {
    std::vector<std::pair<std::string, Tensor>> entries;

    void add(const std::string& name, const Tensor& t) { entries.emplace_back(name, t); }
    void add_linear(const std::string& prefix, const Linear& l);
    void add_mlp(const std::string& prefix, const Mlp& m);
    std::vector<Tensor> tensors() const;
    Tensor find(const std::string& name) const;
};

}  // namespace corrvae
