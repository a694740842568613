#include "corrvae/nn.hpp"

#include <cmath>

namespace corrvae {

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, double weight_scale) {
    std::vector<double> w(in * out);
    double s = weight_scale / std::sqrt(static_cast<double>(in));
    for (double& v : w) v = s * rng.normal();
    Linear l;
    l.weight = Tensor::from_data({in, out}, std::move(w), true);
    l.bias = Tensor::zeros({out}, true);
    return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
    Linear l;
    l.weight = Tensor::zeros({in, out}, true);
    l.bias = Tensor::zeros({out}, true);
    return l;
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

Mlp Mlp::make(std::size_t in, std::vector<std::size_t> hidden, std::size_t out, Act act, Rng& rng,
              bool zero_output) {
    Mlp m;
    m.act = act;
    std::size_t prev = in;
    for (std::size_t h : hidden) {
        m.layers.push_back(Linear::init(prev, h, rng, 1.0));
        prev = h;
    }
    m.layers.push_back(zero_output ? Linear::zeros(prev, out)
                                   : Linear::init(prev, out, rng, 1.0));
    return m;
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        if (i + 1 < layers.size()) {
            switch (act) {
                case Act::Relu: h = relu(h); break;
                case Act::Tanh: h = tanh(h); break;
                case Act::None: break;
            }
        }
    }
    return h;
}

void ParamRegistry::add_linear(const std::string& prefix, const Linear& l) {
    add(prefix + ".w", l.weight);
    add(prefix + ".b", l.bias);
}

void ParamRegistry::add_mlp(const std::string& prefix, const Mlp& m) {
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        add_linear(prefix + "." + std::to_string(i), m.layers[i]);
}

std::vector<Tensor> ParamRegistry::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries.size());
    for (const auto& [name, t] : entries) out.push_back(t);
    return out;
}

Tensor ParamRegistry::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return t;
    throw Error("no parameter named '" + name + "'");
}

}  // namespace corrvae
