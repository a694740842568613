#pragma once

#include <vector>

#include "corrvae/tensor.hpp"

namespace corrvae {

/// Adam over a fixed list of leaf tensors. step() consumes the gradients
/// currently accumulated on the parameters; the caller zeroes them.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
};

}  // namespace corrvae
