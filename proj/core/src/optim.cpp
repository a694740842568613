#include "corrvae/optim.hpp"

#include <cmath>

namespace corrvae {

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].size(), 0.0);
        v_[i].assign(params_[i].size(), 0.0);
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        const auto& g = params_[p].grad();
        if (g.empty()) continue;  // parameter unused this step
        auto& x = params_[p].mutable_values();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            x[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace corrvae
