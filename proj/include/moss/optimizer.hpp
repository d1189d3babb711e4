#pragma once

#include <vector>

#include "moss/autodiff.hpp"

namespace moss {

/// SGD with classical momentum: v <- mu*v + g; w <- w - lr*v.
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void step(std::vector<ad::Var>& params) {
        if (velocity_.empty())
            for (const auto& p : params) velocity_.push_back(Tensor::zeros(p.value().shape()));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& w = params[i].mutable_value();
            const Tensor& g = params[i].grad();
            Tensor& v = velocity_[i];
            for (size_t j = 0; j < w.numel(); ++j) {
                v[j] = momentum_ * v[j] + g[j];
                w[j] -= lr_ * v[j];
            }
        }
    }

    static void zero_grads(std::vector<ad::Var>& params) {
        for (auto& p : params) p.zero_grad();
    }

private:
    double lr_;
    double momentum_;
    std::vector<Tensor> velocity_;
};

}  // namespace moss
