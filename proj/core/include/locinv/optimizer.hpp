#pragma once

#include <unordered_map>
#include <vector>

#include "locinv/autograd.hpp"

namespace locinv {

// Adaptive-moment gradient descent. State is keyed on the leaf node, so the
// same leaves must be reused across iterations.
class Adam {
public:
    explicit Adam(scalar_t lr, scalar_t beta1 = 0.9, scalar_t beta2 = 0.999, scalar_t eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<ag::Var>& params);
    void zero_grad(const std::vector<ag::Var>& params);

private:
    struct State {
        Tensor m, v;
        int64_t t = 0;
    };
    scalar_t lr_, beta1_, beta2_, eps_;
    std::unordered_map<ag::Node*, State> state_;
};

}  // namespace locinv
