#include "locinv/optimizer.hpp"

#include <cmath>

#include "locinv/errors.hpp"

namespace locinv {

void Adam::step(const std::vector<ag::Var>& params) {
    for (const auto& p : params) {
        ag::Node* n = p.node().get();
        if (!n->requires_grad) continue;
        n->ensure_grad();
        State& st = state_[n];
        if (st.m.shape != n->value.shape) {
            st.m = Tensor(n->value.shape, 0.0);
            st.v = Tensor(n->value.shape, 0.0);
            st.t = 0;
        }
        st.t += 1;
        scalar_t bc1 = 1.0 - std::pow(beta1_, static_cast<scalar_t>(st.t));
        scalar_t bc2 = 1.0 - std::pow(beta2_, static_cast<scalar_t>(st.t));
        for (int64_t i = 0; i < n->value.numel(); ++i) {
            scalar_t g = n->grad[i];
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in optimizer step");
            st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
            st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
            scalar_t mhat = st.m[i] / bc1;
            scalar_t vhat = st.v[i] / bc2;
            n->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad(const std::vector<ag::Var>& params) {
    for (const auto& p : params) p.node()->grad = Tensor(p.value().shape, 0.0);
}

}  // namespace locinv
