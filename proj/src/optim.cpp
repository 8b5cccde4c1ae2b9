#include "madi/optim.hpp"

#include <cmath>

namespace madi {

void Adam::step(ModelState& state, const GradMap& grads, double lr) {
    for (const auto& [name, g] : grads) {
        auto it = state.params.find(name);
        MADI_CHECK(it != state.params.end(), "grad for unknown tensor: " + name);
        MADI_CHECK(!it->second.frozen, "grad for frozen tensor: " + name);
        MADI_CHECK(g.dims == it->second.value.dims, "grad shape mismatch for: " + name);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    static const Tensor kEmpty;
    for (auto& [name, p] : state.params) {
        if (p.frozen) continue;
        auto git = grads.find(name);
        const Tensor& g = git == grads.end() ? kEmpty : git->second;
        Tensor& m = m_[name];
        Tensor& v = v_[name];
        if (m.v.empty()) m = Tensor(p.value.dims);
        if (v.v.empty()) v = Tensor(p.value.dims);
        const size_t n = p.value.size();
        for (size_t i = 0; i < n; ++i) {
            const double gi = g.v.empty() ? 0.0 : g.v[i];
            m.v[i] = beta1 * m.v[i] + (1.0 - beta1) * gi;
            v.v[i] = beta2 * v.v[i] + (1.0 - beta2) * gi * gi;
            const double mhat = m.v[i] / bc1;
            const double vhat = v.v[i] / bc2;
            p.value.v[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.value.v[i]);
        }
    }
}

}  // namespace madi
