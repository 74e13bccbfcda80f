#include "methylgraph/adam.hpp"

#include <cmath>
#include <string>

#include "methylgraph/error.hpp"

namespace methylgraph {

AdamState AdamState::for_params(std::span<const ParamRef> params) {
    AdamState s;
    for (const ParamRef& p : params) {
        s.m.emplace_back(p.values.size(), 0.0);
        s.v.emplace_back(p.values.size(), 0.0);
    }
    return s;
}

void adam_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads, AdamState& state,
               double lr, double weight_decay) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
        throw ShapeError("adam_step: parameter, gradient and moment lists differ in length");
    }
    if (!(lr >= 0.0)) throw InputError("adam_step: learning rate must be non-negative");
    if (!(state.beta1 > 0.0 && state.beta1 < 1.0 && state.beta2 > 0.0 && state.beta2 < 1.0)) {
        throw InputError("adam_step: betas must lie in (0, 1)");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].values.size() != grads[k].values.size() || state.m[k].size() != params[k].values.size()) {
            throw ShapeError("adam_step: shape mismatch for " + params[k].name);
        }
        for (double g : grads[k].values) {
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + grads[k].name);
        }
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k].values;
        auto g = grads[k].values;
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            p[i] -= lr * (m_hat / (std::sqrt(v_hat) + state.epsilon)) + lr * weight_decay * p[i];
        }
    }
}

}  // namespace methylgraph
