#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "methylgraph/mlp.hpp"

namespace methylgraph {

/// Moment accumulators for bias-corrected Adam with decoupled weight decay.
struct AdamState {
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    /// Zero moments shaped like `params`.
    static AdamState for_params(std::span<const ParamRef> params);
};

/// One optimizer update. For each parameter p with gradient g:
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
///   p ← p − lr·(m̂ / (√v̂ + ε)) − lr·weight_decay·p
/// Throws NumericError naming the parameter if any gradient is non-finite; nothing is
/// modified in that case.
void adam_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads, AdamState& state,
               double lr, double weight_decay);

}  // namespace methylgraph
