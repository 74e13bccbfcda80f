#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "methylgraph/matrix.hpp"

namespace methylgraph {

using Rng = std::mt19937_64;

enum class Activation { relu, identity };

std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);

/// Fully connected layer: y = act(x · weight + bias), weight is [in x out].
struct Dense {
    Matrix weight;
    std::vector<double> bias;
    Activation activation = Activation::identity;

    std::size_t in_dim() const noexcept { return weight.rows(); }
    std::size_t out_dim() const noexcept { return weight.cols(); }

    friend bool operator==(const Dense&, const Dense&) = default;
};

/// Named mutable view of one parameter tensor.
struct ParamRef {
    std::string name;
    std::span<double> values;
};

struct ConstParamRef {
    std::string name;
    std::span<const double> values;
};

class Mlp {
public:
    Mlp() = default;
    /// Throws ShapeError unless dims chain and the last activation is identity.
    explicit Mlp(std::vector<Dense> layers);

    const std::vector<Dense>& layers() const noexcept { return layers_; }
    std::vector<Dense>& layers() noexcept { return layers_; }
    std::size_t in_dim() const;
    std::size_t out_dim() const;
    std::size_t parameter_count() const;

    /// Weights row-major then bias, layer by layer.
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
    void collect_params(const std::string& prefix, std::vector<ConstParamRef>& out) const;

    friend bool operator==(const Mlp&, const Mlp&) = default;

private:
    std::vector<Dense> layers_;
};

/// Glorot-uniform weights, zero biases. `dims` = {in, hidden..., out}; hidden layers use relu.
Mlp make_mlp(std::span<const std::size_t> dims, Rng& rng);

struct DenseGrad {
    Matrix weight;
    std::vector<double> bias;
};

/// Gradient accumulators shaped like an Mlp.
struct MlpGrads {
    std::vector<DenseGrad> layers;

    static MlpGrads zeros_like(const Mlp& mlp);
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
    void collect_params(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

Matrix mlp_forward(const Mlp& mlp, const Matrix& x);

/// Pre-activations of every layer from one forward pass.
struct MlpTrace {
    Matrix input;
    std::vector<Matrix> pre;
    Matrix output;
};

MlpTrace mlp_forward_trace(const Mlp& mlp, const Matrix& x);

/// Gradients of sum(upstream ⊙ mlp(x)) with respect to parameters and input.
struct Backprop {
    MlpGrads grads;
    Matrix input_grad;
};

Backprop backprop(const Mlp& mlp, const Matrix& x, const Matrix& upstream);

/// Accumulates parameter gradients into `grads` and returns the input gradient.
Matrix backprop_trace(const Mlp& mlp, const MlpTrace& trace, const Matrix& upstream, MlpGrads& grads);

// Single-layer building blocks, reused by the graph layers.
Matrix dense_pre(const Dense& layer, const Matrix& x);
void activate_inplace(Activation act, Matrix& z);
/// dz = da ⊙ act'(z), in place on `da`.
void activation_backward_inplace(Activation act, const Matrix& z, Matrix& da);
/// Accumulates dW += xᵀ dz, db += Σ dz and returns dz · Wᵀ.
Matrix dense_backward(const Dense& layer, const Matrix& x, const Matrix& dz, DenseGrad& grad);

}  // namespace methylgraph
