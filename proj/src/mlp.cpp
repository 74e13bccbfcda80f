#include "methylgraph/mlp.hpp"

#include <cmath>

#include "methylgraph/error.hpp"

namespace methylgraph {

std::string_view activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "identity";
}

Activation activation_from_name(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "identity") return Activation::identity;
    throw InputError("unknown activation '" + std::string(name) + "'");
}

Mlp::Mlp(std::vector<Dense> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("Mlp needs at least one layer");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const Dense& d = layers_[k];
        if (d.bias.size() != d.out_dim()) {
            throw ShapeError("Mlp layer " + std::to_string(k) + ": bias length " +
                             std::to_string(d.bias.size()) + " != out dim " + std::to_string(d.out_dim()));
        }
        if (d.in_dim() == 0 || d.out_dim() == 0) throw ShapeError("Mlp layer " + std::to_string(k) + " is empty");
        if (k > 0 && layers_[k - 1].out_dim() != d.in_dim()) {
            throw ShapeError("Mlp layer " + std::to_string(k) + " input " + std::to_string(d.in_dim()) +
                             " does not chain with previous output " + std::to_string(layers_[k - 1].out_dim()));
        }
    }
    if (layers_.back().activation != Activation::identity) {
        throw ShapeError("Mlp final layer must use the identity activation");
    }
}

std::size_t Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const Dense& d : layers_) n += d.weight.size() + d.bias.size();
    return n;
}

void Mlp::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        out.push_back({prefix + "." + std::to_string(k) + ".weight", layers_[k].weight.values()});
        out.push_back({prefix + "." + std::to_string(k) + ".bias", layers_[k].bias});
    }
}

void Mlp::collect_params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        out.push_back({prefix + "." + std::to_string(k) + ".weight", layers_[k].weight.values()});
        out.push_back({prefix + "." + std::to_string(k) + ".bias", layers_[k].bias});
    }
}

Mlp make_mlp(std::span<const std::size_t> dims, Rng& rng) {
    if (dims.size() < 2) throw ShapeError("make_mlp needs at least input and output dims");
    std::vector<Dense> layers;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        const std::size_t fan_in = dims[k];
        const std::size_t fan_out = dims[k + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        Dense d;
        d.weight = Matrix(fan_in, fan_out);
        for (double& w : d.weight.values()) w = dist(rng);
        d.bias.assign(fan_out, 0.0);
        d.activation = (k + 2 == dims.size()) ? Activation::identity : Activation::relu;
        layers.push_back(std::move(d));
    }
    return Mlp(std::move(layers));
}

MlpGrads MlpGrads::zeros_like(const Mlp& mlp) {
    MlpGrads g;
    for (const Dense& d : mlp.layers()) {
        g.layers.push_back({Matrix(d.in_dim(), d.out_dim()), std::vector<double>(d.out_dim(), 0.0)});
    }
    return g;
}

void MlpGrads::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
        out.push_back({prefix + "." + std::to_string(k) + ".weight", layers[k].weight.values()});
        out.push_back({prefix + "." + std::to_string(k) + ".bias", layers[k].bias});
    }
}

void MlpGrads::collect_params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
    for (std::size_t k = 0; k < layers.size(); ++k) {
        out.push_back({prefix + "." + std::to_string(k) + ".weight", layers[k].weight.values()});
        out.push_back({prefix + "." + std::to_string(k) + ".bias", layers[k].bias});
    }
}

Matrix dense_pre(const Dense& layer, const Matrix& x) {
    Matrix z = matmul(x, layer.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    return z;
}

void activate_inplace(Activation act, Matrix& z) {
    if (act == Activation::identity) return;
    for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
}

void activation_backward_inplace(Activation act, const Matrix& z, Matrix& da) {
    if (act == Activation::identity) return;
    auto zv = z.values();
    auto dv = da.values();
    for (std::size_t i = 0; i < dv.size(); ++i) {
        if (!(zv[i] > 0.0)) dv[i] = 0.0;
    }
}

Matrix dense_backward(const Dense& layer, const Matrix& x, const Matrix& dz, DenseGrad& grad) {
    accumulate_tn(x, dz, grad.weight);
    for (std::size_t r = 0; r < dz.rows(); ++r) {
        auto row = dz.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) grad.bias[c] += row[c];
    }
    return matmul_nt(dz, layer.weight);
}

namespace {

void check_input(const Mlp& mlp, const Matrix& x) {
    if (mlp.layers().empty()) throw ShapeError("mlp_forward on an empty Mlp");
    if (x.cols() != mlp.in_dim()) {
        throw ShapeError("mlp_forward: input has " + std::to_string(x.cols()) + " columns, Mlp expects " +
                         std::to_string(mlp.in_dim()));
    }
    if (x.rows() == 0) throw ShapeError("mlp_forward: input has no rows");
}

}  // namespace

Matrix mlp_forward(const Mlp& mlp, const Matrix& x) {
    check_input(mlp, x);
    Matrix h = x;
    for (const Dense& d : mlp.layers()) {
        h = dense_pre(d, h);
        activate_inplace(d.activation, h);
    }
    return h;
}

MlpTrace mlp_forward_trace(const Mlp& mlp, const Matrix& x) {
    check_input(mlp, x);
    MlpTrace t;
    t.input = x;
    Matrix h = x;
    for (const Dense& d : mlp.layers()) {
        Matrix z = dense_pre(d, h);
        h = z;
        activate_inplace(d.activation, h);
        t.pre.push_back(std::move(z));
    }
    t.output = std::move(h);
    return t;
}

Matrix backprop_trace(const Mlp& mlp, const MlpTrace& trace, const Matrix& upstream, MlpGrads& grads) {
    if (upstream.rows() != trace.output.rows() || upstream.cols() != trace.output.cols()) {
        throw ShapeError("backprop: upstream " + shape_string(upstream) + " vs output " +
                         shape_string(trace.output));
    }
    const auto& layers = mlp.layers();
    Matrix delta = upstream;
    for (std::size_t k = layers.size(); k-- > 0;) {
        activation_backward_inplace(layers[k].activation, trace.pre[k], delta);
        Matrix input = trace.input;
        if (k > 0) {
            input = trace.pre[k - 1];
            activate_inplace(layers[k - 1].activation, input);
        }
        delta = dense_backward(layers[k], input, delta, grads.layers[k]);
    }
    return delta;
}

Backprop backprop(const Mlp& mlp, const Matrix& x, const Matrix& upstream) {
    MlpTrace trace = mlp_forward_trace(mlp, x);
    Backprop out{MlpGrads::zeros_like(mlp), {}};
    out.input_grad = backprop_trace(mlp, trace, upstream, out.grads);
    return out;
}

}  // namespace methylgraph
