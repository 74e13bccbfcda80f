#include "methylgraph/gnn.hpp"

#include <algorithm>
#include <cmath>

#include "methylgraph/error.hpp"

namespace methylgraph {

GnnModel::GnnModel(std::size_t input_dim, std::vector<EdgeConvLayer> layers, std::vector<Mlp> scorers)
    : input_dim_(input_dim), layers_(std::move(layers)), scorers_(std::move(scorers)) {
    if (layers_.empty()) throw ShapeError("GnnModel needs at least one EdgeConv layer");
    if (scorers_.size() != layers_.size()) throw ShapeError("GnnModel needs exactly one scorer per layer");
    std::size_t d = input_dim_;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Mlp& phi = layers_[l].phi;
        if (phi.in_dim() != 2 * d) {
            throw ShapeError("EdgeConv layer " + std::to_string(l + 1) + ": phi input " + std::to_string(phi.in_dim()) +
                             " != 2 x " + std::to_string(d));
        }
        d = phi.out_dim();
        if (scorers_[l].in_dim() != d || scorers_[l].out_dim() != 1) {
            throw ShapeError("scorer " + std::to_string(l + 1) + " must map " + std::to_string(d) + " -> 1");
        }
    }
}

std::vector<ParamRef> GnnModel::parameters() {
    std::vector<ParamRef> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l + 1);
        layers_[l].phi.collect_params(prefix + ".phi", out);
        scorers_[l].collect_params(prefix + ".scorer", out);
    }
    return out;
}

std::vector<ConstParamRef> GnnModel::parameters() const {
    std::vector<ConstParamRef> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l + 1);
        layers_[l].phi.collect_params(prefix + ".phi", out);
        scorers_[l].collect_params(prefix + ".scorer", out);
    }
    return out;
}

std::size_t GnnModel::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) n += layers_[l].phi.parameter_count() + scorers_[l].parameter_count();
    return n;
}

GnnModel make_model(std::size_t input_dim, std::span<const std::size_t> widths, Rng& rng) {
    if (input_dim == 0) throw ShapeError("make_model: input_dim must be positive");
    if (widths.empty()) throw ShapeError("make_model: need at least one layer width");
    std::vector<EdgeConvLayer> layers;
    std::vector<Mlp> scorers;
    std::size_t d = input_dim;
    for (std::size_t w : widths) {
        const std::size_t phi_dims[] = {2 * d, w, w};
        layers.push_back({make_mlp(phi_dims, rng)});
        const std::size_t scorer_dims[] = {w, 1};
        scorers.push_back(make_mlp(scorer_dims, rng));
        d = w;
    }
    return GnnModel(input_dim, std::move(layers), std::move(scorers));
}

GnnGrads GnnGrads::zeros_like(const GnnModel& model) {
    GnnGrads g;
    for (std::size_t l = 0; l < model.depth(); ++l) {
        g.phi.push_back(MlpGrads::zeros_like(model.layers()[l].phi));
        g.scorers.push_back(MlpGrads::zeros_like(model.scorers()[l]));
    }
    return g;
}

std::vector<ConstParamRef> GnnGrads::parameters() const {
    std::vector<ConstParamRef> out;
    for (std::size_t l = 0; l < phi.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l + 1);
        phi[l].collect_params(prefix + ".phi", out);
        scorers[l].collect_params(prefix + ".scorer", out);
    }
    return out;
}

std::vector<ParamRef> GnnGrads::parameters() {
    std::vector<ParamRef> out;
    for (std::size_t l = 0; l < phi.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l + 1);
        phi[l].collect_params(prefix + ".phi", out);
        scorers[l].collect_params(prefix + ".scorer", out);
    }
    return out;
}

void GnnGrads::add(const GnnGrads& other) {
    auto mine = parameters();
    auto theirs = other.parameters();
    if (mine.size() != theirs.size()) throw ShapeError("GnnGrads::add: structure mismatch");
    for (std::size_t k = 0; k < mine.size(); ++k) {
        if (mine[k].values.size() != theirs[k].values.size()) throw ShapeError("GnnGrads::add: shape mismatch");
        for (std::size_t i = 0; i < mine[k].values.size(); ++i) mine[k].values[i] += theirs[k].values[i];
    }
}

PreparedGraph PreparedGraph::from(const WsiGraph& graph) {
    PreparedGraph p;
    p.adjacency = to_csr(graph.node_count(), graph.edges);
    p.features = Matrix(graph.node_count(), graph.feature_dim);
    for (std::size_t i = 0; i < graph.node_count(); ++i) {
        const auto& f = graph.nodes[i].features;
        if (f.size() != graph.feature_dim) throw ShapeError("graph node feature length differs from feature_dim");
        std::copy(f.begin(), f.end(), p.features.row(i).begin());
    }
    return p;
}

PreparedBag PreparedBag::from(const PatientBag& bag) {
    PreparedBag p;
    p.patient_id = bag.patient_id;
    p.label = bag.label;
    for (const WsiGraph& g : bag.graphs) p.graphs.push_back(PreparedGraph::from(g));
    return p;
}

namespace {

void require_finite(const Matrix& m, const std::string& where) {
    if (!m.all_finite()) throw NumericError("non-finite values in " + where);
}

/// Split φ's first weight [W_a; W_b] into (W_a − W_b, W_b) so that
/// [h_i, h_j − h_i]·W = h_i·(W_a − W_b) + h_j·W_b.
void split_first_layer(const Dense& first, std::size_t d, Matrix& mix_self, Matrix& mix_neighbor) {
    const std::size_t w = first.out_dim();
    mix_self = Matrix(d, w);
    mix_neighbor = Matrix(d, w);
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            mix_self(r, c) = first.weight(r, c) - first.weight(d + r, c);
            mix_neighbor(r, c) = first.weight(d + r, c);
        }
    }
}

/// Runs one EdgeConv layer. When `cache` is null nothing is retained.
Matrix edgeconv_apply(const EdgeConvLayer& layer, const Csr& adj, const Matrix& h, BagTrace::LayerCache* cache) {
    const auto& dense = layer.phi.layers();
    const std::size_t d = layer.in_dim();
    if (h.cols() != d || 2 * d != layer.phi.in_dim()) {
        throw ShapeError("edgeconv_forward: features " + shape_string(h) + " vs phi input " +
                         std::to_string(layer.phi.in_dim()));
    }
    if (h.rows() != adj.node_count()) {
        throw ShapeError("edgeconv_forward: " + std::to_string(h.rows()) + " feature rows for " +
                         std::to_string(adj.node_count()) + " nodes");
    }
    const std::size_t n = h.rows();
    const std::size_t edges = adj.indices.size();
    const Dense& first = dense.front();
    const std::size_t w0 = first.out_dim();

    Matrix mix_self, mix_neighbor;
    split_first_layer(first, d, mix_self, mix_neighbor);
    const Matrix p = matmul(h, mix_self);
    const Matrix q = matmul(h, mix_neighbor);

    Matrix z0(edges, w0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* pi = p.row(i).data();
        for (std::size_t e = adj.offsets[i]; e < adj.offsets[i + 1]; ++e) {
            const double* qj = q.row(adj.indices[e]).data();
            double* z = z0.row(e).data();
            for (std::size_t c = 0; c < w0; ++c) z[c] = pi[c] + qj[c] + first.bias[c];
        }
    }

    std::vector<Matrix> hidden, hidden_pre;
    const Matrix* last_edge = &z0;
    if (dense.size() > 1) {
        Matrix a = z0;
        activate_inplace(first.activation, a);
        hidden.push_back(std::move(a));
        for (std::size_t k = 1; k + 1 < dense.size(); ++k) {
            Matrix z = dense_pre(dense[k], hidden.back());
            Matrix act = z;
            activate_inplace(dense[k].activation, act);
            hidden_pre.push_back(std::move(z));
            hidden.push_back(std::move(act));
        }
        last_edge = &hidden.back();
    }

    // Neighbour sums in ascending neighbour order.
    const std::size_t ws = last_edge->cols();
    Matrix summed(n, ws);
    for (std::size_t i = 0; i < n; ++i) {
        double* s = summed.row(i).data();
        for (std::size_t e = adj.offsets[i]; e < adj.offsets[i + 1]; ++e) {
            const double* a = last_edge->row(e).data();
            for (std::size_t c = 0; c < ws; ++c) s[c] += a[c];
        }
    }

    Matrix out;
    if (dense.size() == 1) {
        out = summed;
    } else {
        const Dense& last = dense.back();
        out = matmul(summed, last.weight);
        for (std::size_t i = 0; i < n; ++i) {
            const double deg = static_cast<double>(adj.degree(i));
            if (deg == 0.0) continue;
            auto row = out.row(i);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] += deg * last.bias[c];
        }
    }

    if (cache) {
        cache->input = h;
        cache->mix_self = std::move(mix_self);
        cache->mix_neighbor = std::move(mix_neighbor);
        cache->first_pre = std::move(z0);
        cache->hidden = std::move(hidden);
        cache->hidden_pre = std::move(hidden_pre);
        cache->summed = std::move(summed);
    }
    return out;
}

/// Accumulates φ gradients and returns ∂/∂h^(l-1) given ∂/∂h^(l).
Matrix edgeconv_backward(const EdgeConvLayer& layer, const Csr& adj, const BagTrace::LayerCache& cache,
                         const Matrix& d_out, MlpGrads& grads) {
    const auto& dense = layer.phi.layers();
    const std::size_t n = cache.input.rows();
    const std::size_t d = layer.in_dim();

    Matrix d_summed;
    if (dense.size() == 1) {
        d_summed = d_out;
    } else {
        const std::size_t last = dense.size() - 1;
        DenseGrad& g = grads.layers[last];
        accumulate_tn(cache.summed, d_out, g.weight);
        for (std::size_t i = 0; i < n; ++i) {
            const double deg = static_cast<double>(adj.degree(i));
            if (deg == 0.0) continue;
            auto row = d_out.row(i);
            for (std::size_t c = 0; c < row.size(); ++c) g.bias[c] += deg * row[c];
        }
        d_summed = matmul_nt(d_out, dense[last].weight);
    }

    // Broadcast the node gradient to every outgoing edge.
    const std::size_t edges = adj.indices.size();
    Matrix d_edge(edges, d_summed.cols());
    for (std::size_t i = 0; i < n; ++i) {
        const auto src = d_summed.row(i);
        for (std::size_t e = adj.offsets[i]; e < adj.offsets[i + 1]; ++e) {
            std::copy(src.begin(), src.end(), d_edge.row(e).begin());
        }
    }

    for (std::size_t k = dense.size() - 1; k-- > 1;) {
        activation_backward_inplace(dense[k].activation, cache.hidden_pre[k - 1], d_edge);
        d_edge = dense_backward(dense[k], cache.hidden[k - 1], d_edge, grads.layers[k]);
    }
    if (dense.size() > 1) activation_backward_inplace(dense[0].activation, cache.first_pre, d_edge);

    // d_edge now holds ∂/∂z0 for every edge.
    const std::size_t w0 = dense[0].out_dim();
    Matrix d_p(n, w0), d_q(n, w0);
    DenseGrad& g0 = grads.layers[0];
    for (std::size_t i = 0; i < n; ++i) {
        double* dp = d_p.row(i).data();
        for (std::size_t e = adj.offsets[i]; e < adj.offsets[i + 1]; ++e) {
            const double* dz = d_edge.row(e).data();
            double* dq = d_q.row(adj.indices[e]).data();
            for (std::size_t c = 0; c < w0; ++c) {
                dp[c] += dz[c];
                dq[c] += dz[c];
                g0.bias[c] += dz[c];
            }
        }
    }
    const Matrix d_self = matmul_tn(cache.input, d_p);
    const Matrix d_neighbor = matmul_tn(cache.input, d_q);
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < w0; ++c) {
            g0.weight(r, c) += d_self(r, c);
            g0.weight(d + r, c) += d_neighbor(r, c) - d_self(r, c);
        }
    }
    Matrix d_h = matmul_nt(d_p, cache.mix_self);
    const Matrix d_h2 = matmul_nt(d_q, cache.mix_neighbor);
    for (std::size_t i = 0; i < d_h.size(); ++i) d_h.values()[i] += d_h2.values()[i];
    return d_h;
}

void check_model_input(const GnnModel& model, const PreparedGraph& graph) {
    if (graph.features.cols() != model.input_dim()) {
        throw ShapeError("graph feature_dim " + std::to_string(graph.features.cols()) + " != model input_dim " +
                         std::to_string(model.input_dim()));
    }
}

}  // namespace

Matrix edgeconv_forward(const EdgeConvLayer& layer, const Csr& adjacency, const Matrix& h_prev) {
    return edgeconv_apply(layer, adjacency, h_prev, nullptr);
}

Matrix edgeconv_forward(const EdgeConvLayer& layer, const WsiGraph& graph, const Matrix& h_prev) {
    return edgeconv_apply(layer, to_csr(graph.node_count(), graph.edges), h_prev, nullptr);
}

NodePredictions node_predictions(const GnnModel& model, const PreparedGraph& graph) {
    check_model_input(model, graph);
    const std::size_t n = graph.node_count();
    NodePredictions out{std::vector<double>(n, 0.0), Matrix(n, model.depth())};
    Matrix h = graph.features;
    for (std::size_t l = 0; l < model.depth(); ++l) {
        h = edgeconv_apply(model.layers()[l], graph.adjacency, h, nullptr);
        require_finite(h, "EdgeConv layer " + std::to_string(l + 1));
        const Matrix f = mlp_forward(model.scorers()[l], h);
        for (std::size_t i = 0; i < n; ++i) {
            out.per_layer(i, l) = f(i, 0);
            out.total[i] += f(i, 0);
        }
    }
    return out;
}

NodePredictions node_predictions(const GnnModel& model, const WsiGraph& graph) {
    return node_predictions(model, PreparedGraph::from(graph));
}

double graph_score(const GnnModel& model, const PreparedGraph& graph) {
    if (graph.node_count() == 0) throw InputError("graph_score: graph has no nodes");
    const NodePredictions p = node_predictions(model, graph);
    double s = 0.0;
    for (double v : p.total) s += v;
    return s;
}

double graph_score(const GnnModel& model, const WsiGraph& graph) {
    return graph_score(model, PreparedGraph::from(graph));
}

double patient_score(const GnnModel& model, const PreparedBag& bag, BagPooling pooling) {
    if (bag.graphs.empty()) throw InputError("patient_score: bag " + bag.patient_id + " has no graphs");
    double s = 0.0;
    for (const PreparedGraph& g : bag.graphs) s += graph_score(model, g);
    return pooling == BagPooling::mean ? s / static_cast<double>(bag.graphs.size()) : s;
}

double patient_score(const GnnModel& model, const PatientBag& bag, BagPooling pooling) {
    return patient_score(model, PreparedBag::from(bag), pooling);
}

BagTrace::BagTrace(const GnnModel& model, const PreparedBag& bag, BagPooling pooling)
    : model_(&model), pooling_(pooling) {
    if (bag.graphs.empty()) throw InputError("patient bag " + bag.patient_id + " has no graphs");
    double total = 0.0;
    for (const PreparedGraph& g : bag.graphs) {
        check_model_input(model, g);
        if (g.node_count() == 0) throw InputError("patient bag " + bag.patient_id + " contains an empty graph");
        GraphCache gc;
        gc.graph = &g;
        gc.layers.resize(model.depth());
        Matrix h = g.features;
        double s = 0.0;
        std::vector<double> node_total(g.node_count(), 0.0);
        for (std::size_t l = 0; l < model.depth(); ++l) {
            h = edgeconv_apply(model.layers()[l], g.adjacency, h, &gc.layers[l]);
            require_finite(h, "EdgeConv layer " + std::to_string(l + 1));
            const Matrix f = mlp_forward(model.scorers()[l], h);
            for (std::size_t i = 0; i < g.node_count(); ++i) node_total[i] += f(i, 0);
            gc.outputs.push_back(h);
        }
        for (double v : node_total) s += v;
        total += s;
        graphs_.push_back(std::move(gc));
    }
    score_ = pooling == BagPooling::mean ? total / static_cast<double>(bag.graphs.size()) : total;
}

void BagTrace::backward(double upstream, GnnGrads& grads) const {
    if (upstream == 0.0) return;
    const GnnModel& model = *model_;
    const double per_graph =
        pooling_ == BagPooling::mean ? upstream / static_cast<double>(graphs_.size()) : upstream;
    for (const GraphCache& gc : graphs_) {
        const std::size_t n = gc.graph->node_count();
        Matrix d_h;  // ∂/∂h^(l) flowing down from layer l+1
        for (std::size_t l = model.depth(); l-- > 0;) {
            const Mlp& scorer = model.scorers()[l];
            MlpTrace st = mlp_forward_trace(scorer, gc.outputs[l]);
            Matrix d_score(n, 1, per_graph);
            Matrix d_from_scorer = backprop_trace(scorer, st, d_score, grads.scorers[l]);
            if (d_h.size() == 0) {
                d_h = std::move(d_from_scorer);
            } else {
                for (std::size_t i = 0; i < d_h.size(); ++i) d_h.values()[i] += d_from_scorer.values()[i];
            }
            d_h = edgeconv_backward(model.layers()[l], gc.graph->adjacency, gc.layers[l], d_h, grads.phi[l]);
            require_finite(d_h, "gradient of EdgeConv layer " + std::to_string(l + 1));
        }
    }
}

GnnGrads model_gradients(const GnnModel& model, const PatientBag& bag, double upstream, BagPooling pooling) {
    const PreparedBag prepared = PreparedBag::from(bag);
    GnnGrads grads = GnnGrads::zeros_like(model);
    BagTrace trace(model, prepared, pooling);
    trace.backward(upstream, grads);
    for (const auto& p : grads.parameters()) {
        for (double v : p.values) {
            if (!std::isfinite(v)) throw NumericError("non-finite gradient in " + p.name);
        }
    }
    return grads;
}

}  // namespace methylgraph
