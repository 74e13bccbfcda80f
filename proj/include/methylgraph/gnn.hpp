#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "methylgraph/matrix.hpp"
#include "methylgraph/mlp.hpp"
#include "methylgraph/spatial_graph.hpp"

namespace methylgraph {

/// h_i' = Σ_{j ∈ N(i)} φ([h_i, h_j − h_i]). φ maps 2·d_in → d_out.
struct EdgeConvLayer {
    Mlp phi;

    std::size_t in_dim() const { return phi.in_dim() / 2; }
    std::size_t out_dim() const { return phi.out_dim(); }

    friend bool operator==(const EdgeConvLayer&, const EdgeConvLayer&) = default;
};

/// Stacked EdgeConv layers with one scalar node scorer per layer. A node's score is the sum of
/// its per-layer scores; a graph's score is the sum of its node scores.
class GnnModel {
public:
    GnnModel() = default;
    /// Throws ShapeError unless layer dims chain from input_dim and every scorer maps the
    /// matching layer's output to one value.
    GnnModel(std::size_t input_dim, std::vector<EdgeConvLayer> layers, std::vector<Mlp> scorers);

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t depth() const noexcept { return layers_.size(); }
    const std::vector<EdgeConvLayer>& layers() const noexcept { return layers_; }
    const std::vector<Mlp>& scorers() const noexcept { return scorers_; }
    std::vector<EdgeConvLayer>& layers() noexcept { return layers_; }
    std::vector<Mlp>& scorers() noexcept { return scorers_; }

    /// Checkpoint order: layers ascending, φ before scorer, weights row-major before bias.
    std::vector<ParamRef> parameters();
    std::vector<ConstParamRef> parameters() const;
    std::size_t parameter_count() const;

    friend bool operator==(const GnnModel&, const GnnModel&) = default;

private:
    std::size_t input_dim_ = 0;
    std::vector<EdgeConvLayer> layers_;
    std::vector<Mlp> scorers_;
};

/// φ = [2·d_in → d_out (relu) → d_out], scorer = [d_out → 1], Glorot-uniform init.
GnnModel make_model(std::size_t input_dim, std::span<const std::size_t> widths, Rng& rng);

inline constexpr std::size_t kDefaultLayerWidth = 64;
inline constexpr std::size_t kDefaultDepth = 3;

struct GnnGrads {
    std::vector<MlpGrads> phi;
    std::vector<MlpGrads> scorers;

    static GnnGrads zeros_like(const GnnModel& model);
    std::vector<ConstParamRef> parameters() const;
    std::vector<ParamRef> parameters();
    /// this += other, element-wise.
    void add(const GnnGrads& other);
};

enum class BagPooling { sum, mean };

/// All graphs of one patient. `label` is the binary target of the gene group being trained.
struct PatientBag {
    std::string patient_id;
    std::vector<WsiGraph> graphs;
    int label = 0;
};

/// Features and adjacency of a WsiGraph in the layout the model consumes.
struct PreparedGraph {
    Csr adjacency;
    Matrix features;

    static PreparedGraph from(const WsiGraph& graph);
    std::size_t node_count() const { return features.rows(); }
};

struct PreparedBag {
    std::string patient_id;
    std::vector<PreparedGraph> graphs;
    int label = 0;

    static PreparedBag from(const PatientBag& bag);
};

Matrix edgeconv_forward(const EdgeConvLayer& layer, const WsiGraph& graph, const Matrix& h_prev);
Matrix edgeconv_forward(const EdgeConvLayer& layer, const Csr& adjacency, const Matrix& h_prev);

struct NodePredictions {
    std::vector<double> total;  // f(v_i)
    Matrix per_layer;           // n x L, column l holds f_l(v_i)
};

NodePredictions node_predictions(const GnnModel& model, const WsiGraph& graph);
NodePredictions node_predictions(const GnnModel& model, const PreparedGraph& graph);

double graph_score(const GnnModel& model, const WsiGraph& graph);
double graph_score(const GnnModel& model, const PreparedGraph& graph);

double patient_score(const GnnModel& model, const PatientBag& bag, BagPooling pooling = BagPooling::sum);
double patient_score(const GnnModel& model, const PreparedBag& bag, BagPooling pooling = BagPooling::sum);

/// Gradient of upstream · patient_score with respect to every model parameter.
GnnGrads model_gradients(const GnnModel& model, const PatientBag& bag, double upstream,
                         BagPooling pooling = BagPooling::sum);

/// Forward pass retaining what the backward pass needs.
class BagTrace {
public:
    BagTrace(const GnnModel& model, const PreparedBag& bag, BagPooling pooling = BagPooling::sum);

    double score() const noexcept { return score_; }
    /// grads += upstream · ∂score/∂θ
    void backward(double upstream, GnnGrads& grads) const;

    struct LayerCache {
        Matrix input;                // h^(l-1)
        Matrix mix_self;             // (W_a − W_b) of φ's first layer
        Matrix mix_neighbor;         // W_b
        Matrix first_pre;            // per-edge pre-activation of φ's first layer
        std::vector<Matrix> hidden;  // per-edge activations entering φ layers 1..K-1
        std::vector<Matrix> hidden_pre;
        Matrix summed;  // Σ over neighbours of the last per-edge activation
    };
    struct GraphCache {
        const PreparedGraph* graph = nullptr;
        std::vector<LayerCache> layers;
        std::vector<Matrix> outputs;  // h^(1..L)
    };

private:
    const GnnModel* model_;
    BagPooling pooling_;
    std::vector<GraphCache> graphs_;
    double score_ = 0.0;
};

}  // namespace methylgraph
