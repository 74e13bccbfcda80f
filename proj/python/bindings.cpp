#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "commands.hpp"
#include "methylgraph/error.hpp"
#include "methylgraph/gnn.hpp"
#include "methylgraph/io.hpp"
#include "methylgraph/methyl_labels.hpp"
#include "methylgraph/metrics.hpp"
#include "methylgraph/spatial_graph.hpp"
#include "methylgraph/training.hpp"

namespace py = pybind11;
using namespace methylgraph;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a, const char* what) {
    if (a.ndim() != 2) throw ShapeError(std::string(what) + " must be a 2-D array");
    const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

Array to_array(const std::vector<double>& v) {
    Array out(v.size());
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

WsiGraph make_graph(std::vector<std::string> patch_ids, const Array& coords, const Array& features, double max_edge_px,
                    std::string slide_id) {
    const Matrix xy = to_matrix(coords, "coords");
    const Matrix f = to_matrix(features, "features");
    if (xy.cols() != 2) throw ShapeError("coords must have two columns");
    if (xy.rows() != f.rows() || patch_ids.size() != f.rows()) {
        throw ShapeError("patch_ids, coords and features must describe the same number of patches");
    }
    std::vector<PatchNode> nodes(f.rows());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        nodes[i].patch_id = std::move(patch_ids[i]);
        nodes[i].x = xy(i, 0);
        nodes[i].y = xy(i, 1);
        nodes[i].features.assign(f.row(i).begin(), f.row(i).end());
    }
    WsiGraph g = build_graph(std::move(nodes), max_edge_px, std::move(slide_id));
    g.feature_dim = f.cols();
    return g;
}

ScoredCohort cohort(const std::vector<double>& scores, const std::vector<int>& labels,
                    std::optional<std::vector<std::string>> ids) {
    ScoredCohort c;
    c.scores = scores;
    c.labels = labels;
    if (ids) {
        c.patient_ids = std::move(*ids);
    } else {
        for (std::size_t i = 0; i < scores.size(); ++i) c.patient_ids.push_back(std::to_string(i));
    }
    return c;
}

}  // namespace

PYBIND11_MODULE(_methylgraph, m) {
    m.doc() = "Spatial graph models of whole-slide images for methylation state prediction";

    static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
    static py::exception<InputError> validation(m, "ValidationError", base.ptr());
    static py::exception<NumericError> numeric(m, "NumericError", base.ptr());
    static py::exception<IoError> io_error(m, "IoError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            switch (e.kind()) {
                case ErrorKind::validation: py::set_error(validation, e.what()); break;
                case ErrorKind::numeric: py::set_error(numeric, e.what()); break;
                case ErrorKind::io: py::set_error(io_error, e.what()); break;
            }
        }
    });

    py::class_<WsiGraph>(m, "Graph")
        .def_readonly("slide_id", &WsiGraph::slide_id)
        .def_readonly("feature_dim", &WsiGraph::feature_dim)
        .def_property_readonly("node_count", &WsiGraph::node_count)
        .def_property_readonly("patch_ids",
                               [](const WsiGraph& g) {
                                   std::vector<std::string> ids;
                                   for (const auto& n : g.nodes) ids.push_back(n.patch_id);
                                   return ids;
                               })
        .def_property_readonly("coords",
                               [](const WsiGraph& g) {
                                   Matrix xy(g.node_count(), 2);
                                   for (std::size_t i = 0; i < g.node_count(); ++i) {
                                       xy(i, 0) = g.nodes[i].x;
                                       xy(i, 1) = g.nodes[i].y;
                                   }
                                   return to_array(xy);
                               })
        .def_property_readonly("features",
                               [](const WsiGraph& g) {
                                   Matrix f(g.node_count(), g.feature_dim);
                                   for (std::size_t i = 0; i < g.node_count(); ++i)
                                       std::copy(g.nodes[i].features.begin(), g.nodes[i].features.end(), f.row(i).begin());
                                   return to_array(f);
                               })
        .def_property_readonly("edges",
                               [](const WsiGraph& g) {
                                   py::array_t<std::int64_t> e({g.edges.size(), std::size_t{2}});
                                   auto* out = e.mutable_data();
                                   for (std::size_t i = 0; i < g.edges.size(); ++i) {
                                       out[2 * i] = static_cast<std::int64_t>(g.edges[i].first);
                                       out[2 * i + 1] = static_cast<std::int64_t>(g.edges[i].second);
                                   }
                                   return e;
                               })
        .def("__repr__", [](const WsiGraph& g) {
            return "<Graph " + g.slide_id + ": " + std::to_string(g.node_count()) + " nodes, " +
                   std::to_string(g.edges.size()) + " edges>";
        });

    m.def("build_graph", &make_graph, py::arg("patch_ids"), py::arg("coords"), py::arg("features"),
          py::arg("max_edge_px") = kDefaultMaxEdgePx, py::arg("slide_id") = "",
          "Delaunay graph over patch centroids keeping edges shorter than max_edge_px.");
    m.def("load_graph", &io::load_graph, py::arg("path"));
    m.def("save_graph", &io::save_graph, py::arg("path"), py::arg("graph"));
    m.def(
        "delaunay",
        [](const Array& points) {
            const Matrix xy = to_matrix(points, "points");
            if (xy.cols() != 2) throw ShapeError("points must have two columns");
            std::vector<Point> pts(xy.rows());
            for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {xy(i, 0), xy(i, 1)};
            const Triangulation tri = delaunay(pts);
            py::array_t<std::int64_t> out({tri.triangles.size(), std::size_t{3}});
            auto* o = out.mutable_data();
            for (std::size_t t = 0; t < tri.triangles.size(); ++t)
                for (int c = 0; c < 3; ++c) o[3 * t + c] = static_cast<std::int64_t>(tri.triangles[t][c]);
            return out;
        },
        py::arg("points"), "Triangles (counter-clockwise vertex indices) of the Delaunay triangulation.");

    py::class_<GnnModel>(m, "Model")
        .def_property_readonly("input_dim", &GnnModel::input_dim)
        .def_property_readonly("depth", &GnnModel::depth)
        .def_property_readonly("parameter_count", &GnnModel::parameter_count)
        .def("graph_score", py::overload_cast<const GnnModel&, const WsiGraph&>(&graph_score), py::arg("graph"))
        .def(
            "node_scores", [](const GnnModel& model, const WsiGraph& g) { return to_array(node_predictions(model, g).total); },
            py::arg("graph"))
        .def(
            "patient_score",
            [](const GnnModel& model, const std::vector<WsiGraph>& graphs, const std::string& pooling) {
                if (pooling != "sum" && pooling != "mean") throw InputError("pooling must be sum or mean");
                PatientBag bag{"patient", graphs, 0};
                return patient_score(model, bag, pooling == "sum" ? BagPooling::sum : BagPooling::mean);
            },
            py::arg("graphs"), py::arg("pooling") = "sum")
        .def("parameters",
             [](const GnnModel& model) {
                 py::dict out;
                 for (const auto& p : model.parameters()) out[py::str(p.name)] = to_array(std::vector<double>(p.values.begin(), p.values.end()));
                 return out;
             })
        .def("save", [](const GnnModel& model, const std::filesystem::path& path, std::uint64_t seed) {
            io::save_checkpoint(path, io::Checkpoint{model, nlohmann::json::object(), seed});
        }, py::arg("path"), py::arg("seed") = 0);

    m.def(
        "make_model",
        [](std::size_t input_dim, std::vector<std::size_t> widths, std::uint64_t seed) {
            Rng rng(seed);
            return make_model(input_dim, widths, rng);
        },
        py::arg("input_dim"), py::arg("widths") = std::vector<std::size_t>(kDefaultDepth, kDefaultLayerWidth),
        py::arg("seed") = 0);
    m.def(
        "load_checkpoint",
        [](const std::filesystem::path& path) {
            io::Checkpoint ck = io::load_checkpoint(path);
            return py::make_tuple(std::move(ck.model), py::module_::import("json").attr("loads")(ck.config.dump()), ck.seed);
        },
        py::arg("path"), "Returns (model, config dict, seed).");

    m.def("auroc", [](const std::vector<double>& s, const std::vector<int>& y) { return auroc(cohort(s, y, std::nullopt)); },
          py::arg("scores"), py::arg("labels"));
    m.def(
        "average_precision",
        [](const std::vector<double>& s, const std::vector<int>& y, std::optional<std::vector<std::string>> ids) {
            return average_precision(cohort(s, y, std::move(ids)));
        },
        py::arg("scores"), py::arg("labels"), py::arg("ids") = py::none());
    m.def(
        "bootstrap_compare",
        [](const std::vector<double>& scores_a, const std::vector<double>& scores_b, const std::vector<int>& labels,
           std::optional<std::vector<std::string>> ids, const std::string& metric, std::size_t runs, std::uint64_t seed) {
            const ScoredCohort a = cohort(scores_a, labels, ids), b = cohort(scores_b, labels, ids);
            const BootstrapReport r = bootstrap_compare(a, b, metric_from_name(metric), runs, seed);
            py::dict out;
            out["p_value"] = r.p_value;
            out["values_a"] = to_array(r.values_a);
            out["values_b"] = to_array(r.values_b);
            out["redraws"] = r.redraws;
            return out;
        },
        py::arg("scores_a"), py::arg("scores_b"), py::arg("labels"), py::arg("ids") = py::none(),
        py::arg("metric") = "auroc", py::arg("runs") = kDefaultBootstrapRuns, py::arg("seed") = 0);

    m.def(
        "ranking_loss",
        [](const std::vector<double>& scores, const std::vector<int>& labels, double margin) {
            const RankingLoss r = ranking_loss(scores, labels, margin);
            return py::make_tuple(r.loss, to_array(r.gradient));
        },
        py::arg("scores"), py::arg("labels"), py::arg("margin") = 1.0, "Returns (loss, d loss / d scores).");
    m.def(
        "stratified_kfold",
        [](const std::vector<std::string>& ids, const std::vector<int>& labels, std::size_t folds, std::uint64_t seed) {
            return stratified_kfold(ids, labels, folds, seed).fold;
        },
        py::arg("patient_ids"), py::arg("labels"), py::arg("folds") = 5, py::arg("seed") = 0);

    m.def(
        "gmm_binarize",
        [](const std::vector<double>& values, std::size_t restarts, std::size_t max_iterations) {
            GmmOptions opt;
            opt.restarts = restarts;
            opt.max_iterations = max_iterations;
            const GmmFit fit = gmm_binarize(values, opt);
            py::dict out;
            out["labels"] = fit.labels;
            out["means"] = fit.params.means;
            out["variances"] = fit.params.variances;
            out["weights"] = fit.params.weights;
            out["log_likelihood"] = fit.params.log_likelihood;
            out["iterations"] = fit.params.iterations;
            return out;
        },
        py::arg("values"), py::arg("restarts") = 10, py::arg("max_iterations") = 500);
    m.def(
        "group_labels",
        [](const Array& dm_values, std::vector<std::string> patients, std::vector<std::string> genes, std::size_t k,
           const std::string& linkage) {
            DmMatrix dm{std::move(patients), std::move(genes), to_matrix(dm_values, "dm")};
            const LabelDerivation d = make_labels(dm, k, linkage_from_name(linkage));
            py::dict out;
            out["assignment"] = d.grouping.assignment;
            out["mean_dm"] = to_array(d.labels.mean_dm);
            out["labels"] = to_array(d.labels.binary);
            out["newick"] = dendrogram_newick(d.grouping, dm.genes);
            return out;
        },
        py::arg("dm"), py::arg("patients"), py::arg("genes"), py::arg("k") = 2, py::arg("linkage") = "ward");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int rc;
            {
                py::gil_scoped_release release;
                rc = cli::run(args, out, err);
            }
            return py::make_tuple(rc, out.str(), err.str());
        },
        py::arg("args"), "Runs one command line; returns (exit code, stdout, stderr).");
}
