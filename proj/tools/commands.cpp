#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "methylgraph/error.hpp"
#include "methylgraph/io.hpp"
#include "methylgraph/metrics.hpp"
#include "methylgraph/methyl_labels.hpp"
#include "methylgraph/synth.hpp"
#include "methylgraph/training.hpp"

#ifndef METHYLGRAPH_VERSION
#define METHYLGRAPH_VERSION "0.0.0"
#endif

namespace methylgraph::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    bool strict = false;
    std::string out = "run";
};

/// Bookkeeping for one command: echoes the resolved configuration, records input and output
/// files and finally writes run_manifest.json into the output directory.
class Run {
public:
    Run(std::string command, const Globals& g, std::ostream& err)
        : command_(std::move(command)), out_dir_(g.out), err_(err) {
        config_["seed"] = g.seed;
        config_["threads"] = g.threads;
        config_["strict_deterministic"] = g.strict;
        config_["out"] = g.out;
        if (!g.config.empty()) config_["config_file"] = g.config;
    }

    json& config() { return config_; }
    const fs::path& dir() const { return out_dir_; }
    fs::path path(const std::string& name) const { return out_dir_ / name; }

    void input(const fs::path& p) { inputs_.push_back(p); }
    void output(const fs::path& p) { outputs_.push_back(p); }

    void echo_config() {
        std::string log;
        for (const auto& [key, value] : config_.items()) {
            log += key + " = " + (value.is_string() ? value.get<std::string>() : value.dump()) + '\n';
        }
        err_ << "[" << command_ << "] resolved configuration\n" << log;
        io::write_file(path("run.log"), log);
    }

    void finish() {
        json manifest;
        manifest["command"] = command_;
        manifest["config"] = config_;
        manifest["inputs"] = hashes(inputs_, false);
        manifest["outputs"] = hashes(outputs_, true);
        manifest["versions"] = {{"methylgraph", METHYLGRAPH_VERSION},
                                {"checkpoint_format", io::kCheckpointVersion},
                                {"compiler", __VERSION__}};
        io::write_file(path("run_manifest.json"), manifest.dump(2) + "\n");
    }

private:
    json hashes(const std::vector<fs::path>& files, bool relative) const {
        json list = json::array();
        for (const fs::path& f : files) {
            const std::string shown = relative ? fs::relative(f, out_dir_).generic_string() : f.generic_string();
            list.push_back({{"path", shown}, {"sha256", io::sha256_file(f)}});
        }
        return list;
    }

    std::string command_;
    fs::path out_dir_;
    std::ostream& err_;
    json config_ = json::object();
    std::vector<fs::path> inputs_;
    std::vector<fs::path> outputs_;
};

void require_file(const fs::path& p, const std::string& what, const std::string& producer) {
    if (!fs::is_regular_file(p)) {
        throw IoError("missing " + what + " at " + p.string() + "; run `methylgraph " + producer + "` to produce it");
    }
}

std::string fmt(double v) { return std::isfinite(v) ? io::format_double(v) : std::string(); }

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
    SynthSpec spec;
};

void cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    SynthSpec spec = a.spec;
    spec.seed = g.seed;
    spec.validate();
    Run run("synth", g, err);
    auto& c = run.config();
    c["patients"] = spec.patients;
    c["slides_min"] = spec.slides_min;
    c["slides_max"] = spec.slides_max;
    c["patches_min"] = spec.patches_min;
    c["patches_max"] = spec.patches_max;
    c["grid_spacing"] = spec.grid_spacing_px;
    c["feature_dim"] = spec.feature_dim;
    c["rho"] = spec.signal_fraction;
    c["shift"] = spec.signal_shift;
    c["positive_fraction"] = spec.positive_fraction;
    c["genes_per_block"] = spec.genes_per_block;
    run.echo_config();

    const SynthCohort cohort = synthesize(spec);
    io::CohortManifest manifest;
    manifest.cohort = "synthetic";
    manifest.feature_dim = spec.feature_dim;
    manifest.patch_size_px = spec.grid_spacing_px;
    io::LabelTable truth{kSynthGroupNames, {}, {}};
    for (const SynthPatient& p : cohort.patients) {
        io::ManifestPatient mp{p.patient_id, {}, {}};
        for (const SynthSlide& s : p.slides) {
            const std::string rel = "features/" + s.slide_id + ".csv";
            io::save_features(run.path(rel), s.patches);
            run.output(run.path(rel));
            mp.wsi_feature_files.push_back(rel);
        }
        manifest.patients.push_back(std::move(mp));
        truth.patient_ids.push_back(p.patient_id);
        truth.labels.push_back({p.hypo_label, p.hyper_label});
    }
    io::save_manifest(run.path("cohort.json"), manifest);
    io::save_dm_matrix(run.path("dm.csv"), cohort.dm);
    io::save_label_table(run.path("planted_labels.csv"), truth);
    for (const char* f : {"cohort.json", "dm.csv", "planted_labels.csv"}) run.output(run.path(f));
    run.finish();
    out << "synthesized " << cohort.patients.size() << " patients into " << run.dir().string() << '\n';
}

// ---- group-labels -----------------------------------------------------------

struct GroupLabelArgs {
    std::string dm;
    std::size_t k = 2;
    std::string linkage = "ward";
    std::vector<std::string> group_names;
    GmmOptions gmm;
};

void cmd_group_labels(const GroupLabelArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    const Linkage linkage = linkage_from_name(a.linkage);
    std::vector<std::string> names = a.group_names;
    if (names.empty()) {
        for (std::size_t i = 0; i < a.k; ++i) names.push_back("group" + std::to_string(i));
    }
    if (names.size() != a.k) {
        throw InputError("--group-names lists " + std::to_string(names.size()) + " names for k = " + std::to_string(a.k));
    }
    if (std::set<std::string>(names.begin(), names.end()).size() != names.size()) {
        throw InputError("--group-names contains duplicates");
    }
    Run run("group-labels", g, err);
    auto& c = run.config();
    c["dm"] = a.dm;
    c["k"] = a.k;
    c["linkage"] = a.linkage;
    c["group_names"] = names;
    c["gmm_restarts"] = a.gmm.restarts;
    c["gmm_max_iterations"] = a.gmm.max_iterations;
    c["gmm_tolerance"] = a.gmm.tolerance;
    run.echo_config();

    require_file(a.dm, "DM matrix", "synth");
    run.input(a.dm);
    const DmMatrix dm = io::load_dm_matrix(a.dm);
    const LabelDerivation derived = make_labels(dm, a.k, linkage, a.gmm);

    io::save_label_table(run.path("labels.csv"), io::label_table_from(derived.labels, names));
    io::save_group_means(run.path("group_means.csv"), derived.labels, names);
    std::string genes = "gene,group\n";
    for (std::size_t i = 0; i < dm.genes.size(); ++i) genes += dm.genes[i] + ',' + names[derived.grouping.assignment[i]] + '\n';
    io::write_file(run.path("gene_groups.csv"), genes);
    io::write_file(run.path("dendrogram.nwk"), dendrogram_newick(derived.grouping, dm.genes) + "\n");
    json gmm = json::object();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const GmmParams& p = derived.labels.gmm[i];
        gmm[names[i]] = {{"means", p.means},
                         {"variances", p.variances},
                         {"weights", p.weights},
                         {"log_likelihood", p.log_likelihood},
                         {"iterations", p.iterations}};
    }
    io::write_file(run.path("gmm.json"), gmm.dump(2) + "\n");
    for (const char* f : {"labels.csv", "group_means.csv", "gene_groups.csv", "dendrogram.nwk", "gmm.json"}) {
        run.output(run.path(f));
    }
    run.finish();
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::size_t genes_in = 0, positives = 0;
        for (std::size_t gi : derived.grouping.assignment) genes_in += gi == i;
        for (std::size_t p = 0; p < dm.patients.size(); ++p) positives += derived.labels.binary(p, i) != 0.0;
        out << names[i] << ": " << genes_in << " genes, " << positives << "/" << dm.patients.size()
            << " patients labelled 1\n";
    }
}

// ---- build-graphs -----------------------------------------------------------

struct BuildGraphArgs {
    std::string manifest;
    double max_edge_px = kDefaultMaxEdgePx;
};

void cmd_build_graphs(const BuildGraphArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    if (!(a.max_edge_px > 0)) throw InputError("--max-edge-px must be positive");
    Run run("build-graphs", g, err);
    run.config()["manifest"] = a.manifest;
    run.config()["max_edge_px"] = a.max_edge_px;
    run.echo_config();

    require_file(a.manifest, "cohort manifest", "synth");
    const io::CohortManifest manifest = io::load_manifest(a.manifest);
    run.input(a.manifest);

    json index;
    index["cohort"] = manifest.cohort;
    index["feature_dim"] = manifest.feature_dim;
    index["patch_size_px"] = manifest.patch_size_px;
    index["max_edge_px"] = a.max_edge_px;
    index["patients"] = json::array();
    std::set<std::string> slide_ids;
    std::size_t slides = 0, edges = 0;
    for (const io::ManifestPatient& p : manifest.patients) {
        json entry{{"patient_id", p.patient_id}, {"labels", p.labels}, {"graphs", json::array()}};
        for (const std::string& f : p.wsi_feature_files) {
            const fs::path src = manifest.resolve(f);
            const std::string slide_id = src.stem().string();
            if (!slide_ids.insert(slide_id).second) {
                throw InputError("two feature files share the slide id '" + slide_id + "'");
            }
            run.input(src);
            WsiGraph graph = build_graph(io::load_features(src, manifest.feature_dim), a.max_edge_px, slide_id);
            graph.feature_dim = manifest.feature_dim;
            const std::string rel = "graphs/" + slide_id + ".json";
            io::save_graph(run.path(rel), graph);
            run.output(run.path(rel));
            entry["graphs"].push_back(rel);
            ++slides;
            edges += graph.edges.size();
        }
        index["patients"].push_back(std::move(entry));
    }
    io::write_file(run.path("graphs.json"), index.dump(2) + "\n");
    run.output(run.path("graphs.json"));
    run.finish();
    out << "built " << slides << " graphs with " << edges << " edges for " << manifest.patients.size()
        << " patients\n";
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string graphs;
    std::string labels;
    std::vector<std::string> groups;
    bool all_groups = false;
    std::string folds_file;
    TrainConfig config;
    std::string pooling = "sum";
};

struct GraphIndex {
    fs::path dir;
    json doc;
    std::vector<PatientBag> bags;
    std::map<std::string, std::map<std::string, int>> manifest_labels;
};

GraphIndex load_graph_index(const std::string& graphs_dir, Run& run) {
    GraphIndex gi;
    gi.dir = graphs_dir;
    const fs::path index = gi.dir / "graphs.json";
    require_file(index, "graph index", "build-graphs");
    run.input(index);
    try {
        gi.doc = json::parse(io::read_file(index));
        for (const json& p : gi.doc.at("patients")) {
            PatientBag bag;
            bag.patient_id = p.at("patient_id").get<std::string>();
            for (const json& rel : p.at("graphs")) {
                const fs::path file = gi.dir / rel.get<std::string>();
                require_file(file, "graph file", "build-graphs");
                run.input(file);
                bag.graphs.push_back(io::load_graph(file));
            }
            gi.manifest_labels[bag.patient_id] = p.value("labels", std::map<std::string, int>{});
            gi.bags.push_back(std::move(bag));
        }
    } catch (const json::exception& e) {
        throw IoError("malformed graph index " + index.string() + ": " + e.what());
    }
    if (gi.bags.empty()) throw InputError("graph index " + index.string() + " lists no patients");
    return gi;
}

void cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    TrainConfig cfg = a.config;
    cfg.seed = g.seed;
    cfg.strict_deterministic = g.strict;
    cfg.threads = g.strict ? 1 : g.threads;
    if (a.pooling != "sum" && a.pooling != "mean") throw InputError("--pooling must be sum or mean");
    cfg.pooling = a.pooling == "sum" ? BagPooling::sum : BagPooling::mean;
    cfg.validate();
    if (a.all_groups == !a.groups.empty()) throw InputError("train needs exactly one of --group or --all-groups");

    Run run("train", g, err);
    auto& c = run.config();
    c["graphs"] = a.graphs;
    c["labels"] = a.labels.empty() ? "<graph index>" : a.labels;
    c["groups"] = a.all_groups ? json("<all>") : json(a.groups);
    if (!a.folds_file.empty()) c["folds_file"] = a.folds_file;
    c["train"] = io::config_to_json(cfg);
    run.echo_config();

    GraphIndex gi = load_graph_index(a.graphs, run);
    std::optional<io::LabelTable> table;
    if (!a.labels.empty()) {
        require_file(a.labels, "label table", "group-labels");
        run.input(a.labels);
        table = io::load_label_table(a.labels);
    }
    std::vector<std::string> groups = a.groups;
    if (a.all_groups) {
        if (table) {
            groups = table->groups;
        } else {
            std::set<std::string> seen;
            for (const auto& [id, labels] : gi.manifest_labels)
                for (const auto& [name, y] : labels) seen.insert(name);
            groups.assign(seen.begin(), seen.end());
        }
        if (groups.empty()) throw InputError("no gene groups found; run `methylgraph group-labels` or add labels to the manifest");
    }

    std::optional<FoldSplit> persisted;
    if (!a.folds_file.empty()) {
        require_file(a.folds_file, "fold assignment", "train");
        run.input(a.folds_file);
        persisted = io::load_folds(a.folds_file);
    }

    std::vector<io::PredictionRow> all_rows;
    for (const std::string& group : groups) {
        std::vector<std::string> unlabelled;
        for (PatientBag& bag : gi.bags) {
            if (table) {
                const auto it = std::find(table->patient_ids.begin(), table->patient_ids.end(), bag.patient_id);
                if (it == table->patient_ids.end()) {
                    unlabelled.push_back(bag.patient_id);
                    continue;
                }
                bag.label = table->label(bag.patient_id, group);
            } else {
                const auto& labels = gi.manifest_labels.at(bag.patient_id);
                const auto it = labels.find(group);
                if (it == labels.end()) {
                    unlabelled.push_back(bag.patient_id);
                    continue;
                }
                bag.label = it->second;
            }
        }
        if (!unlabelled.empty()) {
            std::string msg = "group '" + group + "' has no label for " + std::to_string(unlabelled.size()) + " patient(s):";
            for (std::size_t i = 0; i < std::min<std::size_t>(unlabelled.size(), 10); ++i) msg += " " + unlabelled[i];
            throw InputError(msg);
        }

        const CrossValidation cv = cross_validate(gi.bags, cfg, persisted ? &*persisted : nullptr);
        const fs::path dir = run.path(group);
        for (std::size_t f = 0; f < cv.models.size(); ++f) {
            json ck_config = io::config_to_json(cfg);
            ck_config["group"] = group;
            ck_config["fold"] = f;
            const fs::path ckpt = dir / ("fold" + std::to_string(f) + ".ckpt");
            io::save_checkpoint(ckpt, io::Checkpoint{cv.models[f], ck_config, fold_seed(cfg.seed, f)});
            const fs::path hist = dir / ("history_fold" + std::to_string(f) + ".csv");
            io::save_history(hist, cv.histories[f]);
            run.output(ckpt);
            run.output(hist);
        }
        io::save_folds(dir / "folds.csv", cv.split);
        std::vector<io::PredictionRow> rows;
        for (const HeldOutPrediction& p : cv.predictions) rows.push_back({p.patient_id, group, p.fold, p.label, p.score});
        io::save_predictions(dir / "predictions.csv", rows);
        run.output(dir / "folds.csv");
        run.output(dir / "predictions.csv");
        all_rows.insert(all_rows.end(), rows.begin(), rows.end());

        double sum = 0;
        std::size_t n = 0;
        for (double v : cv.fold_auroc)
            if (std::isfinite(v)) sum += v, ++n;
        out << group << ": mean held-out AUROC " << fmt(n ? sum / static_cast<double>(n) : std::nan("")) << " over " << n
            << " folds\n";
    }
    io::save_predictions(run.path("predictions.csv"), all_rows);
    run.output(run.path("predictions.csv"));
    run.finish();
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string predictions;
};

ScoredCohort cohort_of(const std::vector<const io::PredictionRow*>& rows) {
    ScoredCohort c;
    for (const io::PredictionRow* r : rows) {
        c.patient_ids.push_back(r->patient_id);
        c.scores.push_back(r->score);
        c.labels.push_back(r->label);
    }
    return c;
}

std::vector<std::string> groups_in(const std::vector<io::PredictionRow>& rows) {
    std::vector<std::string> groups;
    for (const auto& r : rows)
        if (std::find(groups.begin(), groups.end(), r.group) == groups.end()) groups.push_back(r.group);
    return groups;
}

void cmd_eval(const EvalArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    Run run("eval", g, err);
    run.config()["predictions"] = a.predictions;
    run.echo_config();
    require_file(a.predictions, "prediction file", "train");
    run.input(a.predictions);
    const auto rows = io::load_predictions(a.predictions);
    if (rows.empty()) throw InputError(a.predictions + " holds no predictions");

    std::string csv = "group,fold,auroc,ap\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %6s %8s %8s\n", "group", "fold", "AUROC", "AP");
    out << line;
    for (const std::string& group : groups_in(rows)) {
        std::map<std::size_t, std::vector<const io::PredictionRow*>> by_fold;
        for (const auto& r : rows)
            if (r.group == group) by_fold[r.fold].push_back(&r);
        std::vector<double> aurocs, aps;
        for (const auto& [fold, members] : by_fold) {
            const ScoredCohort c = cohort_of(members);
            double au = std::nan(""), ap = std::nan("");
            try {
                au = auroc(c);
                ap = average_precision(c);
                aurocs.push_back(au);
                aps.push_back(ap);
            } catch (const MetricUndefinedError&) {
                err << "[eval] " << group << " fold " << fold << " holds a single class; metrics left empty\n";
            }
            csv += group + ',' + std::to_string(fold) + ',' + fmt(au) + ',' + fmt(ap) + '\n';
            std::snprintf(line, sizeof line, "%-16s %6zu %8.4f %8.4f\n", group.c_str(), fold, au, ap);
            out << line;
        }
        auto mean = [](const std::vector<double>& v) {
            double s = 0;
            for (double x : v) s += x;
            return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
        };
        auto sd = [&](const std::vector<double>& v) {
            if (v.size() < 2) return std::nan("");
            const double m = mean(v);
            double s = 0;
            for (double x : v) s += (x - m) * (x - m);
            return std::sqrt(s / static_cast<double>(v.size() - 1));
        };
        csv += group + ",mean," + fmt(mean(aurocs)) + ',' + fmt(mean(aps)) + '\n';
        csv += group + ",sd," + fmt(sd(aurocs)) + ',' + fmt(sd(aps)) + '\n';
        std::snprintf(line, sizeof line, "%-16s %6s %8.4f %8.4f\n%-16s %6s %8.4f %8.4f\n", group.c_str(), "mean",
                      mean(aurocs), mean(aps), group.c_str(), "sd", sd(aurocs), sd(aps));
        out << line;
    }
    io::write_file(run.path("eval.csv"), csv);
    run.output(run.path("eval.csv"));
    run.finish();
}

// ---- compare ----------------------------------------------------------------

struct CompareArgs {
    std::string a, b;
    std::string group;
    std::string metric = "auroc";
    std::size_t runs = kDefaultBootstrapRuns;
};

ScoredCohort group_cohort(const std::vector<io::PredictionRow>& rows, const std::string& group, const std::string& file) {
    std::vector<const io::PredictionRow*> members;
    for (const auto& r : rows)
        if (r.group == group) members.push_back(&r);
    if (members.empty()) throw InputError(file + " holds no predictions for group '" + group + "'");
    return cohort_of(members);
}

void cmd_compare(const CompareArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    const Metric metric = metric_from_name(a.metric);
    if (a.runs < 1) throw InputError("--runs must be at least 1");
    Run run("compare", g, err);
    auto& c = run.config();
    c["a"] = a.a;
    c["b"] = a.b;
    c["metric"] = a.metric;
    c["runs"] = a.runs;
    require_file(a.a, "prediction file", "train");
    require_file(a.b, "prediction file", "train");
    run.input(a.a);
    run.input(a.b);
    const auto rows_a = io::load_predictions(a.a);
    const auto rows_b = io::load_predictions(a.b);
    std::string group = a.group;
    if (group.empty()) {
        const auto ga = groups_in(rows_a);
        if (ga.size() != 1) throw InputError(a.a + " holds several groups; choose one with --group");
        group = ga.front();
    }
    c["group"] = group;
    run.echo_config();

    const ScoredCohort ca = group_cohort(rows_a, group, a.a);
    const ScoredCohort cb = group_cohort(rows_b, group, a.b);
    const BootstrapReport rep = bootstrap_compare(ca, cb, metric, a.runs, g.seed);
    const double est_a = evaluate(metric, ca), est_b = evaluate(metric, cb);

    json doc{{"group", group},
             {"metric", std::string(metric_name(metric))},
             {"n_runs", rep.n_runs},
             {"seed", rep.seed},
             {"estimate_a", est_a},
             {"estimate_b", est_b},
             {"redraws", rep.redraws},
             {"p_value", rep.p_value}};
    io::write_file(run.path("compare.json"), doc.dump(2) + "\n");
    std::string csv = "run,a,b\n";
    for (std::size_t i = 0; i < rep.values_a.size(); ++i) {
        csv += std::to_string(i) + ',' + fmt(rep.values_a[i]) + ',' + fmt(rep.values_b[i]) + '\n';
    }
    io::write_file(run.path("bootstrap.csv"), csv);
    run.output(run.path("compare.json"));
    run.output(run.path("bootstrap.csv"));
    run.finish();
    out << group << " " << metric_name(metric) << ": a = " << fmt(est_a) << ", b = " << fmt(est_b)
        << ", p = " << fmt(rep.p_value) << " (" << rep.n_runs << " bootstrap runs)\n";
}

// ---- heatmap ----------------------------------------------------------------

struct HeatmapArgs {
    std::string checkpoint;
    std::string graph;
    double downsample = 32.0;
    double patch_size_px = 1024.0;
};

void cmd_heatmap(const HeatmapArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    if (a.downsample < 0) throw InputError("--downsample must be non-negative (0 skips the PNG)");
    if (!(a.patch_size_px > 0)) throw InputError("--patch-size must be positive");
    Run run("heatmap", g, err);
    auto& c = run.config();
    c["checkpoint"] = a.checkpoint;
    c["graph"] = a.graph;
    c["downsample"] = a.downsample;
    c["patch_size_px"] = a.patch_size_px;
    run.echo_config();
    require_file(a.checkpoint, "checkpoint", "train");
    require_file(a.graph, "graph file", "build-graphs");
    run.input(a.checkpoint);
    run.input(a.graph);
    const io::Checkpoint ck = io::load_checkpoint(a.checkpoint);
    const WsiGraph graph = io::load_graph(a.graph);
    if (graph.feature_dim != ck.model.input_dim()) {
        throw ShapeError("graph " + graph.slide_id + " has " + std::to_string(graph.feature_dim) +
                         " features per node but the checkpoint expects " + std::to_string(ck.model.input_dim()));
    }
    const NodePredictions pred = node_predictions(ck.model, graph);
    const fs::path csv = run.path(graph.slide_id + "_heatmap.csv");
    const fs::path png = run.path(graph.slide_id + "_heatmap.png");
    io::export_heatmap(graph, pred.total, csv, png, a.downsample, a.patch_size_px);
    run.output(csv);
    if (a.downsample > 0) run.output(png);
    run.finish();
    out << graph.slide_id << ": graph score " << fmt(graph_score(ck.model, graph)) << " over " << graph.node_count()
        << " nodes\n";
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::validation: return kExitValidation;
        case ErrorKind::numeric: return kExitNumeric;
        case ErrorKind::io: return kExitIo;
    }
    return kExitIo;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spatial graph models of whole-slide images for methylation state prediction", "methylgraph"};
    app.set_version_flag("--version", METHYLGRAPH_VERSION);
    app.allow_config_extras(false);
    app.fallthrough();
    app.require_subcommand(1, 1);

    Globals g;
    auto* config_opt = app.set_config("--config", "", "TOML file supplying option values; command flags take precedence");
    app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads for training")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_flag("--strict-deterministic,--strict_deterministic", g.strict, "Force single-threaded numerics");
    app.add_option("--out", g.out, "Run directory receiving every output")->capture_default_str();

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a planted-signal cohort: feature files, manifest and DM matrix");
    s->add_option("--patients", synth.spec.patients, "Number of patients")->capture_default_str();
    s->add_option("--slides-min,--slides_min", synth.spec.slides_min, "Fewest slides per patient")->capture_default_str();
    s->add_option("--slides-max,--slides_max", synth.spec.slides_max, "Most slides per patient")->capture_default_str();
    s->add_option("--patches-min,--patches_min", synth.spec.patches_min, "Fewest patches per slide")->capture_default_str();
    s->add_option("--patches-max,--patches_max", synth.spec.patches_max, "Most patches per slide")->capture_default_str();
    s->add_option("--grid-spacing,--grid_spacing", synth.spec.grid_spacing_px, "Patch grid spacing in pixels")->capture_default_str();
    s->add_option("--feature-dim,--feature_dim", synth.spec.feature_dim, "Features per patch")->capture_default_str();
    s->add_option("--rho", synth.spec.signal_fraction, "Fraction of a positive slide's patches carrying signal")
        ->capture_default_str();
    s->add_option("--shift", synth.spec.signal_shift, "Length of the planted feature shift")->capture_default_str();
    s->add_option("--positive-fraction,--positive_fraction", synth.spec.positive_fraction, "Share of patients labelled 1")
        ->capture_default_str();
    s->add_option("--genes-per-block,--genes_per_block", synth.spec.genes_per_block, "Genes in each planted DM block")
        ->capture_default_str();

    GroupLabelArgs gl;
    auto* l = app.add_subcommand("group-labels", "Cluster genes into groups and binarize group-mean DM values");
    l->add_option("--dm", gl.dm, "DM matrix CSV (patient_id,<gene>,...)")->required();
    l->add_option("-k,--k", gl.k, "Number of gene groups")->capture_default_str();
    l->add_option("--linkage", gl.linkage, "ward, single, complete or average")->capture_default_str();
    l->add_option("--group-names,--group_names", gl.group_names, "Comma-separated names, one per group")->delimiter(',');
    l->add_option("--gmm-restarts,--gmm_restarts", gl.gmm.restarts, "EM restarts per group")->capture_default_str();
    l->add_option("--gmm-max-iterations,--gmm_max_iterations", gl.gmm.max_iterations, "EM iteration cap")->capture_default_str();
    l->add_option("--gmm-tolerance,--gmm_tolerance", gl.gmm.tolerance, "EM stopping tolerance")->capture_default_str();

    BuildGraphArgs bg;
    auto* b = app.add_subcommand("build-graphs", "Build one spatial graph per slide listed in a cohort manifest");
    b->add_option("--manifest", bg.manifest, "Cohort manifest JSON")->required();
    b->add_option("--max-edge-px,--max_edge_px", bg.max_edge_px, "Drop edges at least this long")->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Cross-validated training of one model per gene group");
    t->add_option("--graphs", tr.graphs, "Directory written by build-graphs")->required();
    t->add_option("--labels", tr.labels, "Label table from group-labels (default: manifest labels)");
    auto* group_opt = t->add_option("--group", tr.groups, "Gene group to train; repeatable");
    t->add_flag("--all-groups,--all_groups", tr.all_groups, "Train every group in the label table")->excludes(group_opt);
    t->add_option("--folds-file,--folds_file", tr.folds_file, "Reuse a persisted fold assignment");
    t->add_option("--epochs", tr.config.epochs, "Training epochs per fold")->capture_default_str();
    t->add_option("--batch-size,--batch_size", tr.config.batch_size, "Patients per batch")->capture_default_str();
    t->add_option("--layers", tr.config.layers, "EdgeConv layers")->capture_default_str();
    t->add_option("--width", tr.config.width, "Hidden width of every layer")->capture_default_str();
    t->add_option("--lr", tr.config.lr, "Adam learning rate")->capture_default_str();
    t->add_option("--weight-decay,--weight_decay", tr.config.weight_decay, "Decoupled weight decay")->capture_default_str();
    t->add_option("--margin", tr.config.margin, "Ranking-loss margin")->capture_default_str();
    t->add_option("--folds", tr.config.folds, "Cross-validation folds")->capture_default_str();
    t->add_option("--pooling", tr.pooling, "Slide-score pooling per patient: sum or mean")->capture_default_str();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Per-fold AUROC and AP with mean and standard deviation");
    e->add_option("--predictions", ev.predictions, "Prediction CSV written by train")->required();

    CompareArgs cmp;
    auto* c = app.add_subcommand("compare", "Paired bootstrap comparison of two prediction files");
    c->add_option("--a", cmp.a, "First prediction CSV")->required();
    c->add_option("--b", cmp.b, "Second prediction CSV")->required();
    c->add_option("--group", cmp.group, "Gene group to compare");
    c->add_option("--metric", cmp.metric, "auroc or ap")->capture_default_str();
    c->add_option("--runs", cmp.runs, "Bootstrap runs")->capture_default_str();

    HeatmapArgs hm;
    auto* h = app.add_subcommand("heatmap", "Node-score heatmap of one slide");
    h->add_option("--checkpoint", hm.checkpoint, "Checkpoint written by train")->required();
    h->add_option("--graph", hm.graph, "Graph JSON written by build-graphs")->required();
    h->add_option("--downsample", hm.downsample, "Pixels per raster pixel; 0 skips the PNG")->capture_default_str();
    h->add_option("--patch-size,--patch_size", hm.patch_size_px, "Patch side length in pixels")->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex, out, err);
    } catch (const CLI::CallForVersion& ex) {
        return app.exit(ex, out, err);
    } catch (const CLI::FileError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitIo;
    } catch (const CLI::ParseError& ex) {
        app.exit(ex, out, err);
        return kExitValidation;
    }

    if (config_opt->count() > 0) g.config = config_opt->as<std::string>();

    try {
        if (s->parsed()) cmd_synth(synth, g, out, err);
        if (l->parsed()) cmd_group_labels(gl, g, out, err);
        if (b->parsed()) cmd_build_graphs(bg, g, out, err);
        if (t->parsed()) cmd_train(tr, g, out, err);
        if (e->parsed()) cmd_eval(ev, g, out, err);
        if (c->parsed()) cmd_compare(cmp, g, out, err);
        if (h->parsed()) cmd_heatmap(hm, g, out, err);
    } catch (const Error& ex) {
        err << "error: " << ex.what() << '\n';
        return exit_code(ex.kind());
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitIo;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitValidation;
    }
    return kExitOk;
}

}  // namespace methylgraph::cli
