// Acceptance suite: one PASS/FAIL line per criterion, tolerances fixed below.
// Usage: acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "methylgraph/error.hpp"
#include "methylgraph/gnn.hpp"
#include "methylgraph/io.hpp"
#include "methylgraph/methyl_labels.hpp"
#include "methylgraph/metrics.hpp"
#include "methylgraph/spatial_graph.hpp"
#include "methylgraph/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace methylgraph;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kPipelineSeed = 1;
constexpr std::size_t kBenchmarkEpochs = 100;
constexpr double kBenchmarkMinAuroc = 0.95;
constexpr double kBenchmarkSeconds = 300.0;
constexpr double kNullCentre = 0.5;
constexpr double kNullHalfWidth = 0.1;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradSeconds = 30.0;
constexpr double kMetricTol = 1e-12;
constexpr double kScoreTol = 1e-9;
constexpr double kGmmMeanTol = 0.05;
constexpr double kGmmMinAccuracy = 0.98;
constexpr double kBootstrapAlpha = 0.01;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

int cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int rc = cli::run(args, out, err);
    if (rc != 0) std::cerr << "command failed (" << rc << "): " << args.front() << "\n" << err.str();
    return rc;
}

// ---- pipeline ---------------------------------------------------------------

struct Pipeline {
    fs::path dir;
    bool ok = false;
    double mean_auroc = std::nan("");
    double seconds = 0;
    bool labels_match_planted = false;
};

Pipeline run_pipeline(const fs::path& dir, double rho, bool strict) {
    Pipeline p;
    p.dir = dir;
    fs::remove_all(dir);
    const std::string seed = std::to_string(kPipelineSeed);
    auto with_globals = [&](std::vector<std::string> args, const std::string& out) {
        args.insert(args.end(), {"--seed", seed, "--out", (dir / out).string()});
        if (strict) args.push_back("--strict-deterministic");
        return args;
    };
    const auto t0 = Clock::now();
    const bool ok =
        cli(with_globals({"synth", "--patients", "120", "--rho", num(rho, 17), "--shift", "2.0"}, "synth")) == 0 &&
        cli(with_globals({"group-labels", "--dm", (dir / "synth/dm.csv").string(), "--k", "2"}, "labels")) == 0 &&
        cli(with_globals({"build-graphs", "--manifest", (dir / "synth/cohort.json").string()}, "graphs")) == 0 &&
        cli(with_globals({"train", "--graphs", (dir / "graphs").string(), "--labels", (dir / "labels/labels.csv").string(),
                          "--group", "group1", "--epochs", std::to_string(kBenchmarkEpochs)},
                         "train")) == 0 &&
        cli(with_globals({"eval", "--predictions", (dir / "train/predictions.csv").string()}, "eval")) == 0 &&
        cli(with_globals({"heatmap", "--checkpoint", (dir / "train/group1/fold0.ckpt").string(), "--graph",
                          (dir / "graphs/graphs/P000_S0.json").string()},
                         "heatmap")) == 0;
    p.seconds = seconds_since(t0);
    if (!ok) return p;

    std::istringstream eval(io::read_file(dir / "eval/eval.csv"));
    for (std::string line; std::getline(eval, line);) {
        if (line.starts_with("group1,mean,")) p.mean_auroc = std::stod(line.substr(12, line.find(',', 12) - 12));
    }
    const auto derived = io::load_label_table(dir / "labels/labels.csv");
    const auto planted = io::load_label_table(dir / "synth/planted_labels.csv");
    p.labels_match_planted = derived.patient_ids == planted.patient_ids && derived.labels == planted.labels;
    p.ok = std::isfinite(p.mean_auroc);
    return p;
}

// ---- criteria ---------------------------------------------------------------

/// Sign of every ReLU pre-activation and every hinge term, from a scalar forward pass that
/// shares no code with the library. Central differences are only an estimate of the
/// derivative when this pattern is the same at both ends of the step.
std::vector<bool> kink_pattern(const GnnModel& model, const std::vector<PatientBag>& bags, const std::vector<int>& labels) {
    std::vector<bool> pattern;
    std::vector<double> scores;
    for (const PatientBag& bag : bags) {
        double score = 0;
        for (const WsiGraph& g : bag.graphs) {
            std::vector<std::vector<double>> h;
            for (const auto& n : g.nodes) h.push_back(n.features);
            const auto nbrs = neighbor_lists(g);
            for (std::size_t l = 0; l < model.depth(); ++l) {
                const Mlp& phi = model.layers()[l].phi;
                std::vector<std::vector<double>> next(h.size(), std::vector<double>(phi.out_dim(), 0.0));
                for (std::size_t i = 0; i < h.size(); ++i)
                    for (std::size_t j : nbrs[i]) {
                        std::vector<double> x = h[i];
                        for (std::size_t c = 0; c < h[i].size(); ++c) x.push_back(h[j][c] - h[i][c]);
                        for (const Dense& d : phi.layers()) {
                            std::vector<double> y(d.out_dim());
                            for (std::size_t o = 0; o < d.out_dim(); ++o) {
                                double acc = d.bias[o];
                                for (std::size_t c = 0; c < d.in_dim(); ++c) acc += x[c] * d.weight(c, o);
                                if (d.activation == Activation::relu) {
                                    pattern.push_back(acc > 0);
                                    acc = std::max(acc, 0.0);
                                }
                                y[o] = acc;
                            }
                            x = std::move(y);
                        }
                        for (std::size_t c = 0; c < x.size(); ++c) next[i][c] += x[c];
                    }
                h = std::move(next);
                for (const auto& row : h) score += test_util::mlp_row(model.scorers()[l], row)[0];
            }
        }
        scores.push_back(score);
    }
    for (std::size_t p = 0; p < scores.size(); ++p)
        for (std::size_t q = 0; q < scores.size(); ++q)
            if (labels[p] == 1 && labels[q] == 0) pattern.push_back(1.0 - (scores[p] - scores[q]) > 0);
    return pattern;
}

Outcome gradient_correctness() {
    constexpr std::size_t kMaxRedraws = 5;
    const auto t0 = Clock::now();
    std::size_t checked = 0, failed = 0, redrawn = 0;
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        for (std::size_t attempt = 0;; ++attempt) {
            std::mt19937_64 rng(1000 + seed + 1000 * attempt);
            std::uniform_int_distribution<std::size_t> width(4, 32), nodes(4, 30), dim(2, 6);
            const std::size_t d = dim(rng);
            std::vector<std::size_t> widths{width(rng), width(rng), width(rng)};
            if (seed == 0) widths = {32, 32, 32};
            std::vector<PatientBag> bags;
            std::vector<int> labels{1, 0, static_cast<int>(rng() % 2)};
            for (std::size_t i = 0; i < labels.size(); ++i) {
                bags.push_back(test_util::random_bag("p" + std::to_string(i), labels[i], 1, seed == 0 ? 10 : nodes(rng), d, rng));
            }
            std::vector<PreparedBag> prepared;
            for (const auto& b : bags) prepared.push_back(PreparedBag::from(b));
            std::vector<const PreparedBag*> batch;
            for (const auto& b : prepared) batch.push_back(&b);
            GnnModel model = test_util::random_model(d, widths, rng, 0.3);

            // The loss is rebuilt from patient scores, independently of the backward pass.
            auto loss = [&]() {
                std::vector<double> s;
                for (const auto& b : prepared) s.push_back(patient_score(model, b));
                double total = 0;
                std::size_t pairs = 0;
                for (std::size_t p = 0; p < s.size(); ++p)
                    for (std::size_t q = 0; q < s.size(); ++q)
                        if (labels[p] == 1 && labels[q] == 0) {
                            total += std::max(0.0, 1.0 - (s[p] - s[q]));
                            ++pairs;
                        }
                return total / static_cast<double>(pairs);
            };
            const BatchGradient bg = batch_gradient(model, batch, 1.0);
            auto params = model.parameters();
            auto grads = std::as_const(bg.grads).parameters();
            std::size_t instance_checked = 0, instance_failed = 0;
            double instance_worst = 0;
            bool straddles = false;
            for (std::size_t k = 0; k < params.size() && !straddles; ++k) {
                for (std::size_t i = 0; i < params[k].values.size() && !straddles; ++i) {
                    const double keep = params[k].values[i];
                    params[k].values[i] = keep + kGradStep;
                    const double up = loss();
                    params[k].values[i] = keep - kGradStep;
                    const double dn = loss();
                    params[k].values[i] = keep;
                    const double err = test_util::rel_err((up - dn) / (2 * kGradStep), grads[k].values[i]);
                    if (err > kGradRelTol) {
                        params[k].values[i] = keep + kGradStep;
                        const auto above = kink_pattern(model, bags, labels);
                        params[k].values[i] = keep - kGradStep;
                        const auto below = kink_pattern(model, bags, labels);
                        params[k].values[i] = keep;
                        straddles = above != below;
                        if (straddles) break;
                    }
                    instance_worst = std::max(instance_worst, err);
                    instance_failed += err > kGradRelTol;
                    ++instance_checked;
                }
            }
            if (straddles && attempt < kMaxRedraws) {
                ++redrawn;
                continue;
            }
            checked += instance_checked;
            failed += instance_failed + (straddles ? 1 : 0);
            worst = std::max(worst, instance_worst);
            break;
        }
    }
    const double secs = seconds_since(t0);
    return {failed == 0 && secs < kGradSeconds,
            std::to_string(checked) + " parameters over 20 instances, " + std::to_string(failed) +
                " over tolerance, worst rel err " + num(worst, 3) + ", " + std::to_string(redrawn) +
                " instances redrawn for a kink inside the difference step, " + num(secs, 3) + " s"};
}

Outcome delaunay_oracle() {
    std::size_t mismatched = 0, bad_circles = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(5000 + seed);
        const std::size_t n = std::uniform_int_distribution<std::size_t>(4, 60)(rng);
        std::uniform_real_distribution<double> u(0.0, 10000.0);
        std::vector<Point> pts(n);
        std::vector<oracle::P> op(n);
        for (std::size_t i = 0; i < n; ++i) {
            pts[i] = {u(rng), u(rng)};
            op[i] = {pts[i].x, pts[i].y};
        }
        const Triangulation tri = delaunay(pts);
        for (const auto& t : tri.triangles)
            for (std::size_t m = 0; m < n; ++m)
                if (m != t[0] && m != t[1] && m != t[2] && oracle::in_circle(op[t[0]], op[t[1]], op[t[2]], op[m]) > 0)
                    ++bad_circles;
        const auto edges = tri.edges();
        mismatched += std::set<oracle::Edge>(edges.begin(), edges.end()) != oracle::delaunay_edges(op);
    }
    return {mismatched == 0 && bad_circles == 0,
            "100 point sets, " + std::to_string(mismatched) + " edge-set mismatches, " + std::to_string(bad_circles) +
                " non-empty circumcircles"};
}

Outcome metric_oracles() {
    double worst_auroc = 0, worst_ap = 0;
    for (std::uint64_t c = 0; c < 500; ++c) {
        std::mt19937_64 rng(9000 + c);
        const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
        ScoredCohort cohort;
        // Coarse scores on some cohorts to exercise ties.
        const bool coarse = c % 3 == 0;
        std::normal_distribution<double> z(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            cohort.patient_ids.push_back("id" + std::to_string(rng() % 100000));
            cohort.labels.push_back(static_cast<int>(rng() % 2));
            const double s = z(rng) + 0.7 * cohort.labels.back();
            cohort.scores.push_back(coarse ? std::round(s * 2) / 2 : s);
        }
        cohort.labels[0] = 1;
        cohort.labels[1] = 0;
        for (std::size_t i = 0; i < n; ++i) cohort.patient_ids[i] += "_" + std::to_string(i);
        worst_auroc = std::max(worst_auroc, std::abs(auroc(cohort) - oracle::auroc_pairs(cohort.scores, cohort.labels)));
        worst_ap = std::max(worst_ap, std::abs(average_precision(cohort) -
                                               oracle::average_precision_pairs(cohort.scores, cohort.labels,
                                                                               cohort.patient_ids)));
    }
    ScoredCohort tied{{"a", "b", "c", "d", "e"}, {0.3, 0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0, 0}};
    const double tied_auroc = auroc(tied);
    return {worst_auroc <= kMetricTol && worst_ap <= kMetricTol && tied_auroc == 0.5,
            "500 cohorts, max |dAUROC| " + num(worst_auroc, 3) + ", max |dAP| " + num(worst_ap, 3) +
                ", all-tied AUROC " + num(tied_auroc, 17)};
}

Outcome benchmark(const Pipeline& p) {
    return {p.ok && p.mean_auroc >= kBenchmarkMinAuroc && p.seconds < kBenchmarkSeconds && p.labels_match_planted,
            "mean held-out AUROC " + num(p.mean_auroc) + " (need >= " + num(kBenchmarkMinAuroc) + "), " +
                num(p.seconds, 3) + " s, derived labels " + (p.labels_match_planted ? "match" : "differ from") +
                " planted labels"};
}

Outcome null_control(const Pipeline& p) {
    return {p.ok && std::abs(p.mean_auroc - kNullCentre) <= kNullHalfWidth,
            "mean held-out AUROC " + num(p.mean_auroc) + " (need " + num(kNullCentre) + " +/- " + num(kNullHalfWidth) +
                ")"};
}

Outcome gmm_recovery() {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> lo(-0.3, 0.1), hi(0.4, 0.1);
    std::vector<double> values;
    std::vector<int> truth;
    for (int i = 0; i < 500; ++i) {
        const int y = static_cast<int>(rng() % 2);
        truth.push_back(y);
        values.push_back(y ? hi(rng) : lo(rng));
    }
    const GmmFit fit = gmm_binarize(values);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += fit.labels[i] == truth[i];
    const double accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    std::size_t decreases = 0;
    for (const auto& trace : fit.traces)
        for (std::size_t i = 1; i < trace.size(); ++i) decreases += trace[i] < trace[i - 1];
    const bool means_ok =
        std::abs(fit.params.means[0] + 0.3) <= kGmmMeanTol && std::abs(fit.params.means[1] - 0.4) <= kGmmMeanTol;
    return {means_ok && accuracy >= kGmmMinAccuracy && decreases == 0,
            "means " + num(fit.params.means[0]) + ", " + num(fit.params.means[1]) + "; accuracy " + num(accuracy) + "; " +
                std::to_string(decreases) + " log-likelihood decreases over " + std::to_string(fit.traces.size()) +
                " restarts"};
}

WsiGraph disjoint_union(const std::vector<WsiGraph>& graphs) {
    std::vector<PatchNode> nodes;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    double x_shift = 0;
    for (const WsiGraph& g : graphs) {
        const std::size_t offset = nodes.size();
        double max_x = 0;
        for (const auto& n : g.nodes) {
            nodes.push_back(n);
            nodes.back().patch_id = g.slide_id + "/" + n.patch_id;
            nodes.back().x += x_shift;
            max_x = std::max(max_x, n.x);
        }
        x_shift += max_x + 1e6;
        for (auto [a, b] : g.edges) edges.emplace_back(a + offset, b + offset);
    }
    return assemble_graph(std::move(nodes), std::move(edges), "union");
}

Outcome score_consistency(const Pipeline& p) {
    if (!p.ok) return {false, "pipeline did not complete"};
    const fs::path graph_file = p.dir / "graphs/graphs/P000_S0.json";
    const io::Checkpoint ck = io::load_checkpoint(p.dir / "train/group1/fold0.ckpt");
    const WsiGraph graph = io::load_graph(graph_file);
    double sum = 0;
    for (const auto& row : io::load_heatmap_csv(p.dir / "heatmap/P000_S0_heatmap.csv")) sum += row.node_score;
    const double heat_gap = std::abs(sum - graph_score(ck.model, graph));

    // Patient score against the score of one graph holding all of the patient's slides.
    double union_gap = 0;
    std::size_t multi = 0;
    const auto index = nlohmann::json::parse(io::read_file(p.dir / "graphs/graphs.json"));
    for (const auto& patient : index["patients"]) {
        if (patient["graphs"].size() < 2) continue;
        PatientBag bag;
        for (const auto& rel : patient["graphs"]) bag.graphs.push_back(io::load_graph(p.dir / "graphs" / rel.get<std::string>()));
        union_gap = std::max(union_gap, std::abs(patient_score(ck.model, bag) - graph_score(ck.model, disjoint_union(bag.graphs))));
        ++multi;
    }
    return {heat_gap <= kScoreTol && union_gap <= kScoreTol && multi > 0,
            "|sum(heatmap csv) - graph score| " + num(heat_gap, 3) + "; max |patient - union graph| " +
                num(union_gap, 3) + " over " + std::to_string(multi) + " multi-slide patients"};
}

Outcome permutation_invariance() {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(3000 + seed);
        const std::size_t n = std::uniform_int_distribution<std::size_t>(3, 80)(rng);
        const WsiGraph g = test_util::random_graph(n, 4, rng);
        const GnnModel model = test_util::random_model(4, {16, 16, 16}, rng);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<PatchNode> nodes(n);
        for (std::size_t i = 0; i < n; ++i) nodes[perm[i]] = g.nodes[i];
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (auto [a, b] : g.edges) edges.emplace_back(std::min(perm[a], perm[b]), std::max(perm[a], perm[b]));
        std::sort(edges.begin(), edges.end());
        const WsiGraph relabeled = assemble_graph(std::move(nodes), std::move(edges), g.slide_id);
        worst = std::max(worst, std::abs(graph_score(model, g) - graph_score(model, relabeled)));
    }
    return {worst <= kScoreTol, "50 graphs, max |d graph score| " + num(worst, 3)};
}

Outcome determinism(const Pipeline& a, const Pipeline& b) {
    if (!a.ok || !b.ok) return {false, "pipeline did not complete"};
    std::vector<fs::path> files{"train/predictions.csv", "train/group1/predictions.csv", "train/group1/folds.csv",
                                "heatmap/P000_S0_heatmap.csv", "heatmap/P000_S0_heatmap.png"};
    for (int f = 0; f < 5; ++f) files.push_back("train/group1/fold" + std::to_string(f) + ".ckpt");
    std::size_t differing = 0;
    for (const fs::path& f : files) differing += io::read_file(a.dir / f) != io::read_file(b.dir / f);

    // Re-scoring the held-out patients with the saved checkpoints reproduces the predictions.
    std::size_t rescored_mismatch = 0;
    const auto index = nlohmann::json::parse(io::read_file(a.dir / "graphs/graphs.json"));
    std::map<std::string, std::vector<std::string>> graphs_of;
    for (const auto& patient : index["patients"]) graphs_of[patient["patient_id"]] = patient["graphs"];
    std::vector<GnnModel> models;
    for (int f = 0; f < 5; ++f) models.push_back(io::load_checkpoint(a.dir / ("train/group1/fold" + std::to_string(f) + ".ckpt")).model);
    for (const auto& row : io::load_predictions(a.dir / "train/predictions.csv")) {
        PatientBag bag;
        for (const auto& rel : graphs_of.at(row.patient_id)) bag.graphs.push_back(io::load_graph(a.dir / "graphs" / rel));
        rescored_mismatch += patient_score(models.at(row.fold), bag) != row.score;
    }
    return {differing == 0 && rescored_mismatch == 0,
            std::to_string(files.size() - differing) + "/" + std::to_string(files.size()) +
                " artifacts byte-identical across runs; " + std::to_string(rescored_mismatch) +
                " held-out scores differ on re-evaluation from checkpoints"};
}

Outcome bootstrap_sanity() {
    std::mt19937_64 rng(424242);
    std::normal_distribution<double> z(0.0, 1.0);
    ScoredCohort a, b;
    for (int i = 0; i < 200; ++i) {
        const int y = i % 2;
        const std::string id = "pt" + std::to_string(i);
        a.patient_ids.push_back(id);
        b.patient_ids.push_back(id);
        a.labels.push_back(y);
        b.labels.push_back(y);
        a.scores.push_back(2.5 * y + z(rng));
        b.scores.push_back(0.5 * y + z(rng));
    }
    const double gap = auroc(a) - auroc(b);
    const double self_p = bootstrap_compare(a, a, Metric::auroc, 1000, 11).p_value;
    const double planted_p = bootstrap_compare(a, b, Metric::auroc, 1000, 11).p_value;
    return {self_p == 1.0 && gap >= 0.2 && planted_p < kBootstrapAlpha,
            "self-comparison p " + num(self_p, 17) + "; AUROC gap " + num(gap) + " gives p " + num(planted_p) +
                " at 1000 runs"};
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "methylgraph_acceptance";
    fs::create_directories(work);

    std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
    Pipeline bench_a, bench_b, null_run;
    auto pipelines = [&] {
        if (bench_a.dir.empty()) {
            bench_a = run_pipeline(work / "benchmark_a", 0.3, true);
            bench_b = run_pipeline(work / "benchmark_b", 0.3, true);
            null_run = run_pipeline(work / "null", 0.0, false);
        }
    };

    criteria.emplace_back("gradient correctness", gradient_correctness);
    criteria.emplace_back("delaunay oracle", delaunay_oracle);
    criteria.emplace_back("metric oracles", metric_oracles);
    criteria.emplace_back("end-to-end synthetic benchmark", [&] { pipelines(); return benchmark(bench_a); });
    criteria.emplace_back("null-signal control", [&] { pipelines(); return null_control(null_run); });
    criteria.emplace_back("gmm recovery", gmm_recovery);
    criteria.emplace_back("score consistency through files", [&] { pipelines(); return score_consistency(bench_a); });
    criteria.emplace_back("permutation invariance", permutation_invariance);
    criteria.emplace_back("determinism", [&] { pipelines(); return determinism(bench_a, bench_b); });
    criteria.emplace_back("bootstrap sanity", bootstrap_sanity);

    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failures == 0 ? 0 : 1;
}
