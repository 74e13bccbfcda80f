#include "methylgraph/methyl_labels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "methylgraph/error.hpp"

namespace methylgraph {

void DmMatrix::validate() const {
    if (values.rows() != patients.size() || values.cols() != genes.size()) {
        throw InputError("DM matrix is " + shape_string(values) + " but has " + std::to_string(patients.size()) +
                         " patients and " + std::to_string(genes.size()) + " genes");
    }
    if (!values.all_finite()) throw InputError("DM matrix contains non-finite values");
    if (std::set<std::string>(patients.begin(), patients.end()).size() != patients.size()) {
        throw InputError("DM matrix has duplicate patient ids");
    }
    if (std::set<std::string>(genes.begin(), genes.end()).size() != genes.size()) {
        throw InputError("DM matrix has duplicate gene names");
    }
}

std::string_view linkage_name(Linkage l) {
    switch (l) {
        case Linkage::ward: return "ward";
        case Linkage::single: return "single";
        case Linkage::complete: return "complete";
        case Linkage::average: return "average";
    }
    return "ward";
}

Linkage linkage_from_name(std::string_view name) {
    if (name == "ward") return Linkage::ward;
    if (name == "single") return Linkage::single;
    if (name == "complete") return Linkage::complete;
    if (name == "average") return Linkage::average;
    throw InputError("unknown linkage '" + std::string(name) + "'");
}

namespace {

struct RawMerge {
    std::size_t a, b;  // representative genes
    double height;
};

/// Nearest-neighbour-chain agglomeration. Works on squared distances for Ward (heights are
/// reported as their square roots) and on plain distances otherwise.
std::vector<RawMerge> nn_chain(const DmMatrix& dm, Linkage linkage) {
    const std::size_t n = dm.genes.size();
    const std::size_t rows = dm.patients.size();
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                const double d = dm.values(r, i) - dm.values(r, j);
                s += d * d;
            }
            const double v = linkage == Linkage::ward ? s : std::sqrt(s);
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    auto D = [&](std::size_t i, std::size_t j) -> double& { return dist[i * n + j]; };

    std::vector<bool> active(n, true);
    std::vector<std::size_t> size(n, 1);
    std::vector<double> height(n, 0.0);
    std::vector<std::size_t> chain;
    std::vector<RawMerge> merges;
    std::size_t remaining = n;
    while (remaining > 1) {
        if (chain.empty()) {
            for (std::size_t i = 0; i < n; ++i) {
                if (active[i]) {
                    chain.push_back(i);
                    break;
                }
            }
        }
        const std::size_t a = chain.back();
        std::size_t best = n;
        double best_d = std::numeric_limits<double>::infinity();
        if (chain.size() >= 2) {
            best = chain[chain.size() - 2];
            best_d = D(a, best);
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (!active[j] || j == a) continue;
            if (D(a, j) < best_d) {
                best_d = D(a, j);
                best = j;
            }
        }
        if (chain.size() >= 2 && best == chain[chain.size() - 2]) {
            chain.pop_back();
            chain.pop_back();
            const std::size_t keep = std::min(a, best), drop = std::max(a, best);
            double h = linkage == Linkage::ward ? std::sqrt(best_d) : best_d;
            h = std::max({h, height[keep], height[drop]});
            merges.push_back({keep, drop, h});

            const double ni = static_cast<double>(size[keep]), nj = static_cast<double>(size[drop]);
            for (std::size_t k = 0; k < n; ++k) {
                if (!active[k] || k == keep || k == drop) continue;
                const double dik = D(keep, k), djk = D(drop, k);
                double v = 0.0;
                switch (linkage) {
                    case Linkage::ward: {
                        const double nk = static_cast<double>(size[k]);
                        v = ((ni + nk) * dik + (nj + nk) * djk - nk * best_d) / (ni + nj + nk);
                        break;
                    }
                    case Linkage::single: v = std::min(dik, djk); break;
                    case Linkage::complete: v = std::max(dik, djk); break;
                    case Linkage::average: v = (ni * dik + nj * djk) / (ni + nj); break;
                }
                D(keep, k) = v;
                D(k, keep) = v;
            }
            active[drop] = false;
            size[keep] += size[drop];
            height[keep] = h;
            --remaining;
        } else {
            chain.push_back(best);
        }
    }
    return merges;
}

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
};

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string newick_label(const std::string& name) {
    if (name.find_first_of(" ()[]',;:\t") == std::string::npos) return name;
    std::string out = "'";
    for (char c : name) {
        if (c == '\'') out += "''";
        else out += c;
    }
    return out + "'";
}

}  // namespace

GeneGrouping hier_cluster(const DmMatrix& dm, std::size_t k, Linkage linkage) {
    dm.validate();
    const std::size_t n = dm.genes.size();
    if (n < 2) throw InputError("hier_cluster: need at least 2 genes");
    if (k < 1 || k > n) {
        throw InputError("hier_cluster: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }

    std::vector<RawMerge> raw = nn_chain(dm, linkage);
    std::stable_sort(raw.begin(), raw.end(), [](const RawMerge& x, const RawMerge& y) { return x.height < y.height; });

    GeneGrouping g;
    g.k = k;
    UnionFind uf(n);
    std::vector<std::size_t> cluster_id(n);
    std::iota(cluster_id.begin(), cluster_id.end(), std::size_t{0});
    std::vector<std::size_t> cluster_size(n, 1);
    std::vector<std::size_t> cut_parent;
    for (std::size_t m = 0; m < raw.size(); ++m) {
        const std::size_t ra = uf.find(raw[m].a), rb = uf.find(raw[m].b);
        std::size_t left = cluster_id[ra], right = cluster_id[rb];
        if (left > right) std::swap(left, right);
        const std::size_t sz = cluster_size[ra] + cluster_size[rb];
        g.merge_tree.push_back({left, right, raw[m].height, sz});
        uf.parent[rb] = ra;
        cluster_id[ra] = n + m;
        cluster_size[ra] = sz;
        if (m + 1 == n - k) cut_parent = [&] {
            std::vector<std::size_t> roots(n);
            for (std::size_t i = 0; i < n; ++i) roots[i] = uf.find(i);
            return roots;
        }();
    }
    if (k == n) {
        cut_parent.resize(n);
        std::iota(cut_parent.begin(), cut_parent.end(), std::size_t{0});
    }

    // Collect groups, then order them by median DM.
    std::vector<std::size_t> roots = cut_parent;
    std::vector<std::size_t> distinct = roots;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    struct GroupKey {
        double median;
        std::size_t first_gene;
        std::size_t root;
    };
    std::vector<GroupKey> keys;
    for (std::size_t root : distinct) {
        std::vector<double> block;
        std::size_t first = n;
        for (std::size_t gi = 0; gi < n; ++gi) {
            if (roots[gi] != root) continue;
            first = std::min(first, gi);
            for (std::size_t r = 0; r < dm.patients.size(); ++r) block.push_back(dm.values(r, gi));
        }
        keys.push_back({median_of(std::move(block)), first, root});
    }
    std::sort(keys.begin(), keys.end(), [](const GroupKey& x, const GroupKey& y) {
        return x.median != y.median ? x.median < y.median : x.first_gene < y.first_gene;
    });
    g.assignment.assign(n, 0);
    for (std::size_t gi = 0; gi < n; ++gi) {
        for (std::size_t idx = 0; idx < keys.size(); ++idx) {
            if (keys[idx].root == roots[gi]) g.assignment[gi] = idx;
        }
    }
    return g;
}

std::string dendrogram_newick(const GeneGrouping& grouping, std::span<const std::string> gene_names) {
    const std::size_t n = gene_names.size();
    if (grouping.merge_tree.size() + 1 != n) throw InputError("dendrogram_newick: merge tree does not match gene count");
    auto node_height = [&](std::size_t id) { return id < n ? 0.0 : grouping.merge_tree[id - n].height; };
    std::vector<std::string> text(2 * n - 1);
    for (std::size_t i = 0; i < n; ++i) text[i] = newick_label(gene_names[i]);
    for (std::size_t m = 0; m < grouping.merge_tree.size(); ++m) {
        const Merge& mg = grouping.merge_tree[m];
        const double h = mg.height;
        text[n + m] = "(" + text[mg.left] + ":" + format_double(h - node_height(mg.left)) + "," + text[mg.right] +
                      ":" + format_double(h - node_height(mg.right)) + ")";
        text[mg.left].clear();
        text[mg.right].clear();
    }
    return text.back() + ";";
}

Matrix group_mean_dm(const DmMatrix& dm, const GeneGrouping& grouping) {
    if (grouping.assignment.size() != dm.genes.size()) {
        throw InputError("group_mean_dm: grouping covers " + std::to_string(grouping.assignment.size()) +
                         " genes, matrix has " + std::to_string(dm.genes.size()));
    }
    std::vector<std::size_t> counts(grouping.k, 0);
    for (std::size_t g : grouping.assignment) {
        if (g >= grouping.k) throw InputError("group_mean_dm: group index out of range");
        ++counts[g];
    }
    Matrix out(dm.patients.size(), grouping.k);
    for (std::size_t r = 0; r < dm.patients.size(); ++r) {
        for (std::size_t gi = 0; gi < dm.genes.size(); ++gi) out(r, grouping.assignment[gi]) += dm.values(r, gi);
        for (std::size_t g = 0; g < grouping.k; ++g) {
            if (counts[g] == 0) throw InputError("group_mean_dm: group " + std::to_string(g) + " is empty");
            out(r, g) /= static_cast<double>(counts[g]);
        }
    }
    return out;
}

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2π))

double log_normal(double x, double mean, double var) {
    const double d = x - mean;
    return -kLogSqrt2Pi - 0.5 * std::log(var) - 0.5 * d * d / var;
}

double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct EmRun {
    GmmParams params;
    std::vector<double> trace;
    bool converged = false;
    bool degenerate = false;
};

/// Mean log-likelihood under `p`; fills responsibilities of component 1.
double e_step(std::span<const double> x, const GmmParams& p, std::vector<double>& resp1) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double l0 = std::log(p.weights[0]) + log_normal(x[i], p.means[0], p.variances[0]);
        const double l1 = std::log(p.weights[1]) + log_normal(x[i], p.means[1], p.variances[1]);
        const double m = std::max(l0, l1);
        const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
        resp1[i] = std::exp(l1 - lse);
        total += lse;
    }
    return total / static_cast<double>(x.size());
}

EmRun run_em(std::span<const double> x, GmmParams p, const GmmOptions& opt) {
    EmRun run;
    const double n = static_cast<double>(x.size());
    std::vector<double> r1(x.size());
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
        const double ll = e_step(x, p, r1);
        run.trace.push_back(ll);
        p.log_likelihood = ll;
        p.iterations = it;
        if (ll - prev < opt.tolerance) {
            run.converged = true;
            break;
        }
        prev = ll;

        double n1 = 0.0, s1 = 0.0, s0 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            n1 += r1[i];
            s1 += r1[i] * x[i];
            s0 += (1.0 - r1[i]) * x[i];
        }
        const double n0 = n - n1;
        if (n0 <= 1e-12 || n1 <= 1e-12) {
            run.degenerate = true;
            break;
        }
        p.means = {s0 / n0, s1 / n1};
        double v0 = 0.0, v1 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d0 = x[i] - p.means[0], d1 = x[i] - p.means[1];
            v0 += (1.0 - r1[i]) * d0 * d0;
            v1 += r1[i] * d1 * d1;
        }
        p.variances = {std::max(v0 / n0, opt.variance_floor), std::max(v1 / n1, opt.variance_floor)};
        p.weights = {n0 / n, n1 / n};
    }
    run.params = p;
    return run;
}

}  // namespace

GmmFit gmm_binarize(std::span<const double> values, const GmmOptions& options) {
    if (values.size() < 4) throw InputError("gmm_binarize: need at least 4 values, got " + std::to_string(values.size()));
    for (double v : values) {
        if (!std::isfinite(v)) throw InputError("gmm_binarize: non-finite value");
    }
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    if (std::sqrt(ss / (n - 1.0)) <= 1e-9) {
        throw NumericError("gmm_binarize: values are (nearly) constant; cannot fit a two-component mixture");
    }
    const double var0 = std::max(ss / n, options.variance_floor);

    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());

    GmmFit fit;
    const EmRun* best = nullptr;
    std::vector<EmRun> runs;
    runs.reserve(options.restarts);
    double best_any = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < options.restarts; ++r) {
        const double q = 0.05 + 0.04 * static_cast<double>(r);
        GmmParams init;
        init.means = {quantile(sorted, q), quantile(sorted, 1.0 - q)};
        init.variances = {var0, var0};
        init.weights = {0.5, 0.5};
        runs.push_back(run_em(values, init, options));
        fit.traces.push_back(runs.back().trace);
        const EmRun& run = runs.back();
        best_any = std::max(best_any, run.params.log_likelihood);
        if (!run.converged || run.degenerate) continue;
        if (!best || run.params.log_likelihood > best->params.log_likelihood) best = &run;
    }
    if (!best) {
        throw ConvergenceError("gmm_binarize: EM did not converge within " + std::to_string(options.max_iterations) +
                                   " iterations in any restart (best mean log-likelihood " + std::to_string(best_any) + ")",
                               best_any);
    }

    GmmParams p = best->params;
    if (p.means[0] > p.means[1]) {
        std::swap(p.means[0], p.means[1]);
        std::swap(p.variances[0], p.variances[1]);
        std::swap(p.weights[0], p.weights[1]);
    }
    std::vector<double> r1(values.size());
    e_step(values, p, r1);
    fit.labels.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) fit.labels[i] = r1[i] > 0.5 ? 1 : 0;
    fit.params = p;
    return fit;
}

LabelDerivation make_labels(const DmMatrix& dm, std::size_t k, Linkage linkage, const GmmOptions& options) {
    LabelDerivation out;
    out.grouping = hier_cluster(dm, k, linkage);
    out.labels.patients = dm.patients;
    out.labels.mean_dm = group_mean_dm(dm, out.grouping);
    out.labels.binary = Matrix(dm.patients.size(), k);
    for (std::size_t g = 0; g < k; ++g) {
        std::vector<double> column(dm.patients.size());
        for (std::size_t r = 0; r < column.size(); ++r) column[r] = out.labels.mean_dm(r, g);
        GmmFit fit = gmm_binarize(column, options);
        for (std::size_t r = 0; r < column.size(); ++r) out.labels.binary(r, g) = fit.labels[r];
        out.labels.gmm.push_back(fit.params);
    }
    return out;
}

}  // namespace methylgraph
