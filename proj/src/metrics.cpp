#include "methylgraph/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include "methylgraph/error.hpp"

namespace methylgraph {

void ScoredCohort::validate() const {
    if (patient_ids.size() != scores.size() || labels.size() != scores.size()) {
        throw InputError("cohort has " + std::to_string(patient_ids.size()) + " ids, " +
                         std::to_string(scores.size()) + " scores and " + std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw InputError("non-finite score for patient " + patient_ids[i]);
        if (labels[i] != 0 && labels[i] != 1) throw InputError("label of patient " + patient_ids[i] + " is not 0 or 1");
    }
}

namespace {

/// AUROC over the items listed in `idx` (duplicates allowed).
double auroc_of(const std::vector<double>& scores, const std::vector<int>& labels, std::vector<std::size_t> idx) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double neg_below = 0, concordant = 0, tied = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        double gp = 0, gn = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] == 1 ? gp : gn) += 1;
            ++j;
        }
        concordant += gp * neg_below;
        tied += gp * gn;
        neg_below += gn;
        pos += gp;
        neg += gn;
        i = j;
    }
    if (pos == 0 || neg == 0) throw MetricUndefinedError("AUROC needs at least one positive and one negative patient");
    return (concordant + 0.5 * tied) / (pos * neg);
}

double ap_of(const std::vector<double>& scores, const std::vector<int>& labels, const std::vector<std::string>& ids,
             std::vector<std::size_t> idx) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        if (ids[a] != ids[b]) return ids[a] < ids[b];
        return a < b;
    });
    // Items with equal score and id (resampled copies of one patient) share a rank: each
    // positive among them sees all of them at or above itself.
    double hits = 0, sum = 0;
    for (std::size_t r = 0; r < idx.size();) {
        std::size_t last = r;
        double group_pos = labels[idx[r]] == 1;
        while (last + 1 < idx.size() && scores[idx[last + 1]] == scores[idx[r]] && ids[idx[last + 1]] == ids[idx[r]]) {
            ++last;
            group_pos += labels[idx[last]] == 1;
        }
        if (group_pos > 0) {
            hits += group_pos;
            sum += group_pos * (hits / static_cast<double>(last + 1));
        }
        r = last + 1;
    }
    if (hits == 0) throw MetricUndefinedError("average precision needs at least one positive patient");
    return sum / hits;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

}  // namespace

double auroc(const ScoredCohort& cohort) {
    cohort.validate();
    return auroc_of(cohort.scores, cohort.labels, all_indices(cohort.size()));
}

double average_precision(const ScoredCohort& cohort) {
    cohort.validate();
    return ap_of(cohort.scores, cohort.labels, cohort.patient_ids, all_indices(cohort.size()));
}

std::string_view metric_name(Metric m) { return m == Metric::auroc ? "auroc" : "ap"; }

Metric metric_from_name(std::string_view name) {
    if (name == "auroc") return Metric::auroc;
    if (name == "ap") return Metric::ap;
    throw InputError("unknown metric '" + std::string(name) + "' (expected auroc or ap)");
}

double evaluate(Metric m, const ScoredCohort& cohort) {
    return m == Metric::auroc ? auroc(cohort) : average_precision(cohort);
}

BootstrapReport bootstrap_compare(const ScoredCohort& a, const ScoredCohort& b, Metric metric, std::size_t n_runs,
                                  std::uint64_t seed) {
    a.validate();
    b.validate();
    if (n_runs == 0) throw InputError("bootstrap_compare: n_runs must be at least 1");
    if (a.size() != b.size()) {
        throw PairingError("prediction sets cover " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                           " patients");
    }
    std::unordered_map<std::string, std::size_t> where;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (!where.emplace(b.patient_ids[i], i).second) throw PairingError("duplicate patient id " + b.patient_ids[i]);
    }
    // Re-index b into a's patient order.
    std::vector<double> b_scores(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto it = where.find(a.patient_ids[i]);
        if (it == where.end()) throw PairingError("patient " + a.patient_ids[i] + " is missing from the second set");
        if (b.labels[it->second] != a.labels[i]) throw PairingError("patient " + a.patient_ids[i] + " has differing labels");
        b_scores[i] = b.scores[it->second];
        where.erase(it);
    }

    auto score = [&](const std::vector<double>& s, const std::vector<std::size_t>& idx) {
        return metric == Metric::auroc ? auroc_of(s, a.labels, idx) : ap_of(s, a.labels, a.patient_ids, idx);
    };

    BootstrapReport report;
    report.metric = metric;
    report.n_runs = n_runs;
    report.seed = seed;
    report.values_a.resize(n_runs);
    report.values_b.resize(n_runs);
    const std::size_t n = a.size();
    std::vector<std::size_t> idx(n);
    std::size_t le = 0, ge = 0;
    for (std::size_t run = 0; run < n_runs; ++run) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(run), static_cast<std::uint32_t>(run >> 32)};
        std::mt19937_64 rng(seq);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (std::size_t attempt = 0;; ++attempt) {
            std::size_t pos = 0;
            for (auto& i : idx) {
                i = pick(rng);
                pos += a.labels[i] == 1;
            }
            if (pos > 0 && pos < n) break;
            if (attempt == kMaxRedrawsPerRun) {
                throw MetricUndefinedError("bootstrap run " + std::to_string(run) + " drew a single-class resample " +
                                           std::to_string(kMaxRedrawsPerRun + 1) + " times");
            }
            ++report.redraws;
        }
        std::sort(idx.begin(), idx.end());
        report.values_a[run] = score(a.scores, idx);
        report.values_b[run] = score(b_scores, idx);
        const double diff = report.values_a[run] - report.values_b[run];
        le += diff <= 0;
        ge += diff >= 0;
    }
    const double runs = static_cast<double>(n_runs);
    const double p = 2.0 * std::min(static_cast<double>(le), static_cast<double>(ge)) / runs;
    report.p_value = std::clamp(p, std::min(1.0, 2.0 / runs), 1.0);
    return report;
}

}  // namespace methylgraph
