#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace methylgraph {

/// Patient-level scores with binary labels.
struct ScoredCohort {
    std::vector<std::string> patient_ids;
    std::vector<double> scores;
    std::vector<int> labels;

    /// Throws InputError on length mismatch, non-finite scores or labels outside {0, 1}.
    void validate() const;
    std::size_t size() const noexcept { return scores.size(); }
};

/// (#concordant pairs + 0.5 · #tied pairs) / (#pos · #neg).
/// Throws MetricUndefinedError unless both classes are present.
double auroc(const ScoredCohort& cohort);

/// Mean over positives of the precision at their rank. Ranking is by descending score with
/// ties broken by ascending patient id. Throws MetricUndefinedError without positives.
double average_precision(const ScoredCohort& cohort);

enum class Metric { auroc, ap };

std::string_view metric_name(Metric m);
Metric metric_from_name(std::string_view name);

double evaluate(Metric m, const ScoredCohort& cohort);

struct BootstrapReport {
    Metric metric = Metric::auroc;
    std::size_t n_runs = 0;
    std::uint64_t seed = 0;
    std::vector<double> values_a;
    std::vector<double> values_b;
    std::size_t redraws = 0;  // single-class resamples that were drawn again
    double p_value = 1.0;
};

inline constexpr std::size_t kDefaultBootstrapRuns = 1000;
inline constexpr std::size_t kMaxRedrawsPerRun = 100;

/// Paired bootstrap over patients: each run draws one resample (from a stream seeded by
/// (seed, run) only) and evaluates both methods on it. The p-value is
/// 2 · min(frac(diff <= 0), frac(diff >= 0)), clamped to [2 / n_runs, 1].
/// Throws PairingError unless a and b hold the same patients with the same labels.
BootstrapReport bootstrap_compare(const ScoredCohort& a, const ScoredCohort& b, Metric metric,
                                  std::size_t n_runs = kDefaultBootstrapRuns, std::uint64_t seed = 0);

}  // namespace methylgraph
