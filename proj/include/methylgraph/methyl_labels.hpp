#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "methylgraph/matrix.hpp"

namespace methylgraph {

/// Patients x genes differential-methylation values (hyper > 0, hypo < 0, normal = 0).
struct DmMatrix {
    std::vector<std::string> patients;
    std::vector<std::string> genes;
    Matrix values;

    /// Throws InputError on shape mismatch, non-finite entries or duplicate ids/names.
    void validate() const;
};

enum class Linkage { ward, single, complete, average };

std::string_view linkage_name(Linkage l);
Linkage linkage_from_name(std::string_view name);

/// One agglomeration step, scipy-linkage style: ids below the gene count are genes, id
/// gene_count + m is the cluster formed by merge m.
struct Merge {
    std::size_t left = 0;
    std::size_t right = 0;
    double height = 0.0;
    std::size_t size = 0;
};

struct GeneGrouping {
    std::size_t k = 0;
    std::vector<std::size_t> assignment;  // gene -> group in [0, k)
    std::vector<Merge> merge_tree;        // gene_count - 1 merges, heights non-decreasing
};

/// Agglomerative clustering of gene columns (Euclidean distance) cut into exactly k groups.
/// Groups are numbered by ascending median DM value of their block, ties by lowest gene index.
GeneGrouping hier_cluster(const DmMatrix& dm, std::size_t k, Linkage linkage = Linkage::ward);

/// Dendrogram in Newick form; branch lengths are merge-height differences.
std::string dendrogram_newick(const GeneGrouping& grouping, std::span<const std::string> gene_names);

/// patients x k matrix of per-group mean DM values.
Matrix group_mean_dm(const DmMatrix& dm, const GeneGrouping& grouping);

struct GmmParams {
    std::array<double, 2> means{};  // ascending: component 1 is the label-1 component
    std::array<double, 2> variances{};
    std::array<double, 2> weights{};
    double log_likelihood = 0.0;  // mean per value
    std::size_t iterations = 0;
};

struct GmmOptions {
    std::size_t restarts = 10;
    std::size_t max_iterations = 500;
    double tolerance = 1e-8;  // on the mean per-value log-likelihood gain
    double variance_floor = 1e-6;
};

struct GmmFit {
    std::vector<int> labels;
    GmmParams params;
    /// Per-restart sequence of mean log-likelihoods, one entry per EM iteration.
    std::vector<std::vector<double>> traces;
};

/// Two-component 1-D Gaussian mixture by EM; each value gets the label of its most probable
/// component, label 1 being the component with the larger mean.
/// Throws InputError for fewer than 4 values, NumericError when the sample standard
/// deviation is at most 1e-9, ConvergenceError when no restart converges.
GmmFit gmm_binarize(std::span<const double> values, const GmmOptions& options = {});

struct GroupLabels {
    std::vector<std::string> patients;
    Matrix mean_dm;  // patients x k
    Matrix binary;   // patients x k, entries 0 or 1
    std::vector<GmmParams> gmm;
};

struct LabelDerivation {
    GeneGrouping grouping;
    GroupLabels labels;
};

LabelDerivation make_labels(const DmMatrix& dm, std::size_t k, Linkage linkage = Linkage::ward,
                            const GmmOptions& options = {});

}  // namespace methylgraph
