#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "methylgraph/gnn.hpp"

namespace methylgraph {

struct RankingLoss {
    double loss = 0.0;
    std::vector<double> gradient;  // d loss / d score, one per score
    std::size_t pairs = 0;         // positive-negative pairs in the batch
    bool no_pairs = false;         // batch lacked one of the classes; loss and gradient are zero
};

/// Mean over ordered (positive p, negative q) pairs of max(0, margin − (s_p − s_q)).
/// The subgradient is taken as 0 at the hinge kink. Throws ShapeError on length mismatch and
/// InputError on labels outside {0, 1}.
RankingLoss ranking_loss(std::span<const double> scores, std::span<const int> labels, double margin = 1.0);

struct FoldSplit {
    std::size_t folds = 0;
    std::vector<std::string> patient_ids;
    std::vector<std::size_t> fold;  // parallel to patient_ids

    /// Throws InputError for an unknown id.
    std::size_t fold_of(const std::string& patient_id) const;
    /// Throws InputError unless every fold index is below `folds` and ids are unique.
    void validate() const;
};

/// Shuffles each class with a seeded generator, then deals positives round-robin into the
/// folds and continues dealing negatives from where the positives stopped.
/// Throws StratificationError when a class has fewer patients than folds.
FoldSplit stratified_kfold(std::span<const std::string> patient_ids, std::span<const int> labels, std::size_t folds,
                           std::uint64_t seed);

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 8;
    std::size_t layers = kDefaultDepth;
    std::size_t width = kDefaultLayerWidth;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double margin = 1.0;
    std::uint64_t seed = 0;
    std::size_t folds = 5;
    bool strict_deterministic = false;
    std::size_t threads = 1;
    BagPooling pooling = BagPooling::sum;
    /// Score the validation set after every epoch when one is given.
    bool track_validation = true;

    /// Throws InputError on out-of-range values.
    void validate() const;
    std::vector<std::size_t> widths() const { return std::vector<std::size_t>(layers, width); }
};

struct TrainHistory {
    std::vector<double> mean_loss;             // per epoch, zero-pair batches count as 0
    std::vector<std::size_t> zero_pair_batches;
    std::vector<double> validation_auroc;      // empty without a validation set
    std::vector<double> epoch_seconds;         // wall clock, never written to result files
};

struct BatchGradient {
    RankingLoss loss;
    std::vector<double> scores;
    GnnGrads grads;  // d loss / d parameters; zero when the batch has no pairs
};

/// Ranking loss of one batch of patients and its gradient with respect to every parameter.
/// Patients are scored and differentiated independently (on up to `threads` workers) and
/// their gradients summed in batch order.
BatchGradient batch_gradient(const GnnModel& model, std::span<const PreparedBag* const> batch, double margin,
                             BagPooling pooling = BagPooling::sum, std::size_t threads = 1);

struct TrainResult {
    GnnModel model;
    TrainHistory history;
};

/// Mini-batch Adam training on the ranking loss. Each epoch shuffles the patients with a
/// generator seeded by config.seed, splits them into batches of config.batch_size and takes
/// one optimizer step per batch that contains both classes.
/// Per-patient gradients are reduced in patient order, so results do not depend on the
/// thread count. Throws NumericError with epoch and batch context on a non-finite loss.
TrainResult train(GnnModel model, std::span<const PreparedBag> bags, const TrainConfig& config,
                  std::span<const PreparedBag> validation = {});
TrainResult train(GnnModel model, std::span<const PatientBag> bags, const TrainConfig& config);

struct HeldOutPrediction {
    std::string patient_id;
    std::size_t fold = 0;
    int label = 0;
    double score = 0.0;
};

struct CrossValidation {
    FoldSplit split;
    std::vector<GnnModel> models;
    std::vector<TrainHistory> histories;
    std::vector<HeldOutPrediction> predictions;  // one per patient, in input order
    std::vector<double> fold_auroc;              // NaN for a fold lacking one class
};

/// Seed used to initialise the model of one fold.
std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold);

/// Trains one model per fold on the other folds and scores the held-out patients.
/// Uses `split` when given (for reruns on persisted folds), otherwise stratified_kfold.
CrossValidation cross_validate(std::span<const PatientBag> bags, const TrainConfig& config,
                               const FoldSplit* split = nullptr);

}  // namespace methylgraph
