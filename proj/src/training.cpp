#include "methylgraph/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <thread>
#include <utility>

#include "methylgraph/adam.hpp"
#include "methylgraph/error.hpp"
#include "methylgraph/metrics.hpp"

namespace methylgraph {

RankingLoss ranking_loss(std::span<const double> scores, std::span<const int> labels, double margin) {
    if (scores.size() != labels.size()) {
        throw ShapeError("ranking_loss: " + std::to_string(scores.size()) + " scores but " +
                         std::to_string(labels.size()) + " labels");
    }
    RankingLoss out;
    out.gradient.assign(scores.size(), 0.0);
    std::size_t pos = 0, neg = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw InputError("ranking_loss: labels must be 0 or 1");
        (y == 1 ? pos : neg) += 1;
    }
    out.pairs = pos * neg;
    if (out.pairs == 0) {
        out.no_pairs = true;
        return out;
    }
    const double scale = 1.0 / static_cast<double>(out.pairs);
    double total = 0.0;
    for (std::size_t p = 0; p < scores.size(); ++p) {
        if (labels[p] != 1) continue;
        for (std::size_t q = 0; q < scores.size(); ++q) {
            if (labels[q] != 0) continue;
            const double slack = margin - (scores[p] - scores[q]);
            if (slack > 0) {
                total += slack;
                out.gradient[p] -= scale;
                out.gradient[q] += scale;
            }
        }
    }
    out.loss = total * scale;
    return out;
}

std::size_t FoldSplit::fold_of(const std::string& patient_id) const {
    auto it = std::find(patient_ids.begin(), patient_ids.end(), patient_id);
    if (it == patient_ids.end()) throw InputError("patient " + patient_id + " is not in the fold split");
    return fold[static_cast<std::size_t>(it - patient_ids.begin())];
}

void FoldSplit::validate() const {
    if (fold.size() != patient_ids.size()) throw InputError("fold split: id and fold lists differ in length");
    if (folds < 2) throw InputError("fold split: need at least 2 folds");
    for (std::size_t i = 0; i < fold.size(); ++i) {
        if (fold[i] >= folds) {
            throw InputError("fold split: patient " + patient_ids[i] + " has fold " + std::to_string(fold[i]) +
                             " outside [0, " + std::to_string(folds) + ")");
        }
    }
    if (std::set<std::string>(patient_ids.begin(), patient_ids.end()).size() != patient_ids.size()) {
        throw InputError("fold split: duplicate patient ids");
    }
}

FoldSplit stratified_kfold(std::span<const std::string> patient_ids, std::span<const int> labels, std::size_t folds,
                           std::uint64_t seed) {
    if (patient_ids.size() != labels.size()) throw ShapeError("stratified_kfold: ids and labels differ in length");
    if (folds < 2) throw InputError("stratified_kfold: need at least 2 folds");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw InputError("stratified_kfold: labels must be 0 or 1");
        (labels[i] == 1 ? pos : neg).push_back(i);
    }
    if (std::min(pos.size(), neg.size()) < folds) {
        throw StratificationError("cannot stratify " + std::to_string(pos.size()) + " positive and " +
                                  std::to_string(neg.size()) + " negative patients into " + std::to_string(folds) +
                                  " folds");
    }
    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    FoldSplit split;
    split.folds = folds;
    split.patient_ids.assign(patient_ids.begin(), patient_ids.end());
    split.fold.assign(patient_ids.size(), 0);
    std::size_t dealt = 0;
    for (std::size_t i : pos) split.fold[i] = dealt++ % folds;
    for (std::size_t i : neg) split.fold[i] = dealt++ % folds;
    split.validate();
    return split;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InputError("epochs must be at least 1");
    if (batch_size < 1) throw InputError("batch_size must be at least 1");
    if (layers < 1) throw InputError("layers must be at least 1");
    if (width < 1) throw InputError("width must be at least 1");
    if (folds < 2) throw InputError("folds must be at least 2");
    if (!(lr >= 0) || !std::isfinite(lr)) throw InputError("lr must be a finite value >= 0");
    if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw InputError("weight_decay must be finite and >= 0");
    if (!(margin > 0) || !std::isfinite(margin)) throw InputError("margin must be finite and > 0");
    if (threads < 1) throw InputError("threads must be at least 1");
}

namespace {

void check_bags(const GnnModel& model, std::span<const PreparedBag> bags, const char* what) {
    for (const PreparedBag& bag : bags) {
        if (bag.graphs.empty()) throw InputError(std::string(what) + " patient " + bag.patient_id + " has no graphs");
        if (bag.label != 0 && bag.label != 1) throw InputError("patient " + bag.patient_id + " has a non-binary label");
        for (const PreparedGraph& g : bag.graphs) {
            if (g.features.cols() != model.input_dim()) {
                throw ShapeError("patient " + bag.patient_id + " has feature dimension " +
                                 std::to_string(g.features.cols()) + ", model expects " +
                                 std::to_string(model.input_dim()));
            }
        }
    }
}

/// Runs body(i) for i in [0, n) on up to `threads` workers with contiguous chunks.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> workers;
        for (std::size_t t = 0; t < threads; ++t) {
            workers.emplace_back([&, t] {
                try {
                    for (std::size_t i = t * n / threads; i < (t + 1) * n / threads; ++i) body(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

double score_auroc(const GnnModel& model, std::span<const PreparedBag> bags, BagPooling pooling) {
    ScoredCohort c;
    for (const PreparedBag& b : bags) {
        c.patient_ids.push_back(b.patient_id);
        c.scores.push_back(patient_score(model, b, pooling));
        c.labels.push_back(b.label);
    }
    const bool both = std::count(c.labels.begin(), c.labels.end(), 1) > 0 &&
                      std::count(c.labels.begin(), c.labels.end(), 0) > 0;
    return both ? auroc(c) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

BatchGradient batch_gradient(const GnnModel& model, std::span<const PreparedBag* const> batch, double margin,
                             BagPooling pooling, std::size_t threads) {
    BatchGradient out;
    out.grads = GnnGrads::zeros_like(model);
    std::vector<int> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = batch[i]->label;
    out.scores.assign(batch.size(), 0.0);
    out.loss = ranking_loss(out.scores, labels, margin);
    if (out.loss.no_pairs) return out;

    std::vector<std::optional<BagTrace>> traces(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        traces[i].emplace(model, *batch[i], pooling);
        out.scores[i] = traces[i]->score();
    });
    out.loss = ranking_loss(out.scores, labels, margin);

    std::vector<GnnGrads> per_patient(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        per_patient[i] = GnnGrads::zeros_like(model);
        if (out.loss.gradient[i] != 0.0) traces[i]->backward(out.loss.gradient[i], per_patient[i]);
        traces[i].reset();
    });
    for (const GnnGrads& g : per_patient) out.grads.add(g);
    return out;
}

TrainResult train(GnnModel model, std::span<const PreparedBag> bags, const TrainConfig& config,
                  std::span<const PreparedBag> validation) {
    config.validate();
    check_bags(model, bags, "training");
    check_bags(model, validation, "validation");
    const auto positives = std::count_if(bags.begin(), bags.end(), [](const PreparedBag& b) { return b.label == 1; });
    if (positives == 0 || static_cast<std::size_t>(positives) == bags.size()) {
        throw InputError("training needs at least one positive and one negative patient");
    }
    const std::size_t threads = config.strict_deterministic ? 1 : config.threads;

    TrainResult result;
    std::vector<ParamRef> params = model.parameters();
    AdamState adam = AdamState::for_params(params);
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(bags.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0, zero_pair = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batches) {
            const std::size_t count = std::min(config.batch_size, order.size() - begin);
            std::vector<const PreparedBag*> batch(count);
            for (std::size_t i = 0; i < count; ++i) batch[i] = &bags[order[begin + i]];
            BatchGradient bg = batch_gradient(model, batch, config.margin, config.pooling, threads);
            if (bg.loss.no_pairs) {
                ++zero_pair;
                continue;
            }
            if (!std::isfinite(bg.loss.loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(batches + 1));
            }
            loss_sum += bg.loss.loss;
            adam_step(params, std::as_const(bg.grads).parameters(), adam, config.lr, config.weight_decay);
        }
        result.history.mean_loss.push_back(loss_sum / static_cast<double>(batches));
        result.history.zero_pair_batches.push_back(zero_pair);
        if (!validation.empty() && config.track_validation) {
            result.history.validation_auroc.push_back(score_auroc(model, validation, config.pooling));
        }
        result.history.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    result.model = std::move(model);
    return result;
}

TrainResult train(GnnModel model, std::span<const PatientBag> bags, const TrainConfig& config) {
    std::vector<PreparedBag> prepared;
    prepared.reserve(bags.size());
    for (const PatientBag& b : bags) prepared.push_back(PreparedBag::from(b));
    return train(std::move(model), prepared, config);
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(fold), 0x666f6c64u};
    std::mt19937_64 rng(seq);
    return rng();
}

CrossValidation cross_validate(std::span<const PatientBag> bags, const TrainConfig& config, const FoldSplit* split) {
    config.validate();
    if (bags.empty()) throw InputError("cross_validate: no patients");
    if (bags.front().graphs.empty()) throw InputError("patient " + bags.front().patient_id + " has no graphs");
    const std::size_t input_dim = bags.front().graphs.front().feature_dim;

    CrossValidation cv;
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const PatientBag& b : bags) {
        ids.push_back(b.patient_id);
        labels.push_back(b.label);
    }
    if (split) {
        split->validate();
        cv.split.folds = split->folds;
        cv.split.patient_ids = ids;
        for (const std::string& id : ids) cv.split.fold.push_back(split->fold_of(id));
    } else {
        cv.split = stratified_kfold(ids, labels, config.folds, config.seed);
    }

    std::vector<PreparedBag> prepared;
    prepared.reserve(bags.size());
    for (const PatientBag& b : bags) prepared.push_back(PreparedBag::from(b));

    cv.predictions.resize(bags.size());
    for (std::size_t f = 0; f < cv.split.folds; ++f) {
        std::vector<PreparedBag> train_set, held_out;
        std::vector<std::size_t> held_idx;
        for (std::size_t i = 0; i < prepared.size(); ++i) {
            if (cv.split.fold[i] == f) {
                held_out.push_back(prepared[i]);
                held_idx.push_back(i);
            } else {
                train_set.push_back(prepared[i]);
            }
        }
        if (held_out.empty()) throw InputError("fold " + std::to_string(f) + " has no patients");

        const std::uint64_t s = fold_seed(config.seed, f);
        Rng init(s);
        GnnModel model = make_model(input_dim, config.widths(), init);
        TrainConfig fold_config = config;
        fold_config.seed = s;
        TrainResult res = train(std::move(model), train_set, fold_config, held_out);

        for (std::size_t k = 0; k < held_out.size(); ++k) {
            const std::size_t i = held_idx[k];
            cv.predictions[i] = {ids[i], f, labels[i], patient_score(res.model, held_out[k], config.pooling)};
        }
        cv.fold_auroc.push_back(score_auroc(res.model, held_out, config.pooling));
        cv.models.push_back(std::move(res.model));
        cv.histories.push_back(std::move(res.history));
    }
    return cv;
}

}  // namespace methylgraph
