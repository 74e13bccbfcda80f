#include "methylgraph/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <utility>

#include "methylgraph/error.hpp"

namespace methylgraph {

void SynthSpec::validate() const {
    if (patients < 1) throw InputError("synth: patients must be at least 1");
    if (slides_min < 1 || slides_max < slides_min) throw InputError("synth: invalid slides-per-patient range");
    if (patches_min < 1 || patches_max < patches_min) throw InputError("synth: invalid patches-per-slide range");
    if (!(grid_spacing_px > 0)) throw InputError("synth: grid spacing must be positive");
    if (feature_dim < 1) throw InputError("synth: feature_dim must be at least 1");
    if (!(signal_fraction >= 0 && signal_fraction <= 1)) throw InputError("synth: signal_fraction must lie in [0, 1]");
    if (!std::isfinite(signal_shift)) throw InputError("synth: signal_shift must be finite");
    if (!(positive_fraction > 0 && positive_fraction < 1)) throw InputError("synth: positive_fraction must lie in (0, 1)");
    if (genes_per_block < 1) throw InputError("synth: genes_per_block must be at least 1");
}

namespace {

using Cell = std::pair<long, long>;

/// Connected blob of `count` grid cells grown from the origin by random frontier picks.
std::vector<Cell> grow_blob(std::size_t count, std::mt19937_64& rng) {
    std::vector<Cell> cells{{0, 0}};
    std::set<Cell> taken{{0, 0}};
    std::vector<Cell> frontier;
    auto push_neighbours = [&](Cell c) {
        for (auto [dx, dy] : {std::pair{1L, 0L}, {-1L, 0L}, {0L, 1L}, {0L, -1L}}) {
            Cell n{c.first + dx, c.second + dy};
            if (!taken.count(n)) frontier.push_back(n);
        }
    };
    push_neighbours(cells[0]);
    while (cells.size() < count) {
        std::uniform_int_distribution<std::size_t> pick(0, frontier.size() - 1);
        const std::size_t k = pick(rng);
        const Cell c = frontier[k];
        frontier[k] = frontier.back();
        frontier.pop_back();
        if (!taken.insert(c).second) continue;
        cells.push_back(c);
        push_neighbours(c);
    }
    return cells;
}

std::vector<int> planted_labels(std::size_t n, double fraction, std::mt19937_64& rng) {
    const std::size_t pos = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * n)), 1, n > 1 ? n - 1 : 1);
    std::vector<int> y(n, 0);
    std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(pos), 1);
    std::shuffle(y.begin(), y.end(), rng);
    return y;
}

}  // namespace

SynthCohort synthesize(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> n01(0.0, 1.0);

    SynthCohort cohort;
    cohort.signal_direction.resize(spec.feature_dim);
    double norm = 0;
    for (double& v : cohort.signal_direction) {
        v = n01(rng);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : cohort.signal_direction) v /= norm;

    const std::vector<int> hyper = planted_labels(spec.patients, spec.positive_fraction, rng);
    const std::vector<int> hypo = planted_labels(spec.patients, spec.positive_fraction, rng);

    std::uniform_int_distribution<std::size_t> slide_count(spec.slides_min, spec.slides_max);
    std::uniform_int_distribution<std::size_t> patch_count(spec.patches_min, spec.patches_max);
    const int width = static_cast<int>(std::to_string(spec.patients).size());
    for (std::size_t p = 0; p < spec.patients; ++p) {
        SynthPatient patient;
        std::string num = std::to_string(p);
        patient.patient_id = "P" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
        patient.hyper_label = hyper[p];
        patient.hypo_label = hypo[p];
        const std::size_t slides = slide_count(rng);
        for (std::size_t s = 0; s < slides; ++s) {
            SynthSlide slide;
            slide.slide_id = patient.patient_id + "_S" + std::to_string(s);
            const std::size_t m = patch_count(rng);
            std::vector<Cell> cells = grow_blob(m, rng);
            long min_x = 0, min_y = 0;
            for (auto [cx, cy] : cells) {
                min_x = std::min(min_x, cx);
                min_y = std::min(min_y, cy);
            }
            for (std::size_t i = 0; i < m; ++i) {
                PatchNode node;
                node.patch_id = slide.slide_id + "_p" + std::to_string(i);
                node.x = static_cast<double>(cells[i].first - min_x) * spec.grid_spacing_px;
                node.y = static_cast<double>(cells[i].second - min_y) * spec.grid_spacing_px;
                node.features.resize(spec.feature_dim);
                for (double& v : node.features) v = n01(rng);
                slide.patches.push_back(std::move(node));
            }
            // Signal region: the k patches nearest to a random centre patch.
            const std::size_t k = static_cast<std::size_t>(std::lround(spec.signal_fraction * static_cast<double>(m)));
            std::uniform_int_distribution<std::size_t> centre_pick(0, m - 1);
            const std::size_t centre = centre_pick(rng);
            if (patient.hyper_label == 1 && k > 0) {
                std::vector<std::size_t> order(m);
                std::iota(order.begin(), order.end(), std::size_t{0});
                auto d2 = [&](std::size_t i) {
                    const double dx = slide.patches[i].x - slide.patches[centre].x;
                    const double dy = slide.patches[i].y - slide.patches[centre].y;
                    return dx * dx + dy * dy;
                };
                std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d2(a) < d2(b); });
                for (std::size_t j = 0; j < k; ++j) {
                    auto& f = slide.patches[order[j]].features;
                    for (std::size_t c = 0; c < spec.feature_dim; ++c) f[c] += spec.signal_shift * cohort.signal_direction[c];
                }
            }
            patient.slides.push_back(std::move(slide));
        }
        cohort.patients.push_back(std::move(patient));
    }

    std::normal_distribution<double> noise(0.0, 0.05);
    const std::size_t g = spec.genes_per_block;
    cohort.dm.values = Matrix(spec.patients, 2 * g);
    for (std::size_t c = 0; c < g; ++c) cohort.dm.genes.push_back("HYPER" + std::to_string(c));
    for (std::size_t c = 0; c < g; ++c) cohort.dm.genes.push_back("HYPO" + std::to_string(c));
    for (std::size_t p = 0; p < spec.patients; ++p) {
        cohort.dm.patients.push_back(cohort.patients[p].patient_id);
        for (std::size_t c = 0; c < g; ++c) cohort.dm.values(p, c) = 0.5 * hyper[p] + noise(rng);
        for (std::size_t c = 0; c < g; ++c) cohort.dm.values(p, g + c) = -0.5 * (1 - hypo[p]) + noise(rng);
    }
    return cohort;
}

}  // namespace methylgraph
