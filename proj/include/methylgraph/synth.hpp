#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "methylgraph/methyl_labels.hpp"
#include "methylgraph/spatial_graph.hpp"

namespace methylgraph {

/// Planted-signal stand-in for a WSI cohort with matching methylation data.
struct SynthSpec {
    std::size_t patients = 120;
    std::size_t slides_min = 1;
    std::size_t slides_max = 2;
    std::size_t patches_min = 20;
    std::size_t patches_max = 40;
    double grid_spacing_px = 1024.0;
    std::size_t feature_dim = 8;
    double signal_fraction = 0.3;  // ρ
    double signal_shift = 2.0;
    double positive_fraction = 0.4;
    std::size_t genes_per_block = 20;
    std::uint64_t seed = 0;

    /// Throws InputError on out-of-range values.
    void validate() const;
};

struct SynthSlide {
    std::string slide_id;
    std::vector<PatchNode> patches;
};

struct SynthPatient {
    std::string patient_id;
    std::vector<SynthSlide> slides;
    int hypo_label = 0;   // planted state of the hypo-methylated block (group0)
    int hyper_label = 0;  // planted state of the hyper-methylated block (group1), carried by the images
};

struct SynthCohort {
    std::vector<SynthPatient> patients;
    DmMatrix dm;
    std::vector<double> signal_direction;  // unit vector
};

/// Names of the two planted groups in the order make_labels numbers them.
inline const std::vector<std::string> kSynthGroupNames{"group0", "group1"};

/// Patches lie on a connected random blob of grid cells. Positive patients (hyper_label = 1)
/// have a spatially compact ρ-fraction of each slide's patches shifted by signal_shift along
/// one fixed unit direction. The DM matrix holds a hyper block (0.5 · hyper_label + noise)
/// and a hypo block (−0.5 · (1 − hypo_label) + noise). Fully determined by spec.seed.
SynthCohort synthesize(const SynthSpec& spec);

}  // namespace methylgraph
