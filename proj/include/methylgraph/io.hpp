#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "methylgraph/gnn.hpp"
#include "methylgraph/methyl_labels.hpp"
#include "methylgraph/metrics.hpp"
#include "methylgraph/spatial_graph.hpp"
#include "methylgraph/training.hpp"

namespace methylgraph::io {

namespace fs = std::filesystem;

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Parses a whole field as a finite double; throws IngestionError naming path and line.
double parse_double(std::string_view field, const fs::path& path, std::size_t line);

/// Splits one CSV line on commas (no quoting; ids may not contain commas).
std::vector<std::string_view> split_csv(std::string_view line);

/// Reads a text file; throws IoError naming the path.
std::string read_file(const fs::path& path);
/// Writes `content` to `path` (parent directories are created); throws IoError naming the path.
void write_file(const fs::path& path, std::string_view content);

// ---- features ---------------------------------------------------------------

/// `patch_id,x,y,f0,...,f{D-1}` with one row per patch.
void save_features(const fs::path& path, std::span<const PatchNode> nodes);
/// Nodes in file order. When `expected_dim` is set the header must declare that many features.
/// Throws IngestionError for ragged rows, non-finite or negative values, duplicate ids.
std::vector<PatchNode> load_features(const fs::path& path, std::optional<std::size_t> expected_dim = std::nullopt);

// ---- cohort manifest --------------------------------------------------------

struct ManifestPatient {
    std::string patient_id;
    std::vector<std::string> wsi_feature_files;  // as written, relative to the manifest directory
    std::map<std::string, int> labels;           // group name -> 0/1
};

struct CohortManifest {
    std::string cohort;
    std::size_t feature_dim = 0;
    double patch_size_px = 1024.0;
    double mpp = 0.5;
    std::vector<ManifestPatient> patients;
    fs::path base_dir;  // directory the relative file paths resolve against

    fs::path resolve(const std::string& file) const { return base_dir / file; }
};

void save_manifest(const fs::path& path, const CohortManifest& manifest);
/// Parses and validates the manifest, then checks every referenced feature file; all missing
/// files are reported together in a single IoError.
CohortManifest load_manifest(const fs::path& path);

// ---- DM matrix and label table ---------------------------------------------

/// `patient_id,<gene>,...` with one row per patient.
void save_dm_matrix(const fs::path& path, const DmMatrix& dm);
DmMatrix load_dm_matrix(const fs::path& path);

struct LabelTable {
    std::vector<std::string> groups;
    std::vector<std::string> patient_ids;
    std::vector<std::vector<int>> labels;  // patient x group

    /// Throws InputError for an unknown group or patient.
    int label(const std::string& patient_id, const std::string& group) const;
};

/// `patient_id,<group>,...` of binary labels.
void save_label_table(const fs::path& path, const LabelTable& table);
LabelTable load_label_table(const fs::path& path);
LabelTable label_table_from(const GroupLabels& labels, std::span<const std::string> group_names);

/// `patient_id,<group>,...` of group-mean DM values.
void save_group_means(const fs::path& path, const GroupLabels& labels, std::span<const std::string> group_names);

// ---- graphs -----------------------------------------------------------------

nlohmann::json graph_to_json(const WsiGraph& graph);
WsiGraph graph_from_json(const nlohmann::json& doc);
void save_graph(const fs::path& path, const WsiGraph& graph);
WsiGraph load_graph(const fs::path& path);

// ---- checkpoints ------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    GnnModel model;
    nlohmann::json config;  // free-form training configuration
    std::uint64_t seed = 0;
};

/// One JSON header line followed by the parameters as little-endian 64-bit floats in
/// GnnModel::parameters() order.
void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint);
/// Throws CorruptionError when the payload length disagrees with the header, InputError on a
/// format-version mismatch.
Checkpoint load_checkpoint(const fs::path& path);

nlohmann::json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& doc);

// ---- folds, histories, predictions ----------------------------------------

/// `patient_id,fold`
void save_folds(const fs::path& path, const FoldSplit& split);
FoldSplit load_folds(const fs::path& path);

/// `epoch,mean_loss,zero_pair_batches,validation_auroc` (wall clock is not recorded).
void save_history(const fs::path& path, const TrainHistory& history);

struct PredictionRow {
    std::string patient_id;
    std::string group;
    std::size_t fold = 0;
    int label = 0;
    double score = 0.0;
};

/// `patient_id,group,fold,label,score`
void save_predictions(const fs::path& path, std::span<const PredictionRow> rows);
std::vector<PredictionRow> load_predictions(const fs::path& path);

// ---- heatmaps ---------------------------------------------------------------

struct HeatmapRow {
    std::string patch_id;
    double x = 0, y = 0;
    double node_score = 0;
    double sigmoid_score = 0;
};

double sigmoid(double v);

/// RGB of the diverging colormap: blue at 0, white at 0.5, red at 1.
std::array<std::uint8_t, 3> heatmap_color(double sigmoid_score);

/// Writes `patch_id,x,y,node_score,sigmoid_score` to `csv_path`; when `downsample > 0` also
/// writes an 8-bit RGB PNG with each patch drawn as a filled square of side
/// ceil(patch_size_px / downsample) on a white background.
void export_heatmap(const WsiGraph& graph, std::span<const double> node_scores, const fs::path& csv_path,
                    const fs::path& png_path, double downsample, double patch_size_px = 1024.0);
std::vector<HeatmapRow> load_heatmap_csv(const fs::path& path);

/// Raster size used by export_heatmap.
std::pair<std::size_t, std::size_t> heatmap_dimensions(const WsiGraph& graph, double downsample, double patch_size_px);

struct PngImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};
void write_png(const fs::path& path, const PngImage& image);
PngImage read_png(const fs::path& path);

// ---- hashing ----------------------------------------------------------------

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);

}  // namespace methylgraph::io
