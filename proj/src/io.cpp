#include "methylgraph/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <openssl/evp.h>
#include <png.h>

#include "methylgraph/error.hpp"

namespace methylgraph::io {

using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view field, const fs::path& path, std::size_t line) {
    double v = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw IngestionError(path.string(), line, "cannot parse '" + std::string(field) + "' as a number");
    }
    if (!std::isfinite(v)) throw IngestionError(path.string(), line, "non-finite value '" + std::string(field) + "'");
    return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("error reading " + path.string());
    return ss.str();
}

void write_file(const fs::path& path, std::string_view content) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing: " + std::strerror(errno));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    if (!out) throw IoError("error writing " + path.string());
}

namespace {

/// Lines of a text file with their 1-based numbers; a trailing newline does not add a line.
struct Lines {
    std::string text;
    std::vector<std::string_view> lines;

    explicit Lines(const fs::path& path) : text(read_file(path)) {
        std::string_view all(text);
        std::size_t start = 0;
        while (start < all.size()) {
            std::size_t nl = all.find('\n', start);
            if (nl == std::string_view::npos) nl = all.size();
            std::string_view line = all.substr(start, nl - start);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            lines.push_back(line);
            start = nl + 1;
        }
    }
};

std::size_t parse_count(std::string_view field, const fs::path& path, std::size_t line) {
    std::size_t v = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw IngestionError(path.string(), line, "cannot parse '" + std::string(field) + "' as a non-negative integer");
    }
    return v;
}

int parse_binary(std::string_view field, const fs::path& path, std::size_t line) {
    if (field == "0") return 0;
    if (field == "1") return 1;
    throw IngestionError(path.string(), line, "label '" + std::string(field) + "' is not 0 or 1");
}

void expect_header(const Lines& file, const fs::path& path, std::string_view expected) {
    if (file.lines.empty()) throw IngestionError(path.string(), 1, "file is empty");
    if (file.lines[0] != expected) {
        throw IngestionError(path.string(), 1,
                             "header is '" + std::string(file.lines[0]) + "', expected '" + std::string(expected) + "'");
    }
}

std::vector<std::string_view> row_fields(std::string_view line, std::size_t expected, const fs::path& path,
                                         std::size_t lineno) {
    auto f = split_csv(line);
    if (f.size() != expected) {
        throw IngestionError(path.string(), lineno,
                             "expected " + std::to_string(expected) + " fields, found " + std::to_string(f.size()));
    }
    return f;
}

void check_id(std::string_view id, const fs::path& path, std::size_t line) {
    if (id.empty()) throw IngestionError(path.string(), line, "empty id");
}

json parse_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

template <class T>
T field(const json& doc, const char* key, const std::string& where) {
    if (!doc.is_object() || !doc.contains(key)) throw InputError(where + ": missing field '" + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InputError(where + ": field '" + key + "' has the wrong type");
    }
}

}  // namespace

// ---- features ---------------------------------------------------------------

void save_features(const fs::path& path, std::span<const PatchNode> nodes) {
    const std::size_t dim = nodes.empty() ? 0 : nodes.front().features.size();
    std::string out = "patch_id,x,y";
    for (std::size_t c = 0; c < dim; ++c) out += ",f" + std::to_string(c);
    out += '\n';
    for (const PatchNode& n : nodes) {
        if (n.features.size() != dim) throw ShapeError("save_features: ragged feature vectors");
        out += n.patch_id + ',' + format_double(n.x) + ',' + format_double(n.y);
        for (double v : n.features) out += ',' + format_double(v);
        out += '\n';
    }
    write_file(path, out);
}

std::vector<PatchNode> load_features(const fs::path& path, std::optional<std::size_t> expected_dim) {
    Lines file(path);
    if (file.lines.empty()) throw IngestionError(path.string(), 1, "file is empty");
    const auto header = split_csv(file.lines[0]);
    if (header.size() < 3 || header[0] != "patch_id" || header[1] != "x" || header[2] != "y") {
        throw IngestionError(path.string(), 1, "header must start with patch_id,x,y");
    }
    const std::size_t dim = header.size() - 3;
    for (std::size_t c = 0; c < dim; ++c) {
        if (header[3 + c] != "f" + std::to_string(c)) {
            throw IngestionError(path.string(), 1, "feature column " + std::to_string(c) + " is named '" +
                                                       std::string(header[3 + c]) + "', expected f" + std::to_string(c));
        }
    }
    if (expected_dim && *expected_dim != dim) {
        throw IngestionError(path.string(), 1,
                             "header declares " + std::to_string(dim) + " features, expected " +
                                 std::to_string(*expected_dim));
    }
    std::vector<PatchNode> nodes;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 1; i < file.lines.size(); ++i) {
        const std::size_t lineno = i + 1;
        auto f = split_csv(file.lines[i]);
        if (f.size() != dim + 3) {
            throw IngestionError(path.string(), lineno,
                                 "row has " + std::to_string(f.size() >= 3 ? f.size() - 3 : 0) + " features, expected " +
                                     std::to_string(dim));
        }
        PatchNode n;
        n.patch_id = std::string(f[0]);
        check_id(n.patch_id, path, lineno);
        if (!seen.insert(n.patch_id).second) {
            throw IngestionError(path.string(), lineno, "duplicate patch_id '" + n.patch_id + "'");
        }
        n.x = parse_double(f[1], path, lineno);
        n.y = parse_double(f[2], path, lineno);
        if (n.x < 0 || n.y < 0) throw IngestionError(path.string(), lineno, "negative coordinate");
        n.features.resize(dim);
        for (std::size_t c = 0; c < dim; ++c) n.features[c] = parse_double(f[3 + c], path, lineno);
        nodes.push_back(std::move(n));
    }
    return nodes;
}

// ---- cohort manifest --------------------------------------------------------

void save_manifest(const fs::path& path, const CohortManifest& m) {
    json doc;
    doc["cohort"] = m.cohort;
    doc["feature_dim"] = m.feature_dim;
    doc["patch_size_px"] = m.patch_size_px;
    doc["mpp"] = m.mpp;
    doc["patients"] = json::array();
    for (const ManifestPatient& p : m.patients) {
        json jp;
        jp["patient_id"] = p.patient_id;
        jp["wsi_feature_files"] = p.wsi_feature_files;
        jp["labels"] = p.labels;
        doc["patients"].push_back(std::move(jp));
    }
    write_file(path, doc.dump(2) + "\n");
}

CohortManifest load_manifest(const fs::path& path) {
    const json doc = parse_json(path);
    const std::string where = path.string();
    CohortManifest m;
    m.cohort = field<std::string>(doc, "cohort", where);
    m.feature_dim = field<std::size_t>(doc, "feature_dim", where);
    if (doc.contains("patch_size_px")) m.patch_size_px = field<double>(doc, "patch_size_px", where);
    if (doc.contains("mpp")) m.mpp = field<double>(doc, "mpp", where);
    m.base_dir = path.parent_path();
    if (m.feature_dim == 0) throw InputError(where + ": feature_dim must be positive");
    if (!(m.patch_size_px > 0)) throw InputError(where + ": patch_size_px must be positive");

    const json patients = field<json>(doc, "patients", where);
    if (!patients.is_array() || patients.empty()) throw InputError(where + ": 'patients' must be a non-empty list");
    std::set<std::string> ids;
    std::vector<std::string> missing;
    for (const json& jp : patients) {
        ManifestPatient p;
        p.patient_id = field<std::string>(jp, "patient_id", where);
        const std::string pw = where + ": patient " + p.patient_id;
        if (p.patient_id.empty()) throw InputError(where + ": empty patient_id");
        if (!ids.insert(p.patient_id).second) throw InputError(where + ": duplicate patient_id " + p.patient_id);
        p.wsi_feature_files = field<std::vector<std::string>>(jp, "wsi_feature_files", pw);
        if (p.wsi_feature_files.empty()) throw InputError(pw + " lists no feature files");
        if (jp.contains("labels")) p.labels = field<std::map<std::string, int>>(jp, "labels", pw);
        for (const auto& [group, y] : p.labels) {
            if (y != 0 && y != 1) throw InputError(pw + ": label for " + group + " is not 0 or 1");
        }
        for (const std::string& f : p.wsi_feature_files) {
            if (!fs::is_regular_file(m.resolve(f))) missing.push_back(m.resolve(f).string());
        }
        m.patients.push_back(std::move(p));
    }
    if (!missing.empty()) {
        std::string msg = where + " references " + std::to_string(missing.size()) + " missing feature file(s):";
        for (const std::string& f : missing) msg += "\n  " + f;
        throw IoError(msg);
    }
    return m;
}

// ---- DM matrix and label table ---------------------------------------------

void save_dm_matrix(const fs::path& path, const DmMatrix& dm) {
    dm.validate();
    std::string out = "patient_id";
    for (const std::string& g : dm.genes) out += ',' + g;
    out += '\n';
    for (std::size_t r = 0; r < dm.patients.size(); ++r) {
        out += dm.patients[r];
        for (std::size_t c = 0; c < dm.genes.size(); ++c) out += ',' + format_double(dm.values(r, c));
        out += '\n';
    }
    write_file(path, out);
}

DmMatrix load_dm_matrix(const fs::path& path) {
    Lines file(path);
    if (file.lines.empty()) throw IngestionError(path.string(), 1, "file is empty");
    const auto header = split_csv(file.lines[0]);
    if (header.size() < 2 || header[0] != "patient_id") {
        throw IngestionError(path.string(), 1, "header must be patient_id followed by gene names");
    }
    DmMatrix dm;
    for (std::size_t c = 1; c < header.size(); ++c) {
        check_id(header[c], path, 1);
        dm.genes.emplace_back(header[c]);
    }
    std::vector<double> values;
    for (std::size_t i = 1; i < file.lines.size(); ++i) {
        auto f = row_fields(file.lines[i], header.size(), path, i + 1);
        check_id(f[0], path, i + 1);
        dm.patients.emplace_back(f[0]);
        for (std::size_t c = 1; c < f.size(); ++c) {
            if (f[c].empty()) throw IngestionError(path.string(), i + 1, "missing DM value for gene " + dm.genes[c - 1]);
            values.push_back(parse_double(f[c], path, i + 1));
        }
    }
    dm.values = Matrix(dm.patients.size(), dm.genes.size(), std::move(values));
    dm.validate();
    return dm;
}

int LabelTable::label(const std::string& patient_id, const std::string& group) const {
    auto g = std::find(groups.begin(), groups.end(), group);
    if (g == groups.end()) throw InputError("label table has no group '" + group + "'");
    auto p = std::find(patient_ids.begin(), patient_ids.end(), patient_id);
    if (p == patient_ids.end()) throw InputError("label table has no patient '" + patient_id + "'");
    return labels[static_cast<std::size_t>(p - patient_ids.begin())][static_cast<std::size_t>(g - groups.begin())];
}

void save_label_table(const fs::path& path, const LabelTable& t) {
    std::string out = "patient_id";
    for (const std::string& g : t.groups) out += ',' + g;
    out += '\n';
    for (std::size_t r = 0; r < t.patient_ids.size(); ++r) {
        out += t.patient_ids[r];
        for (int y : t.labels[r]) out += y ? ",1" : ",0";
        out += '\n';
    }
    write_file(path, out);
}

LabelTable load_label_table(const fs::path& path) {
    Lines file(path);
    if (file.lines.empty()) throw IngestionError(path.string(), 1, "file is empty");
    const auto header = split_csv(file.lines[0]);
    if (header.size() < 2 || header[0] != "patient_id") {
        throw IngestionError(path.string(), 1, "header must be patient_id followed by group names");
    }
    LabelTable t;
    for (std::size_t c = 1; c < header.size(); ++c) t.groups.emplace_back(header[c]);
    std::set<std::string> seen;
    for (std::size_t i = 1; i < file.lines.size(); ++i) {
        auto f = row_fields(file.lines[i], header.size(), path, i + 1);
        check_id(f[0], path, i + 1);
        if (!seen.emplace(f[0]).second) throw IngestionError(path.string(), i + 1, "duplicate patient_id");
        t.patient_ids.emplace_back(f[0]);
        std::vector<int> row;
        for (std::size_t c = 1; c < f.size(); ++c) row.push_back(parse_binary(f[c], path, i + 1));
        t.labels.push_back(std::move(row));
    }
    return t;
}

LabelTable label_table_from(const GroupLabels& labels, std::span<const std::string> group_names) {
    if (group_names.size() != labels.binary.cols()) {
        throw InputError("label table: " + std::to_string(group_names.size()) + " group names for " +
                         std::to_string(labels.binary.cols()) + " groups");
    }
    LabelTable t;
    t.groups.assign(group_names.begin(), group_names.end());
    t.patient_ids = labels.patients;
    for (std::size_t r = 0; r < labels.patients.size(); ++r) {
        std::vector<int> row;
        for (std::size_t g = 0; g < group_names.size(); ++g) row.push_back(labels.binary(r, g) != 0.0);
        t.labels.push_back(std::move(row));
    }
    return t;
}

void save_group_means(const fs::path& path, const GroupLabels& labels, std::span<const std::string> group_names) {
    std::string out = "patient_id";
    for (const std::string& g : group_names) out += ',' + g;
    out += '\n';
    for (std::size_t r = 0; r < labels.patients.size(); ++r) {
        out += labels.patients[r];
        for (std::size_t g = 0; g < group_names.size(); ++g) out += ',' + format_double(labels.mean_dm(r, g));
        out += '\n';
    }
    write_file(path, out);
}

// ---- graphs -----------------------------------------------------------------

json graph_to_json(const WsiGraph& graph) {
    json doc;
    doc["slide_id"] = graph.slide_id;
    doc["feature_dim"] = graph.feature_dim;
    json nodes = json::array();
    for (const PatchNode& n : graph.nodes) {
        nodes.push_back({{"patch_id", n.patch_id}, {"x", n.x}, {"y", n.y}, {"features", n.features}});
    }
    doc["nodes"] = std::move(nodes);
    json edges = json::array();
    for (auto [a, b] : graph.edges) edges.push_back({a, b});
    doc["edges"] = std::move(edges);
    return doc;
}

WsiGraph graph_from_json(const json& doc) {
    const std::string where = "graph";
    const std::string slide_id = field<std::string>(doc, "slide_id", where);
    const std::size_t dim = field<std::size_t>(doc, "feature_dim", where);
    std::vector<PatchNode> nodes;
    for (const json& jn : field<json>(doc, "nodes", where)) {
        PatchNode n;
        n.patch_id = field<std::string>(jn, "patch_id", where);
        n.x = field<double>(jn, "x", where);
        n.y = field<double>(jn, "y", where);
        n.features = field<std::vector<double>>(jn, "features", where);
        if (n.features.size() != dim) throw InputError("graph " + slide_id + ": node " + n.patch_id + " has the wrong feature count");
        nodes.push_back(std::move(n));
    }
    auto edges = field<std::vector<std::pair<std::size_t, std::size_t>>>(doc, "edges", where);
    WsiGraph g = assemble_graph(std::move(nodes), std::move(edges), slide_id);
    g.feature_dim = dim;
    return g;
}

void save_graph(const fs::path& path, const WsiGraph& graph) { write_file(path, graph_to_json(graph).dump() + "\n"); }

WsiGraph load_graph(const fs::path& path) {
    try {
        return graph_from_json(parse_json(path));
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

// ---- checkpoints ------------------------------------------------------------

namespace {

json mlp_dims(const Mlp& mlp) {
    json out = json::array();
    for (const Dense& d : mlp.layers()) {
        out.push_back({{"in", d.in_dim()}, {"out", d.out_dim()}, {"activation", std::string(activation_name(d.activation))}});
    }
    return out;
}

Mlp mlp_from_dims(const json& dims, const std::string& where) {
    std::vector<Dense> layers;
    if (!dims.is_array() || dims.empty()) throw CorruptionError(where + ": empty layer list");
    for (const json& d : dims) {
        const auto in = field<std::size_t>(d, "in", where), out = field<std::size_t>(d, "out", where);
        const auto act = activation_from_name(field<std::string>(d, "activation", where));
        layers.push_back(Dense{Matrix(in, out), std::vector<double>(out, 0.0), act});
    }
    return Mlp(std::move(layers));
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
    json header;
    header["format"] = "methylgraph-checkpoint";
    header["format_version"] = kCheckpointVersion;
    header["param_count"] = ck.model.parameter_count();
    header["input_dim"] = ck.model.input_dim();
    header["seed"] = ck.seed;
    header["config"] = ck.config;
    json layers = json::array();
    for (std::size_t l = 0; l < ck.model.depth(); ++l) {
        layers.push_back({{"phi", mlp_dims(ck.model.layers()[l].phi)}, {"scorer", mlp_dims(ck.model.scorers()[l])}});
    }
    header["layers"] = std::move(layers);

    std::string out = header.dump() + "\n";
    out.reserve(out.size() + 8 * ck.model.parameter_count());
    for (const ConstParamRef& p : ck.model.parameters()) {
        for (double v : p.values) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int b = 0; b < 8; ++b) out += static_cast<char>((bits >> (8 * b)) & 0xff);
        }
    }
    write_file(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const std::string bytes = read_file(path);
    const std::string where = path.string();
    const std::size_t nl = bytes.find('\n');
    if (nl == std::string::npos) throw CorruptionError(where + ": missing checkpoint header");
    json header;
    try {
        header = json::parse(bytes.substr(0, nl));
    } catch (const json::parse_error& e) {
        throw CorruptionError(where + ": malformed checkpoint header");
    }
    if (!header.is_object() || header.value("format", "") != "methylgraph-checkpoint") {
        throw CorruptionError(where + ": not a methylgraph checkpoint");
    }
    const int version = field<int>(header, "format_version", where);
    if (version != kCheckpointVersion) {
        throw InputError(where + ": checkpoint format version " + std::to_string(version) + ", this build reads version " +
                         std::to_string(kCheckpointVersion));
    }
    const std::size_t declared = field<std::size_t>(header, "param_count", where);
    const std::size_t input_dim = field<std::size_t>(header, "input_dim", where);

    Checkpoint ck;
    try {
        std::vector<EdgeConvLayer> layers;
        std::vector<Mlp> scorers;
        for (const json& jl : field<json>(header, "layers", where)) {
            layers.push_back(EdgeConvLayer{mlp_from_dims(field<json>(jl, "phi", where), where)});
            scorers.push_back(mlp_from_dims(field<json>(jl, "scorer", where), where));
        }
        ck.model = GnnModel(input_dim, std::move(layers), std::move(scorers));
    } catch (const ShapeError& e) {
        throw CorruptionError(where + ": inconsistent layer dimensions: " + e.what());
    }
    if (ck.model.parameter_count() != declared) {
        throw CorruptionError(where + ": header declares " + std::to_string(declared) + " parameters but its layers hold " +
                              std::to_string(ck.model.parameter_count()));
    }
    const std::size_t payload = bytes.size() - nl - 1;
    if (payload != 8 * declared) {
        throw CorruptionError(where + ": expected " + std::to_string(8 * declared) + " bytes of parameters, found " +
                              std::to_string(payload) + (payload < 8 * declared ? " (truncated)" : ""));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
    for (ParamRef& ref : ck.model.parameters()) {
        for (double& v : ref.values) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
            v = std::bit_cast<double>(bits);
            p += 8;
        }
    }
    ck.config = header.contains("config") ? header["config"] : json::object();
    ck.seed = field<std::uint64_t>(header, "seed", where);
    return ck;
}

json config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"layers", c.layers},
            {"width", c.width},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"margin", c.margin},
            {"seed", c.seed},
            {"folds", c.folds},
            {"pooling", c.pooling == BagPooling::sum ? "sum" : "mean"}};
}

TrainConfig config_from_json(const json& doc) {
    TrainConfig c;
    const std::string where = "training config";
    c.epochs = field<std::size_t>(doc, "epochs", where);
    c.batch_size = field<std::size_t>(doc, "batch_size", where);
    c.layers = field<std::size_t>(doc, "layers", where);
    c.width = field<std::size_t>(doc, "width", where);
    c.lr = field<double>(doc, "lr", where);
    c.weight_decay = field<double>(doc, "weight_decay", where);
    c.margin = field<double>(doc, "margin", where);
    c.seed = field<std::uint64_t>(doc, "seed", where);
    c.folds = field<std::size_t>(doc, "folds", where);
    const std::string pooling = field<std::string>(doc, "pooling", where);
    if (pooling != "sum" && pooling != "mean") throw InputError(where + ": pooling must be sum or mean");
    c.pooling = pooling == "sum" ? BagPooling::sum : BagPooling::mean;
    return c;
}

// ---- folds, histories, predictions ----------------------------------------

void save_folds(const fs::path& path, const FoldSplit& split) {
    split.validate();
    std::string out = "patient_id,fold\n";
    for (std::size_t i = 0; i < split.patient_ids.size(); ++i) {
        out += split.patient_ids[i] + ',' + std::to_string(split.fold[i]) + '\n';
    }
    write_file(path, out);
}

FoldSplit load_folds(const fs::path& path) {
    Lines file(path);
    expect_header(file, path, "patient_id,fold");
    FoldSplit split;
    for (std::size_t i = 1; i < file.lines.size(); ++i) {
        auto f = row_fields(file.lines[i], 2, path, i + 1);
        check_id(f[0], path, i + 1);
        split.patient_ids.emplace_back(f[0]);
        split.fold.push_back(parse_count(f[1], path, i + 1));
    }
    split.folds = split.fold.empty() ? 0 : *std::max_element(split.fold.begin(), split.fold.end()) + 1;
    try {
        split.validate();
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
    return split;
}

void save_history(const fs::path& path, const TrainHistory& h) {
    std::string out = "epoch,mean_loss,zero_pair_batches,validation_auroc\n";
    for (std::size_t e = 0; e < h.mean_loss.size(); ++e) {
        out += std::to_string(e + 1) + ',' + format_double(h.mean_loss[e]) + ',' +
               std::to_string(h.zero_pair_batches[e]) + ',';
        if (e < h.validation_auroc.size() && std::isfinite(h.validation_auroc[e])) {
            out += format_double(h.validation_auroc[e]);
        }
        out += '\n';
    }
    write_file(path, out);
}

void save_predictions(const fs::path& path, std::span<const PredictionRow> rows) {
    std::string out = "patient_id,group,fold,label,score\n";
    for (const PredictionRow& r : rows) {
        out += r.patient_id + ',' + r.group + ',' + std::to_string(r.fold) + ',' + (r.label ? "1" : "0") + ',' +
               format_double(r.score) + '\n';
    }
    write_file(path, out);
}

std::vector<PredictionRow> load_predictions(const fs::path& path) {
    Lines file(path);
    expect_header(file, path, "patient_id,group,fold,label,score");
    std::vector<PredictionRow> rows;
    for (std::size_t i = 1; i < file.lines.size(); ++i) {
        auto f = row_fields(file.lines[i], 5, path, i + 1);
        check_id(f[0], path, i + 1);
        rows.push_back({std::string(f[0]), std::string(f[1]), parse_count(f[2], path, i + 1),
                        parse_binary(f[3], path, i + 1), parse_double(f[4], path, i + 1)});
    }
    return rows;
}

// ---- heatmaps ---------------------------------------------------------------

double sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

std::array<std::uint8_t, 3> heatmap_color(double s) {
    s = std::clamp(s, 0.0, 1.0);
    auto level = [](double t) { return static_cast<std::uint8_t>(std::lround(255.0 * t)); };
    if (s <= 0.5) {
        const std::uint8_t v = level(s / 0.5);
        return {v, v, 255};
    }
    const std::uint8_t v = level((1.0 - s) / 0.5);
    return {255, v, v};
}

std::pair<std::size_t, std::size_t> heatmap_dimensions(const WsiGraph& graph, double downsample, double patch_size_px) {
    if (!(downsample > 0)) throw InputError("heatmap downsample must be positive");
    double max_x = 0, max_y = 0;
    for (const PatchNode& n : graph.nodes) {
        max_x = std::max(max_x, n.x);
        max_y = std::max(max_y, n.y);
    }
    const auto extent = static_cast<std::size_t>(std::ceil(patch_size_px / downsample));
    return {static_cast<std::size_t>(std::ceil(max_x / downsample)) + extent,
            static_cast<std::size_t>(std::ceil(max_y / downsample)) + extent};
}

void export_heatmap(const WsiGraph& graph, std::span<const double> node_scores, const fs::path& csv_path,
                    const fs::path& png_path, double downsample, double patch_size_px) {
    if (node_scores.size() != graph.node_count()) {
        throw ShapeError("heatmap: " + std::to_string(node_scores.size()) + " scores for " +
                         std::to_string(graph.node_count()) + " nodes");
    }
    if (graph.nodes.empty()) throw InputError("heatmap: graph " + graph.slide_id + " has no nodes");
    std::string out = "patch_id,x,y,node_score,sigmoid_score\n";
    for (std::size_t i = 0; i < graph.node_count(); ++i) {
        const PatchNode& n = graph.nodes[i];
        out += n.patch_id + ',' + format_double(n.x) + ',' + format_double(n.y) + ',' + format_double(node_scores[i]) +
               ',' + format_double(sigmoid(node_scores[i])) + '\n';
    }
    write_file(csv_path, out);
    if (downsample <= 0) return;

    const auto [w, h] = heatmap_dimensions(graph, downsample, patch_size_px);
    const auto extent = static_cast<std::size_t>(std::ceil(patch_size_px / downsample));
    PngImage img{w, h, std::vector<std::uint8_t>(w * h * 3, 255)};
    for (std::size_t i = 0; i < graph.node_count(); ++i) {
        const auto color = heatmap_color(sigmoid(node_scores[i]));
        const auto x0 = static_cast<std::size_t>(std::floor(graph.nodes[i].x / downsample));
        const auto y0 = static_cast<std::size_t>(std::floor(graph.nodes[i].y / downsample));
        for (std::size_t y = y0; y < std::min(h, y0 + extent); ++y) {
            for (std::size_t x = x0; x < std::min(w, x0 + extent); ++x) {
                std::copy(color.begin(), color.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(3 * (y * w + x)));
            }
        }
    }
    write_png(png_path, img);
}

std::vector<HeatmapRow> load_heatmap_csv(const fs::path& path) {
    Lines file(path);
    expect_header(file, path, "patch_id,x,y,node_score,sigmoid_score");
    std::vector<HeatmapRow> rows;
    for (std::size_t i = 1; i < file.lines.size(); ++i) {
        auto f = row_fields(file.lines[i], 5, path, i + 1);
        rows.push_back({std::string(f[0]), parse_double(f[1], path, i + 1), parse_double(f[2], path, i + 1),
                        parse_double(f[3], path, i + 1), parse_double(f[4], path, i + 1)});
    }
    return rows;
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_png(const fs::path& path, const PngImage& image) {
    if (image.rgb.size() != image.width * image.height * 3) throw ShapeError("write_png: pixel buffer size mismatch");
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path.string() + " for writing: " + std::strerror(errno));
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialisation failed for " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("error writing PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(image.rgb.data() + y * image.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(fp.get()) != 0) throw IoError("error writing PNG " + path.string());
}

PngImage read_png(const fs::path& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng initialisation failed for " + path.string());
    }
    PngImage img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("malformed PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path.string() + " is not an 8-bit RGB PNG");
    }
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.rgb.resize(img.width * img.height * 3);
    for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.rgb.data() + y * img.width * 3, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// ---- hashing ----------------------------------------------------------------

std::string sha256_file(const fs::path& path) {
    const std::string bytes = read_file(path);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw IoError("SHA-256 failed for " + path.string());
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

}  // namespace methylgraph::io
