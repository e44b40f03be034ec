#include "foresight/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include "foresight/errors.hpp"

namespace foresight {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace fs = std::filesystem;

namespace {

class BinaryWriter {
public:
    explicit BinaryWriter(const fs::path& path) : path_(path), tmp_(path) {
        tmp_ += ".tmp";
        out_.open(tmp_, std::ios::binary | std::ios::trunc);
        if (!out_) throw std::runtime_error("cannot open " + tmp_.string() + " for writing");
    }

    void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
    template <typename T>
    void pod(T v) {
        bytes(&v, sizeof(T));
    }
    void string(const std::string& s) { bytes(s.data(), s.size()); }

    /// Flushes and atomically renames the temporary file into place.
    void commit() {
        out_.close();
        if (!out_) throw std::runtime_error("write to " + tmp_.string() + " failed");
        fs::rename(tmp_, path_);
    }

private:
    fs::path path_;
    fs::path tmp_;
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const fs::path& path) : path_(path) {
        in_.open(path, std::ios::binary);
        if (!in_) throw std::runtime_error("cannot open " + path.string());
        size_ = fs::file_size(path);
    }

    void bytes(void* data, std::size_t n, const char* what) {
        if (offset_ + n > size_) {
            throw FormatError(path_.string() + ": truncated while reading " + what, offset_);
        }
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (!in_) throw FormatError(path_.string() + ": read failed for " + what, offset_);
        offset_ += n;
    }
    template <typename T>
    T pod(const char* what) {
        T v{};
        bytes(&v, sizeof(T), what);
        return v;
    }
    std::string string(std::size_t n, const char* what) {
        if (offset_ + n > size_) throw FormatError(path_.string() + ": truncated while reading " + what, offset_);
        std::string s(n, '\0');
        bytes(s.data(), n, what);
        return s;
    }
    [[nodiscard]] std::uint64_t offset() const noexcept { return offset_; }
    [[nodiscard]] std::uint64_t size() const noexcept { return size_; }
    [[nodiscard]] const fs::path& path() const noexcept { return path_; }

private:
    fs::path path_;
    std::ifstream in_;
    std::uint64_t offset_ = 0;
    std::uint64_t size_ = 0;
};

void read_magic(BinaryReader& r, const char (&expected)[8], const char* kind) {
    char magic[8];
    r.bytes(magic, 8, "magic");
    if (std::memcmp(magic, expected, 8) != 0) {
        throw FormatError(r.path().string() + ": not a " + std::string(kind) + " file (bad magic)", 0);
    }
}

nlohmann::json parse_json_blob(BinaryReader& r, std::uint64_t len, const char* what) {
    const std::uint64_t at = r.offset();
    const std::string text = r.string(static_cast<std::size_t>(len), what);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(r.path().string() + ": invalid JSON in " + what + ": " + e.what(), at);
    }
}

// --- named tensor archive shared by checkpoints and PCA files ---

struct StoredTensor {
    std::uint32_t dtype = kDtypeF32;  // 0 = f32, 1 = f64
    std::vector<std::uint64_t> dims;
    std::vector<char> payload;

    [[nodiscard]] std::uint64_t elements() const {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

constexpr std::uint32_t kDtypeF64 = 1;

template <typename T>
StoredTensor store(const T* data, std::vector<std::uint64_t> dims) {
    StoredTensor t;
    t.dtype = std::is_same_v<T, double> ? kDtypeF64 : kDtypeF32;
    t.dims = std::move(dims);
    t.payload.resize(t.elements() * sizeof(T));
    std::memcpy(t.payload.data(), data, t.payload.size());
    return t;
}

template <typename T>
void restore(const StoredTensor& t, T* data, std::uint64_t expected, const std::string& name) {
    const std::uint32_t want = std::is_same_v<T, double> ? kDtypeF64 : kDtypeF32;
    if (t.dtype != want || t.elements() != expected) {
        throw FormatError("tensor '" + name + "' has unexpected dtype or size", 0);
    }
    std::memcpy(data, t.payload.data(), t.payload.size());
}

void write_archive(const fs::path& path, const char (&magic)[8], std::uint32_t version, const nlohmann::json& header,
                   const std::vector<std::pair<std::string, StoredTensor>>& tensors) {
    BinaryWriter w(path);
    w.bytes(magic, 8);
    w.pod<std::uint32_t>(version);
    const std::string text = header.dump();
    w.pod<std::uint64_t>(text.size());
    w.string(text);
    w.pod<std::uint64_t>(tensors.size());
    for (const auto& [name, t] : tensors) {
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.string(name);
        w.pod<std::uint32_t>(t.dtype);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) w.pod<std::uint64_t>(d);
        w.bytes(t.payload.data(), t.payload.size());
    }
    w.commit();
}

std::pair<nlohmann::json, std::map<std::string, StoredTensor>> read_archive(const fs::path& path,
                                                                            const char (&magic)[8],
                                                                            std::uint32_t version, const char* kind) {
    BinaryReader r(path);
    read_magic(r, magic, kind);
    const std::uint64_t version_at = r.offset();
    const auto v = r.pod<std::uint32_t>("version");
    if (v != version) {
        throw FormatError(path.string() + ": unsupported " + std::string(kind) + " version " + std::to_string(v) +
                              " (this build reads version " + std::to_string(version) + ")",
                          version_at);
    }
    const auto len = r.pod<std::uint64_t>("header length");
    nlohmann::json header = parse_json_blob(r, len, "header");
    const auto count = r.pod<std::uint64_t>("tensor count");
    std::map<std::string, StoredTensor> tensors;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = r.pod<std::uint32_t>("tensor name length");
        std::string name = r.string(name_len, "tensor name");
        StoredTensor t;
        const std::uint64_t dtype_at = r.offset();
        t.dtype = r.pod<std::uint32_t>("tensor dtype");
        if (t.dtype != kDtypeF32 && t.dtype != kDtypeF64) {
            throw FormatError(path.string() + ": tensor '" + name + "' has unknown dtype " + std::to_string(t.dtype),
                              dtype_at);
        }
        const auto ndim = r.pod<std::uint32_t>("tensor rank");
        for (std::uint32_t k = 0; k < ndim; ++k) t.dims.push_back(r.pod<std::uint64_t>("tensor dims"));
        const std::uint64_t bytes = t.elements() * (t.dtype == kDtypeF64 ? 8 : 4);
        if (r.offset() + bytes > r.size()) {
            throw FormatError(path.string() + ": truncated payload of tensor '" + name + "'", r.offset());
        }
        t.payload.resize(bytes);
        r.bytes(t.payload.data(), bytes, "tensor payload");
        tensors.emplace(std::move(name), std::move(t));
    }
    return {std::move(header), std::move(tensors)};
}

const StoredTensor& require_tensor(const std::map<std::string, StoredTensor>& tensors, const std::string& name,
                                   const fs::path& path) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError(path.string() + ": missing tensor '" + name + "'", 0);
    return it->second;
}

template <typename T>
void store_weights(std::vector<std::pair<std::string, StoredTensor>>& out, const std::string& prefix,
                   const ForecasterWeights<T>& w) {
    for (const auto& view : parameter_views(w)) {
        std::vector<std::uint64_t> dims(view.shape.begin(), view.shape.end());
        out.emplace_back(prefix + view.name, store(view.values.data(), std::move(dims)));
    }
}

template <typename T>
void restore_weights(const std::map<std::string, StoredTensor>& tensors, const std::string& prefix,
                     ForecasterWeights<T>& w, const fs::path& path) {
    for (auto& view : parameter_views(w)) {
        const StoredTensor& t = require_tensor(tensors, prefix + view.name, path);
        restore(t, view.values.data(), view.values.size(), prefix + view.name);
    }
}

void store_pca(std::vector<std::pair<std::string, StoredTensor>>& out, const std::string& prefix, const PcaModel& m) {
    // Eigen's default storage is column-major; store components row-major.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = m.components;
    out.emplace_back(prefix + "mean", store(m.mean.data(), {m.c_in}));
    out.emplace_back(prefix + "components", store(rows.data(), {m.d_out, m.c_in}));
    out.emplace_back(prefix + "explained_variance", store(m.explained_variance.data(), {m.d_out}));
}

PcaModel restore_pca(const std::map<std::string, StoredTensor>& tensors, const std::string& prefix,
                     const fs::path& path) {
    const StoredTensor& comp = require_tensor(tensors, prefix + "components", path);
    if (comp.dims.size() != 2) throw FormatError(path.string() + ": PCA components must be 2-D", 0);
    PcaModel m;
    m.d_out = comp.dims[0];
    m.c_in = comp.dims[1];
    m.mean.resize(static_cast<Eigen::Index>(m.c_in));
    m.explained_variance.resize(static_cast<Eigen::Index>(m.d_out));
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(m.d_out, m.c_in);
    restore(comp, rows.data(), m.d_out * m.c_in, "components");
    m.components = rows;
    restore(require_tensor(tensors, prefix + "mean", path), m.mean.data(), m.c_in, "mean");
    restore(require_tensor(tensors, prefix + "explained_variance", path), m.explained_variance.data(), m.d_out,
            "explained_variance");
    return m;
}

constexpr char kPcaMagic[8] = {'F', 'F', 'O', 'R', 'P', 'C', 'A', '_'};
constexpr std::uint32_t kPcaVersion = 1;

}  // namespace

// ------------------------------------------------------------ feature files

void save_features(const fs::path& path, const FeatureSequence& f) {
    f.validate();
    BinaryWriter w(path);
    w.bytes(kFeatureMagic, 8);
    w.pod<std::uint32_t>(kFeatureVersion);
    w.pod<std::uint32_t>(kDtypeF32);
    for (std::uint64_t d : {f.frames, f.height, f.width, f.channels}) w.pod<std::uint64_t>(d);
    for (std::int64_t id : f.frame_ids) w.pod<std::int64_t>(id);
    const std::string meta = f.meta.dump();
    w.pod<std::uint64_t>(meta.size());
    w.string(meta);
    w.bytes(f.data.data(), f.data.size() * sizeof(float));
    w.commit();
}

namespace {

FeatureFileHeader read_header(BinaryReader& r) {
    read_magic(r, kFeatureMagic, "feature");
    FeatureFileHeader h;
    const std::uint64_t version_at = r.offset();
    h.version = r.pod<std::uint32_t>("version");
    if (h.version != kFeatureVersion) {
        throw FormatError(r.path().string() + ": unsupported feature file version " + std::to_string(h.version),
                          version_at);
    }
    const std::uint64_t dtype_at = r.offset();
    h.dtype = r.pod<std::uint32_t>("dtype");
    if (h.dtype != kDtypeF32) {
        throw FormatError(r.path().string() + ": unsupported dtype code " + std::to_string(h.dtype), dtype_at);
    }
    const std::uint64_t dims_at = r.offset();
    h.frames = r.pod<std::uint64_t>("dims");
    h.height = r.pod<std::uint64_t>("dims");
    h.width = r.pod<std::uint64_t>("dims");
    h.channels = r.pod<std::uint64_t>("dims");
    if (h.frames == 0 || h.height == 0 || h.width == 0 || h.channels == 0) {
        throw FormatError(r.path().string() + ": zero dimension in header", dims_at);
    }
    if (h.frames > (r.size() - r.offset()) / 8) {
        throw FormatError(r.path().string() + ": truncated frame id table", r.offset());
    }
    h.frame_ids.resize(h.frames);
    for (auto& id : h.frame_ids) id = r.pod<std::int64_t>("frame ids");
    const auto meta_len = r.pod<std::uint64_t>("meta length");
    h.meta = parse_json_blob(r, meta_len, "meta");
    h.payload_offset = r.offset();
    const std::uint64_t expected = h.frames * h.height * h.width * h.channels * 4;
    const std::uint64_t available = r.size() - h.payload_offset;
    if (available < expected) {
        throw FormatError(r.path().string() + ": truncated payload (" + std::to_string(available) + " of " +
                              std::to_string(expected) + " bytes)",
                          r.size());
    }
    if (available > expected) {
        throw FormatError(r.path().string() + ": trailing bytes after payload", h.payload_offset + expected);
    }
    return h;
}

}  // namespace

FeatureFileHeader read_feature_header(const fs::path& path) {
    BinaryReader r(path);
    return read_header(r);
}

FeatureSequence load_features(const fs::path& path) {
    BinaryReader r(path);
    FeatureFileHeader h = read_header(r);
    FeatureSequence f;
    f.frames = h.frames;
    f.height = h.height;
    f.width = h.width;
    f.channels = h.channels;
    f.frame_ids = std::move(h.frame_ids);
    f.meta = std::move(h.meta);
    f.data.resize(f.frames * f.height * f.width * f.channels);
    r.bytes(f.data.data(), f.data.size() * sizeof(float), "payload");
    f.validate();
    return f;
}

// ------------------------------------------------------------ targets

FeatureSequence targets_to_features(const DenseTargets& t) {
    FeatureSequence f(t.frames, t.height, t.width, 5);
    f.frame_ids = t.frame_ids;
    f.meta = {{"kind", "targets"},
              {"channels", {"label", "depth", "nx", "ny", "nz"}},
              {"ignore_value", t.ignore_value},
              {"class_count", t.class_count},
              {"movable", std::vector<std::int32_t>(t.movable.begin(), t.movable.end())}};
    for (std::size_t i = 0; i < f.tokens(); ++i) {
        float* dst = f.token(i);
        dst[0] = static_cast<float>(t.labels[i]);
        dst[1] = static_cast<float>(t.depth[i]);
        for (std::size_t k = 0; k < 3; ++k) dst[2 + k] = static_cast<float>(t.normals[3 * i + k]);
    }
    return f;
}

DenseTargets targets_from_features(const FeatureSequence& f) {
    if (f.channels != 5 || f.meta.value("kind", "") != "targets") {
        throw FormatError("feature file does not hold dense targets", 0);
    }
    DenseTargets t;
    t.frames = f.frames;
    t.height = f.height;
    t.width = f.width;
    t.frame_ids = f.frame_ids;
    t.ignore_value = f.meta.value("ignore_value", 255);
    t.class_count = f.meta.value("class_count", 0);
    for (std::int32_t m : f.meta.value("movable", std::vector<std::int32_t>{})) t.movable.insert(m);
    const std::size_t tokens = f.tokens();
    t.labels.resize(tokens);
    t.depth.resize(tokens);
    t.normals.resize(tokens * 3);
    for (std::size_t i = 0; i < tokens; ++i) {
        const float* src = f.token(i);
        t.labels[i] = static_cast<std::int32_t>(std::lround(src[0]));
        t.depth[i] = src[1];
        for (std::size_t k = 0; k < 3; ++k) t.normals[3 * i + k] = src[2 + k];
    }
    return t;
}

void save_targets(const fs::path& path, const DenseTargets& t) { save_features(path, targets_to_features(t)); }

DenseTargets load_targets(const fs::path& path) { return targets_from_features(load_features(path)); }

// ------------------------------------------------------------ PCA and heads

void save_pca(const fs::path& path, const PcaModel& model) {
    std::vector<std::pair<std::string, StoredTensor>> tensors;
    store_pca(tensors, "", model);
    write_archive(path, kPcaMagic, kPcaVersion, {{"c_in", model.c_in}, {"d_out", model.d_out}}, tensors);
}

PcaModel load_pca(const fs::path& path) {
    const auto [header, tensors] = read_archive(path, kPcaMagic, kPcaVersion, "PCA");
    return restore_pca(tensors, "", path);
}

nlohmann::json head_to_json(const ReadoutHead& head) {
    nlohmann::json weight = nlohmann::json::array();
    for (Eigen::Index r = 0; r < head.weight.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(head.weight.cols()));
        for (Eigen::Index c = 0; c < head.weight.cols(); ++c) row[static_cast<std::size_t>(c)] = head.weight(r, c);
        weight.push_back(row);
    }
    return {{"task", to_string(head.task)},
            {"class_count", head.class_count},
            {"movable", std::vector<std::int32_t>(head.movable.begin(), head.movable.end())},
            {"in_dim", head.weight.cols()},
            {"out_dim", head.weight.rows()},
            {"weight", weight},
            {"bias", std::vector<double>(head.bias.data(), head.bias.data() + head.bias.size())}};
}

ReadoutHead head_from_json(const nlohmann::json& j) {
    ReadoutHead head;
    head.task = parse_head_task(j.at("task").get<std::string>());
    head.class_count = j.value("class_count", 0);
    for (std::int32_t m : j.value("movable", std::vector<std::int32_t>{})) head.movable.insert(m);
    const auto rows = j.at("out_dim").get<Eigen::Index>();
    const auto cols = j.at("in_dim").get<Eigen::Index>();
    head.weight.resize(rows, cols);
    const auto& weight = j.at("weight");
    if (static_cast<Eigen::Index>(weight.size()) != rows) throw FormatError("head: weight row count mismatch", 0);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto row = weight[static_cast<std::size_t>(r)].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != cols) throw FormatError("head: weight column count mismatch", 0);
        for (Eigen::Index c = 0; c < cols; ++c) head.weight(r, c) = row[static_cast<std::size_t>(c)];
    }
    const auto bias = j.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(bias.size()) != rows) throw FormatError("head: bias length mismatch", 0);
    head.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), rows);
    return head;
}

void save_head(const fs::path& path, const ReadoutHead& head) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << head_to_json(head).dump() << '\n';
}

ReadoutHead load_head(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return head_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid head file: " + e.what(), 0);
    }
}

std::vector<ReadoutHead> load_heads(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<ReadoutHead> heads;
    for (const auto& f : files) {
        std::ifstream in(f);
        const auto j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("task")) continue;
        heads.push_back(head_from_json(j));
    }
    if (heads.empty()) throw ParameterError("no readout heads found in " + dir.string());
    return heads;
}

// ------------------------------------------------------------ configuration

nlohmann::json to_json(const ForecasterConfig& c) {
    return {{"n_layers", c.n_layers},       {"d_model", c.d_model},
            {"n_heads", c.n_heads},         {"d_in", c.d_in},
            {"seq_frames", c.seq_frames},   {"context_frames", c.context_frames},
            {"grid_h", c.grid_h},           {"grid_w", c.grid_w},
            {"mlp_ratio", c.mlp_ratio}};
}

ForecasterConfig forecaster_config_from_json(const nlohmann::json& j) {
    ForecasterConfig c;
    c.n_layers = j.value("n_layers", c.n_layers);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_in = j.value("d_in", c.d_in);
    c.seq_frames = j.value("seq_frames", c.seq_frames);
    c.context_frames = j.value("context_frames", c.context_frames);
    c.grid_h = j.value("grid_h", c.grid_h);
    c.grid_w = j.value("grid_w", c.grid_w);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j = {{"loss", to_string(c.loss.variant)},
                        {"beta", c.loss.beta},
                        {"cos_weight", c.loss.cos_weight},
                        {"mask", to_string(c.mask_strategy)},
                        {"random_ratio", c.random_ratio ? nlohmann::json(*c.random_ratio) : nlohmann::json(nullptr)},
                        {"lr", c.lr},
                        {"adam_beta1", c.adam_beta1},
                        {"adam_beta2", c.adam_beta2},
                        {"adam_eps", c.adam_eps},
                        {"schedule", "cosine"},
                        {"warmup_steps", c.warmup_steps},
                        {"total_steps", c.total_steps},
                        {"batch_size", c.batch_size},
                        {"seed", c.seed},
                        {"clip_norm", c.clip_norm ? nlohmann::json(*c.clip_norm) : nlohmann::json(nullptr)},
                        {"random_crop", c.random_crop}};
    if (c.phase2) {
        j["phase2"] = {{"grid_h", c.phase2->grid_h}, {"grid_w", c.phase2->grid_w}, {"steps", c.phase2->steps}};
    }
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.loss.variant = parse_loss_variant(j.value("loss", std::string("smooth_l1")));
    c.loss.beta = j.value("beta", c.loss.beta);
    c.loss.cos_weight = j.value("cos_weight", c.loss.cos_weight);
    c.mask_strategy = parse_mask_strategy(j.value("mask", std::string("full")));
    if (j.contains("random_ratio") && !j["random_ratio"].is_null()) c.random_ratio = j["random_ratio"].get<double>();
    c.lr = j.value("lr", c.lr);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    if (j.value("schedule", std::string("cosine")) != "cosine") {
        throw ParameterError("train config: only the cosine schedule is supported");
    }
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("clip_norm") && !j["clip_norm"].is_null()) c.clip_norm = j["clip_norm"].get<double>();
    c.random_crop = j.value("random_crop", c.random_crop);
    if (j.contains("phase2") && !j["phase2"].is_null()) {
        const auto& p = j["phase2"];
        c.phase2 = Phase2Config{p.at("grid_h").get<std::size_t>(), p.at("grid_w").get<std::size_t>(),
                                p.at("steps").get<std::int64_t>()};
    }
    return c;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (data.frame_stride < 1) throw ParameterError("data.frame_stride must be >= 1");
    if (train.phase2 && !data.phase2_corpus && data.corpus.empty()) {
        throw ParameterError("phase2 requires data.phase2_corpus or data.corpus");
    }
    if (!(init_std >= 0.0)) throw ParameterError("init_std must be >= 0");
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json data = {{"corpus", c.data.corpus}, {"frame_stride", c.data.frame_stride}};
    if (c.data.pca) data["pca"] = *c.data.pca;
    if (c.data.phase2_corpus) data["phase2_corpus"] = *c.data.phase2_corpus;
    nlohmann::json j = {{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"data", data}, {"init_std", c.init_std}};
    if (c.loss_csv) j["loss_csv"] = *c.loss_csv;
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        if (j.contains("model")) c.model = forecaster_config_from_json(j["model"]);
        if (j.contains("train")) c.train = train_config_from_json(j["train"]);
        if (j.contains("data")) {
            const auto& d = j["data"];
            c.data.corpus = d.value("corpus", std::string());
            if (d.contains("pca") && !d["pca"].is_null()) c.data.pca = d["pca"].get<std::string>();
            c.data.frame_stride = d.value("frame_stride", c.data.frame_stride);
            if (d.contains("phase2_corpus") && !d["phase2_corpus"].is_null()) {
                c.data.phase2_corpus = d["phase2_corpus"].get<std::string>();
            }
        }
        c.init_std = j.value("init_std", c.init_std);
        if (j.contains("loss_csv") && !j["loss_csv"].is_null()) c.loss_csv = j["loss_csv"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("run config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open run config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError("run config " + path.string() + ": " + e.what());
    }
    RunConfig c = run_config_from_json(j);
    // Relative data paths resolve against the config file's directory.
    const fs::path base = path.parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(c.data.corpus);
    if (c.data.pca) resolve(*c.data.pca);
    if (c.data.phase2_corpus) resolve(*c.data.phase2_corpus);
    if (c.loss_csv) resolve(*c.loss_csv);
    return c;
}

// ------------------------------------------------------------ checkpoints

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    nlohmann::json header = {{"model", to_json(ckpt.weights.config)},
                             {"step", ckpt.step},
                             {"has_optimizer", ckpt.optimizer.has_value()},
                             {"has_pca", ckpt.pca.has_value()}};
    if (ckpt.train) header["train"] = to_json(*ckpt.train);
    if (ckpt.optimizer) {
        header["optimizer_step"] = ckpt.optimizer->step;
        header["optimizer_model"] = to_json(ckpt.optimizer->first_moment.config);
    }
    std::vector<std::pair<std::string, StoredTensor>> tensors;
    store_weights(tensors, "weights.", ckpt.weights);
    if (ckpt.optimizer) {
        store_weights(tensors, "adam.m.", ckpt.optimizer->first_moment);
        store_weights(tensors, "adam.v.", ckpt.optimizer->second_moment);
    }
    if (ckpt.pca) store_pca(tensors, "pca.", *ckpt.pca);
    write_archive(path, kCheckpointMagic, kCheckpointVersion, header, tensors);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const auto [header, tensors] = read_archive(path, kCheckpointMagic, kCheckpointVersion, "checkpoint");
    Checkpoint ckpt;
    try {
        ckpt.weights = ForecasterWeights<float>::zeros(forecaster_config_from_json(header.at("model")));
        restore_weights(tensors, "weights.", ckpt.weights, path);
        ckpt.step = header.value("step", std::int64_t{0});
        if (header.contains("train")) ckpt.train = train_config_from_json(header["train"]);
        if (header.value("has_optimizer", false)) {
            const ForecasterConfig oc = forecaster_config_from_json(header.at("optimizer_model"));
            OptimizerState<float> state = OptimizerState<float>::zeros(oc);
            restore_weights(tensors, "adam.m.", state.first_moment, path);
            restore_weights(tensors, "adam.v.", state.second_moment, path);
            state.step = header.at("optimizer_step").get<std::int64_t>();
            ckpt.optimizer = std::move(state);
        }
        if (header.value("has_pca", false)) ckpt.pca = restore_pca(tensors, "pca.", path);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed checkpoint header: " + e.what(), 12);
    }
    return ckpt;
}

void require_grid(const ForecasterWeights<float>& w, std::size_t grid_h, std::size_t grid_w) {
    if (w.config.grid_h != grid_h || w.config.grid_w != grid_w) {
        throw DimensionError("checkpoint was trained on a " + std::to_string(w.config.grid_h) + "x" +
                             std::to_string(w.config.grid_w) + " grid but the input is " + std::to_string(grid_h) +
                             "x" + std::to_string(grid_w) + "; run interpolate_positions (--interp-pos " +
                             std::to_string(grid_h) + "," + std::to_string(grid_w) +
                             ") or sliding-window inference (--sliding) first");
    }
}

// ------------------------------------------------------------ corpora

void save_manifest(const fs::path& dir, const CorpusManifest& manifest) {
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& e : manifest.sequences) {
        seqs.push_back({{"name", e.name}, {"features", e.features}, {"targets", e.targets}, {"split", e.split}});
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
    out << nlohmann::json{{"sequences", seqs}, {"info", manifest.info}}.dump(2) << '\n';
}

CorpusManifest load_manifest(const fs::path& dir) {
    CorpusManifest m;
    const fs::path file = dir / "manifest.json";
    if (!fs::exists(file)) {
        if (!fs::is_directory(dir)) throw std::runtime_error("corpus directory " + dir.string() + " does not exist");
        std::vector<fs::path> feats;
        for (const auto& entry : fs::directory_iterator(dir)) {
            const auto name = entry.path().filename().string();
            if (entry.path().extension() == ".feat" && !name.ends_with(".targets.feat")) feats.push_back(entry.path());
        }
        std::sort(feats.begin(), feats.end());
        for (const auto& p : feats) m.sequences.push_back({p.stem().string(), p.filename().string(), "", "train"});
        return m;
    }
    std::ifstream in(file);
    try {
        const auto j = nlohmann::json::parse(in);
        for (const auto& s : j.at("sequences")) {
            m.sequences.push_back({s.at("name").get<std::string>(), s.at("features").get<std::string>(),
                                   s.value("targets", std::string()), s.value("split", std::string("train"))});
        }
        m.info = j.value("info", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(file.string() + ": " + e.what(), 0);
    }
    return m;
}

std::vector<FeatureSequence> load_split_features(const fs::path& dir, const std::string& split) {
    std::vector<FeatureSequence> out;
    for (const auto& e : load_manifest(dir).sequences)
        if (split.empty() || e.split == split) out.push_back(load_features(dir / e.features));
    return out;
}

std::vector<EvalSequence> load_eval_sequences(const fs::path& dir, const std::string& split) {
    std::vector<EvalSequence> out;
    for (const auto& e : load_manifest(dir).sequences) {
        if (!split.empty() && e.split != split) continue;
        if (e.targets.empty()) throw ParameterError("sequence '" + e.name + "' has no targets file");
        out.push_back({e.name, load_features(dir / e.features), load_targets(dir / e.targets)});
    }
    return out;
}

std::vector<FeatureSequence> extract_windows(const FeatureSequence& seq, std::size_t frames, std::int64_t stride) {
    if (frames < 1 || stride < 1) throw ParameterError("extract_windows: frames and stride must be >= 1");
    std::vector<FeatureSequence> out;
    for (std::size_t start = 0; start < seq.frames; ++start) {
        std::vector<std::size_t> positions;
        for (std::size_t k = 0; k < frames; ++k) {
            const std::ptrdiff_t p = seq.find_frame(seq.frame_ids[start] + static_cast<std::int64_t>(k) * stride);
            if (p < 0) break;
            positions.push_back(static_cast<std::size_t>(p));
        }
        if (positions.size() == frames) out.push_back(seq.select_frames(positions));
    }
    return out;
}

// ------------------------------------------------------------ synthetic scenes

nlohmann::json to_json(const SceneSpec& s) {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& [vr, vc] : s.velocities) v.push_back({vr, vc});
    return {{"sequences", s.sequences},         {"train_sequences", s.train_sequences},
            {"frames", s.frames},               {"grid_h", s.grid_h},
            {"grid_w", s.grid_w},               {"channels", s.channels},
            {"classes", s.classes},             {"min_blobs", s.min_blobs},
            {"max_blobs", s.max_blobs},         {"min_blob_size", s.min_blob_size},
            {"max_blob_size", s.max_blob_size}, {"velocities", v},
            {"texture_noise", s.texture_noise}, {"temporal_noise", s.temporal_noise}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
    SceneSpec s;
    try {
        s.sequences = j.value("sequences", s.sequences);
        s.train_sequences = j.value("train_sequences", s.train_sequences);
        s.frames = j.value("frames", s.frames);
        s.grid_h = j.value("grid_h", s.grid_h);
        s.grid_w = j.value("grid_w", s.grid_w);
        s.channels = j.value("channels", s.channels);
        s.classes = j.value("classes", s.classes);
        s.min_blobs = j.value("min_blobs", s.min_blobs);
        s.max_blobs = j.value("max_blobs", s.max_blobs);
        s.min_blob_size = j.value("min_blob_size", s.min_blob_size);
        s.max_blob_size = j.value("max_blob_size", s.max_blob_size);
        if (j.contains("velocities")) {
            s.velocities.clear();
            for (const auto& v : j["velocities"]) s.velocities.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
        }
        s.texture_noise = j.value("texture_noise", s.texture_noise);
        s.temporal_noise = j.value("temporal_noise", s.temporal_noise);
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("scene spec: ") + e.what());
    }
    if (s.sequences < 1 || s.train_sequences > s.sequences || s.frames < 1 || s.grid_h < 1 || s.grid_w < 1 ||
        s.channels < 1 || s.classes < 1 || s.min_blobs > s.max_blobs || s.min_blob_size < 1 ||
        s.min_blob_size > s.max_blob_size || s.velocities.empty()) {
        throw ParameterError("scene spec: inconsistent values");
    }
    return s;
}

std::pair<std::int64_t, std::int64_t> blob_origin(std::int64_t row0, std::int64_t col0, double v_row, double v_col,
                                                  std::int64_t frame, std::size_t grid_h, std::size_t grid_w) {
    auto wrap = [](std::int64_t v, std::size_t n) {
        const auto m = static_cast<std::int64_t>(n);
        return ((v % m) + m) % m;
    };
    const auto r = static_cast<std::int64_t>(std::llround(static_cast<double>(row0) + v_row * static_cast<double>(frame)));
    const auto c = static_cast<std::int64_t>(std::llround(static_cast<double>(col0) + v_col * static_cast<double>(frame)));
    return {wrap(r, grid_h), wrap(c, grid_w)};
}

namespace {

std::array<double, 3> class_normal(std::int32_t k) {
    constexpr double s = 0.70710678118654752;
    if (k == 0) return {0.0, 1.0, 0.0};
    switch (k % 3) {
        case 1: return {0.0, 0.0, 1.0};
        case 2: return {s, 0.0, s};
        default: return {-s, 0.0, s};
    }
}

double class_depth(std::int32_t k) { return 2.0 + static_cast<double>(k); }

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SceneSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t c_dim = spec.channels;
    const auto classes = static_cast<std::size_t>(spec.classes);

    auto unit_vector = [&](bool smooth) {
        std::vector<double> v(c_dim);
        for (double& x : v) x = normal(rng);
        if (smooth && c_dim >= 3) {
            std::vector<double> s(c_dim);
            for (std::size_t i = 0; i < c_dim; ++i)
                s[i] = (v[(i + c_dim - 1) % c_dim] + v[i] + v[(i + 1) % c_dim]) / 3.0;
            v = s;
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= (n > 0.0 ? n : 1.0);
        return v;
    };
    std::vector<std::vector<double>> signature(classes);
    for (auto& s : signature) s = unit_vector(true);
    const std::vector<double> row_signature = unit_vector(true);

    SyntheticCorpus corpus;
    corpus.spec = spec;
    const std::size_t cells = spec.grid_h * spec.grid_w;
    auto ramp = [&](std::size_t h) {
        return spec.grid_h > 1 ? static_cast<double>(h) / static_cast<double>(spec.grid_h - 1) - 0.5 : 0.0;
    };

    for (std::size_t s = 0; s < spec.sequences; ++s) {
        struct Blob {
            std::int32_t cls;
            std::size_t h, w;
            std::int64_t row0, col0;
            double v_row, v_col;
            std::vector<double> texture;  // [h * w * C]
        };
        std::vector<double> background_texture(cells * c_dim);
        for (double& x : background_texture) x = spec.texture_noise * normal(rng);
        const std::size_t n_blobs =
            std::uniform_int_distribution<std::size_t>(spec.min_blobs, spec.max_blobs)(rng);
        std::vector<Blob> blobs;
        nlohmann::json blob_json = nlohmann::json::array();
        for (std::size_t b = 0; b < n_blobs && classes > 1; ++b) {
            Blob blob;
            blob.cls = std::uniform_int_distribution<std::int32_t>(1, spec.classes - 1)(rng);
            blob.h = std::min(spec.grid_h,
                              std::uniform_int_distribution<std::size_t>(spec.min_blob_size, spec.max_blob_size)(rng));
            blob.w = std::min(spec.grid_w,
                              std::uniform_int_distribution<std::size_t>(spec.min_blob_size, spec.max_blob_size)(rng));
            blob.row0 = std::uniform_int_distribution<std::int64_t>(0, static_cast<std::int64_t>(spec.grid_h) - 1)(rng);
            blob.col0 = std::uniform_int_distribution<std::int64_t>(0, static_cast<std::int64_t>(spec.grid_w) - 1)(rng);
            const auto& v = spec.velocities[std::uniform_int_distribution<std::size_t>(0, spec.velocities.size() - 1)(rng)];
            blob.v_row = v.first;
            blob.v_col = v.second;
            blob.texture.resize(blob.h * blob.w * c_dim);
            for (double& x : blob.texture) x = spec.texture_noise * normal(rng);
            blob_json.push_back({{"class", blob.cls},
                                 {"size", {blob.h, blob.w}},
                                 {"origin", {blob.row0, blob.col0}},
                                 {"velocity", {blob.v_row, blob.v_col}}});
            blobs.push_back(std::move(blob));
        }

        SyntheticSequence seq;
        seq.name = "seq_" + std::string(4 - std::min<std::size_t>(4, std::to_string(s).size()), '0') + std::to_string(s);
        seq.blobs = blob_json;
        seq.features = FeatureSequence(spec.frames, spec.grid_h, spec.grid_w, c_dim);
        seq.features.meta = {{"encoder", "synthetic"}, {"sequence", seq.name}, {"blobs", blob_json}};
        DenseTargets& t = seq.targets;
        t.frames = spec.frames;
        t.height = spec.grid_h;
        t.width = spec.grid_w;
        t.frame_ids = seq.features.frame_ids;
        t.class_count = spec.classes;
        for (std::int32_t k = 1; k < spec.classes; ++k) t.movable.insert(k);
        t.labels.assign(spec.frames * cells, 0);
        t.depth.assign(spec.frames * cells, 0.0);
        t.normals.assign(spec.frames * cells * 3, 0.0);

        std::vector<double> token(c_dim);
        for (std::size_t n = 0; n < spec.frames; ++n) {
            // Owner of each cell: -1 = background, else blob index and texture offset.
            std::vector<std::pair<std::ptrdiff_t, std::size_t>> owner(cells, {-1, 0});
            for (std::size_t b = 0; b < blobs.size(); ++b) {
                const Blob& blob = blobs[b];
                const auto [r0, c0] = blob_origin(blob.row0, blob.col0, blob.v_row, blob.v_col,
                                                  static_cast<std::int64_t>(n), spec.grid_h, spec.grid_w);
                for (std::size_t i = 0; i < blob.h; ++i)
                    for (std::size_t j = 0; j < blob.w; ++j) {
                        const std::size_t r = (static_cast<std::size_t>(r0) + i) % spec.grid_h;
                        const std::size_t c = (static_cast<std::size_t>(c0) + j) % spec.grid_w;
                        owner[r * spec.grid_w + c] = {static_cast<std::ptrdiff_t>(b), i * blob.w + j};
                    }
            }
            for (std::size_t cell = 0; cell < cells; ++cell) {
                const std::size_t h = cell / spec.grid_w;
                const std::size_t idx = n * cells + cell;
                const auto [b, off] = owner[cell];
                std::int32_t cls = 0;
                if (b < 0) {
                    for (std::size_t k = 0; k < c_dim; ++k)
                        token[k] = signature[0][k] + ramp(h) * row_signature[k] + background_texture[cell * c_dim + k];
                    t.depth[idx] = 12.5 - 15.0 * ramp(h);
                } else {
                    const Blob& blob = blobs[static_cast<std::size_t>(b)];
                    cls = blob.cls;
                    for (std::size_t k = 0; k < c_dim; ++k)
                        token[k] = signature[static_cast<std::size_t>(cls)][k] + blob.texture[off * c_dim + k];
                    t.depth[idx] = class_depth(cls);
                }
                t.labels[idx] = cls;
                const auto nrm = class_normal(cls);
                for (std::size_t k = 0; k < 3; ++k) t.normals[3 * idx + k] = nrm[k];
                float* dst = seq.features.token(idx);
                for (std::size_t k = 0; k < c_dim; ++k) {
                    const double noise = spec.temporal_noise > 0.0 ? spec.temporal_noise * normal(rng) : 0.0;
                    dst[k] = static_cast<float>(token[k] + noise);
                }
            }
        }
        corpus.sequences.push_back(std::move(seq));
    }
    return corpus;
}

void write_corpus(const fs::path& dir, const SyntheticCorpus& corpus) {
    fs::create_directories(dir);
    CorpusManifest manifest;
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
        const auto& s = corpus.sequences[i];
        const std::string feat = s.name + ".feat";
        const std::string targ = s.name + ".targets.feat";
        save_features(dir / feat, s.features);
        save_targets(dir / targ, s.targets);
        manifest.sequences.push_back({s.name, feat, targ, i < corpus.spec.train_sequences ? "train" : "eval"});
    }
    manifest.info = {{"generator", "synthetic-moving-blobs"}, {"spec", to_json(corpus.spec)}};
    save_manifest(dir, manifest);
}

}  // namespace foresight
