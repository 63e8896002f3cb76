#include "geoformer/model.hpp"

#include "geoformer/tensor_io.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace geoformer {

namespace fs = std::filesystem;
using nlohmann::json;

void ModelConfig::validate() const {
    AttentionConfig::make(d_model, n_heads); // divisibility
    if (patch == 0 || image_size % patch != 0)
        throw std::invalid_argument("model config: image size " + std::to_string(image_size) +
                                    " not divisible by patch " + std::to_string(patch));
    if (spatial_blocks == 0 || temporal_blocks == 0)
        throw std::invalid_argument("model config: encoder stacks must have >= 1 block");
    if (history_len == 0) throw std::invalid_argument("model config: history_len must be >= 1");
    if (cam_layers != 1 || cam_heads != 1)
        throw std::invalid_argument("model config: CAM is fixed to one single-head layer");
}

size_t ModelConfig::analytic_param_count() const {
    const size_t d = d_model, f = ff_hidden();
    const size_t block = 4 * d * d            // per-head Q/K/V plus output projection
                         + d * f + f + f * d + d // feed-forward
                         + 4 * d;                // two layernorms
    const size_t vit_params = patch * patch * d + spatial_blocks * block;
    const size_t ts_params = d + temporal_blocks * block;
    const size_t cam_params = 4 * d * d;
    const size_t head_params = d * d + d + d + 1;
    return vit_params + ts_params + cam_params + head_params;
}

GeoFormerModel GeoFormerModel::init(const ModelConfig& cfg, const NormStats& stats,
                                    uint64_t seed) {
    cfg.validate();
    GeoFormerModel m;
    m.config = cfg;
    m.stats = stats;
    const AttentionConfig att = AttentionConfig::make(cfg.d_model, cfg.n_heads);

    SplitMix64 rng_vit(derive_seed(seed, {1}));
    const size_t pp = cfg.patch * cfg.patch;
    const double be = std::sqrt(6.0 / static_cast<double>(pp + cfg.d_model));
    m.vit.w_embed = Tensor::zeros({pp, cfg.d_model}, true);
    for (size_t i = 0; i < m.vit.w_embed.numel(); ++i)
        m.vit.w_embed[i] = rng_vit.uniform(-be, be);
    for (size_t b = 0; b < cfg.spatial_blocks; ++b)
        m.vit.blocks.push_back(EncoderBlockParams::init(att, cfg.ff_hidden(), rng_vit));

    SplitMix64 rng_ts(derive_seed(seed, {2}));
    const double bv = std::sqrt(6.0 / static_cast<double>(1 + cfg.d_model));
    m.ts.w_value = Tensor::zeros({1, cfg.d_model}, true);
    for (size_t i = 0; i < m.ts.w_value.numel(); ++i) m.ts.w_value[i] = rng_ts.uniform(-bv, bv);
    for (size_t b = 0; b < cfg.temporal_blocks; ++b)
        m.ts.blocks.push_back(EncoderBlockParams::init(att, cfg.ff_hidden(), rng_ts));
    m.ts.probsparse = cfg.probsparse;

    SplitMix64 rng_cam(derive_seed(seed, {3}));
    const double bc = std::sqrt(6.0 / static_cast<double>(2 * cfg.d_model));
    for (Tensor* w : {&m.cam.w_q, &m.cam.w_k, &m.cam.w_v, &m.cam.w_o}) {
        *w = Tensor::zeros({cfg.d_model, cfg.d_model}, true);
        for (size_t i = 0; i < w->numel(); ++i) (*w)[i] = rng_cam.uniform(-bc, bc);
    }

    SplitMix64 rng_head(derive_seed(seed, {4}));
    const double bh = std::sqrt(6.0 / static_cast<double>(2 * cfg.d_model));
    m.head.w1 = Tensor::zeros({cfg.d_model, cfg.d_model}, true);
    for (size_t i = 0; i < m.head.w1.numel(); ++i) m.head.w1[i] = rng_head.uniform(-bh, bh);
    m.head.b1 = Tensor::zeros({cfg.d_model}, true);
    const double bo = std::sqrt(6.0 / static_cast<double>(cfg.d_model + 1));
    m.head.w2 = Tensor::zeros({cfg.d_model, 1}, true);
    for (size_t i = 0; i < m.head.w2.numel(); ++i) m.head.w2[i] = rng_head.uniform(-bo, bo);
    m.head.b2 = Tensor::zeros({1}, true);
    return m;
}

namespace {

void collect_block(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                   const EncoderBlockParams& b) {
    for (size_t h = 0; h < b.mhsa.n_heads(); ++h) {
        out.emplace_back(prefix + ".wq" + std::to_string(h), b.mhsa.w_q[h]);
        out.emplace_back(prefix + ".wk" + std::to_string(h), b.mhsa.w_k[h]);
        out.emplace_back(prefix + ".wv" + std::to_string(h), b.mhsa.w_v[h]);
    }
    out.emplace_back(prefix + ".wo", b.mhsa.w_o);
    out.emplace_back(prefix + ".ff.w1", b.ff.w1);
    out.emplace_back(prefix + ".ff.b1", b.ff.b1);
    out.emplace_back(prefix + ".ff.w2", b.ff.w2);
    out.emplace_back(prefix + ".ff.b2", b.ff.b2);
    out.emplace_back(prefix + ".ln1.gamma", b.ln1.gamma);
    out.emplace_back(prefix + ".ln1.beta", b.ln1.beta);
    out.emplace_back(prefix + ".ln2.gamma", b.ln2.gamma);
    out.emplace_back(prefix + ".ln2.beta", b.ln2.beta);
}

} // namespace

std::vector<std::pair<std::string, Tensor>> GeoFormerModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("vit.embed", vit.w_embed);
    for (size_t i = 0; i < vit.blocks.size(); ++i)
        collect_block(out, "vit.block" + std::to_string(i), vit.blocks[i]);
    out.emplace_back("ts.embed", ts.w_value);
    for (size_t i = 0; i < ts.blocks.size(); ++i)
        collect_block(out, "ts.block" + std::to_string(i), ts.blocks[i]);
    out.emplace_back("cam.wq", cam.w_q);
    out.emplace_back("cam.wk", cam.w_k);
    out.emplace_back("cam.wv", cam.w_v);
    out.emplace_back("cam.wo", cam.w_o);
    out.emplace_back("head.w1", head.w1);
    out.emplace_back("head.b1", head.b1);
    out.emplace_back("head.w2", head.w2);
    out.emplace_back("head.b2", head.b2);
    return out;
}

std::vector<Tensor> GeoFormerModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

namespace {

Tensor cloned_param(const Tensor& t) {
    Tensor c = Tensor::from_data(t.shape(), t.data(), true);
    return c;
}

EncoderBlockParams clone_block(const EncoderBlockParams& b) {
    EncoderBlockParams c;
    for (size_t h = 0; h < b.mhsa.n_heads(); ++h) {
        c.mhsa.w_q.push_back(cloned_param(b.mhsa.w_q[h]));
        c.mhsa.w_k.push_back(cloned_param(b.mhsa.w_k[h]));
        c.mhsa.w_v.push_back(cloned_param(b.mhsa.w_v[h]));
    }
    c.mhsa.w_o = cloned_param(b.mhsa.w_o);
    c.ff.w1 = cloned_param(b.ff.w1);
    c.ff.b1 = cloned_param(b.ff.b1);
    c.ff.w2 = cloned_param(b.ff.w2);
    c.ff.b2 = cloned_param(b.ff.b2);
    c.ln1.gamma = cloned_param(b.ln1.gamma);
    c.ln1.beta = cloned_param(b.ln1.beta);
    c.ln2.gamma = cloned_param(b.ln2.gamma);
    c.ln2.beta = cloned_param(b.ln2.beta);
    return c;
}

} // namespace

GeoFormerModel GeoFormerModel::clone() const {
    GeoFormerModel c;
    c.config = config;
    c.stats = stats;
    c.vit.w_embed = cloned_param(vit.w_embed);
    for (const auto& b : vit.blocks) c.vit.blocks.push_back(clone_block(b));
    c.ts.w_value = cloned_param(ts.w_value);
    for (const auto& b : ts.blocks) c.ts.blocks.push_back(clone_block(b));
    c.ts.probsparse = ts.probsparse;
    c.cam.w_q = cloned_param(cam.w_q);
    c.cam.w_k = cloned_param(cam.w_k);
    c.cam.w_v = cloned_param(cam.w_v);
    c.cam.w_o = cloned_param(cam.w_o);
    c.head.w1 = cloned_param(head.w1);
    c.head.b1 = cloned_param(head.b1);
    c.head.w2 = cloned_param(head.w2);
    c.head.b2 = cloned_param(head.b2);
    return c;
}

Tensor cross_attend(const Tensor& temporal, const Tensor& spatial, const CamParams& params) {
    if (temporal.rank() != 2 || spatial.rank() != 2 || temporal.extent(1) != spatial.extent(1))
        throw std::invalid_argument("cross_attend: width mismatch (" +
                                    shape_str(temporal.shape()) + " vs " +
                                    shape_str(spatial.shape()) + ")");
    Tensor q = matmul(temporal, params.w_q);
    Tensor k = matmul(spatial, params.w_k);
    Tensor v = matmul(spatial, params.w_v);
    Tensor attended = matmul(dense_attention(q, k, v), params.w_o);
    return mean_over_rows(attended);
}

Tensor regress_head(const Tensor& feature, const HeadParams& params) {
    Tensor row = reshape(feature, {1, feature.numel()});
    Tensor hidden = gelu(linear(row, params.w1, params.b1));
    Tensor out = linear(hidden, params.w2, params.b2);
    return reshape(out, {1});
}

Tensor forward_normalized(const Tensor& image_norm, const Tensor& history_norm,
                          const GeoFormerModel& model) {
    Tensor spatial = vit_encode(image_norm, model.config.patch, model.vit);
    Tensor temporal = series_encode(history_norm, model.ts);
    Tensor feature = cross_attend(temporal, spatial, model.cam);
    return regress_head(feature, model.head);
}

Prediction forward(const Tensor& image_norm, const No2Series& history,
                   const GeoFormerModel& model) {
    history.validate();
    NoGradGuard ng;
    Tensor hist_norm = Tensor::zeros({history.length()});
    for (size_t i = 0; i < history.length(); ++i)
        hist_norm[i] = (history.values[i] - model.stats.conc_mean) / model.stats.conc_std;
    const double normalized = forward_normalized(image_norm, hist_norm, model).item();
    Prediction p;
    p.value = normalized * model.stats.conc_std + model.stats.conc_mean;
    p.timestamp = history.timestamps.back() + 1;
    return p;
}

size_t param_count(const GeoFormerModel& model) {
    size_t n = 0;
    for (const Tensor& t : model.parameters()) n += t.numel();
    return n;
}

size_t serialized_size_bytes(const GeoFormerModel& model) {
    size_t n = 0;
    for (const Tensor& t : model.parameters()) n += gft1_size_bytes(t.shape());
    return n;
}

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"image_size", c.image_size},
                {"patch", c.patch},
                {"d_model", c.d_model},
                {"n_heads", c.n_heads},
                {"spatial_blocks", c.spatial_blocks},
                {"temporal_blocks", c.temporal_blocks},
                {"history_len", c.history_len},
                {"cam_layers", c.cam_layers},
                {"cam_heads", c.cam_heads},
                {"probsparse",
                 {{"sampling_factor", c.probsparse.sampling_factor},
                  {"measurement_variant", to_string(c.probsparse.measurement_variant)},
                  {"key_sample_factor", c.probsparse.key_sample_factor},
                  {"seed", c.probsparse.seed}}}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.image_size = j.at("image_size").get<size_t>();
    c.patch = j.at("patch").get<size_t>();
    c.d_model = j.at("d_model").get<size_t>();
    c.n_heads = j.at("n_heads").get<size_t>();
    c.spatial_blocks = j.at("spatial_blocks").get<size_t>();
    c.temporal_blocks = j.at("temporal_blocks").get<size_t>();
    c.history_len = j.at("history_len").get<size_t>();
    c.cam_layers = j.at("cam_layers").get<size_t>();
    c.cam_heads = j.at("cam_heads").get<size_t>();
    const json& ps = j.at("probsparse");
    c.probsparse.sampling_factor = ps.at("sampling_factor").get<double>();
    c.probsparse.measurement_variant =
        measurement_variant_from_string(ps.at("measurement_variant").get<std::string>());
    c.probsparse.key_sample_factor = ps.at("key_sample_factor").get<double>();
    c.probsparse.seed = ps.at("seed").get<uint64_t>();
    return c;
}

std::string tensor_file_name(const std::string& param_name) { return param_name + ".gft1"; }

} // namespace

void save_checkpoint(const GeoFormerModel& model, const std::string& dir,
                     const std::string& extra_manifest_json) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("checkpoint: cannot create directory " + dir + ": " + ec.message());

    json manifest;
    manifest["format"] = "geoformer-checkpoint";
    manifest["version"] = 1;
    manifest["hyperparameters"] = config_to_json(model.config);
    manifest["normalization"] = {{"pixel_mean", model.stats.pixel_mean},
                                 {"pixel_std", model.stats.pixel_std},
                                 {"conc_mean", model.stats.conc_mean},
                                 {"conc_std", model.stats.conc_std}};
    manifest["param_count"] = param_count(model);
    json index = json::array();
    for (const auto& [name, t] : model.named_parameters()) {
        save_gft1(t, (fs::path(dir) / tensor_file_name(name)).string());
        index.push_back({{"name", name}, {"shape", t.shape()}, {"file", tensor_file_name(name)}});
    }
    manifest["tensors"] = index;
    if (!extra_manifest_json.empty()) {
        const json extra = json::parse(extra_manifest_json);
        for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
    }
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("checkpoint: short manifest write in " + dir);
}

GeoFormerModel load_checkpoint(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("checkpoint: cannot open manifest in " + dir);
    json manifest;
    in >> manifest;
    if (manifest.value("format", "") != "geoformer-checkpoint")
        throw IoError("checkpoint: unrecognized manifest format in " + dir);

    const ModelConfig cfg = config_from_json(manifest.at("hyperparameters"));
    NormStats stats;
    const json& norm = manifest.at("normalization");
    stats.pixel_mean = norm.at("pixel_mean").get<double>();
    stats.pixel_std = norm.at("pixel_std").get<double>();
    stats.conc_mean = norm.at("conc_mean").get<double>();
    stats.conc_std = norm.at("conc_std").get<double>();

    GeoFormerModel model = GeoFormerModel::init(cfg, stats, 0);
    for (auto& [name, t] : model.named_parameters()) {
        Tensor loaded = load_gft1((fs::path(dir) / tensor_file_name(name)).string());
        if (loaded.shape() != t.shape())
            throw IoError("checkpoint: tensor " + name + " has shape " +
                          shape_str(loaded.shape()) + ", expected " + shape_str(t.shape()));
        t.data() = loaded.data();
    }
    return model;
}

} // namespace geoformer
