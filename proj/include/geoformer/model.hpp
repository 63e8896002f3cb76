#pragma once

#include "geoformer/encoder.hpp"
#include "geoformer/norm_stats.hpp"

#include <string>
#include <utility>
#include <vector>

namespace geoformer {

struct ModelConfig {
    size_t image_size = 64;
    size_t patch = 8;
    size_t d_model = 64;
    size_t n_heads = 4;
    size_t spatial_blocks = 2;
    size_t temporal_blocks = 2;
    size_t history_len = 32;
    size_t cam_layers = 1; // fixed single-head cross-attention layer
    size_t cam_heads = 1;
    ProbSparseConfig probsparse;

    size_t ff_hidden() const { return 4 * d_model; }
    size_t n_patches() const { return (image_size / patch) * (image_size / patch); }
    void validate() const;
    /// Parameter count from the hyperparameters alone; must agree with the
    /// element-count sum over the actual tensors.
    size_t analytic_param_count() const;
};

/// Single-head cross-attention projections.
struct CamParams {
    Tensor w_q, w_k, w_v, w_o; // each d_model x d_model
};

/// Two affine layers with a GELU between them.
struct HeadParams {
    Tensor w1, b1; // d_model x d_model, [d_model]
    Tensor w2, b2; // d_model x 1, [1]
};

struct Prediction {
    double value = 0.0; // ug/m3, de-normalized
    long timestamp = 0;
};

struct GeoFormerModel {
    ModelConfig config;
    NormStats stats;
    VitParams vit;
    SeriesParams ts;
    CamParams cam;
    HeadParams head;

    static GeoFormerModel init(const ModelConfig& cfg, const NormStats& stats, uint64_t seed);

    /// Canonical parameter order; training, checkpoints and Adam state all
    /// index into this.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    /// Deep copy with fresh parameter storage (still requires_grad).
    GeoFormerModel clone() const;
};

/// Temporal queries attend over spatial keys/values; the attended sequence
/// is mean-pooled into one feature vector of width d_model.
Tensor cross_attend(const Tensor& temporal, const Tensor& spatial, const CamParams& params);

/// affine -> GELU -> affine, scalar output (normalized units).
Tensor regress_head(const Tensor& feature, const HeadParams& params);

/// Full pipeline on normalized inputs; returns the normalized scalar with
/// the compute graph attached (training path).
Tensor forward_normalized(const Tensor& image_norm, const Tensor& history_norm,
                          const GeoFormerModel& model);

/// Inference: normalized image + physical history in, de-normalized
/// prediction out. No graph is recorded.
Prediction forward(const Tensor& image_norm, const No2Series& history,
                   const GeoFormerModel& model);

size_t param_count(const GeoFormerModel& model);
/// Sum of the GFT1 container sizes of all parameter tensors
/// (4 bytes per value plus per-tensor headers).
size_t serialized_size_bytes(const GeoFormerModel& model);

/// Checkpoint directory: manifest.json (hyperparameters, normalization
/// stats, tensor index) plus one GFT1 container per parameter tensor.
/// `extra_manifest` (e.g. the train config) is merged into the manifest.
void save_checkpoint(const GeoFormerModel& model, const std::string& dir,
                     const std::string& extra_manifest_json = "");
GeoFormerModel load_checkpoint(const std::string& dir);

} // namespace geoformer
