#pragma once

#include "geoformer/data_synth.hpp"
#include "geoformer/model.hpp"

#include <string>
#include <vector>

namespace geoformer {

struct TrainConfig {
    size_t epochs = 600;
    size_t batch_size = 16;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0; // global gradient norm
    uint64_t seed = 42;
    size_t checkpoint_interval = 0; // epochs between periodic checkpoints; 0 = final only
    size_t threads = 1;             // speed knob; outputs are thread-count independent

    void validate() const;
    std::string to_json() const;
    /// Missing keys keep their current values (file overlays defaults,
    /// flags overlay the file).
    void merge_json(const std::string& text);
};

struct MetricsReport {
    double mae = 0.0; // ug/m3
    double mse = 0.0; // (ug/m3)^2
    size_t n_samples = 0;
    size_t param_count = 0;
    size_t size_bytes = 0;

    std::string to_json_line() const;
};

/// Mean of squared errors over the batch; differentiable w.r.t. pred.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// MAE/MSE over paired prediction/target vectors (one pass, index order).
/// The model-size fields are left zero.
MetricsReport compute_metrics(const std::vector<double>& predictions,
                              const std::vector<double>& targets);

/// First/second moment buffers, one pair per parameter tensor.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    size_t step = 0;
    static AdamState init(const std::vector<Tensor>& params);
};

/// Standard bias-corrected update; parameters without a recorded gradient
/// are treated as zero-gradient.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct TrainResult {
    std::vector<double> epoch_mse; // normalized units, one entry per epoch
    std::string checkpoint_dir;
};

/// Seeded shuffling per epoch, teacher-forced histories, per-sample gradient
/// slots reduced in sample order (bit-identical for any thread count).
/// Writes out_dir/loss.csv and out_dir/checkpoint/. Aborts on the first
/// non-finite loss, naming the offending sample.
TrainResult train(GeoFormerModel& model, const Dataset& dataset, const TrainConfig& cfg,
                  const std::string& out_dir);

/// MAE / MSE in de-normalized ug/m3 over the requested split, plus model
/// size figures. Side-effect free and thread-count independent.
MetricsReport evaluate(const GeoFormerModel& model, const Dataset& dataset,
                       const std::string& split, size_t threads = 1);

/// Inference mode that seeds each station's window with ground truth, then
/// feeds the model's own predictions back as history.
MetricsReport evaluate_autoregressive(const GeoFormerModel& model, const Dataset& dataset,
                                      const std::string& split);

} // namespace geoformer
