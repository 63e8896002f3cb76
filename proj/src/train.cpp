#include "geoformer/train.hpp"

#include "geoformer/tensor_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace geoformer {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("train config: batch size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: learning rate must be positive");
    if (threads == 0) throw std::invalid_argument("train config: threads must be >= 1");
}

std::string TrainConfig::to_json() const {
    // threads is a speed knob with no effect on outputs, so it stays out of
    // the recorded config.
    json j{{"epochs", epochs},
           {"batch_size", batch_size},
           {"lr", lr},
           {"beta1", beta1},
           {"beta2", beta2},
           {"adam_eps", adam_eps},
           {"clip_norm", clip_norm},
           {"seed", seed},
           {"checkpoint_interval", checkpoint_interval},
           {"loss", "mse-normalized"}};
    return j.dump();
}

void TrainConfig::merge_json(const std::string& text) {
    const json j = json::parse(text);
    if (j.contains("epochs")) epochs = j["epochs"].get<size_t>();
    if (j.contains("batch_size")) batch_size = j["batch_size"].get<size_t>();
    if (j.contains("lr")) lr = j["lr"].get<double>();
    if (j.contains("beta1")) beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) beta2 = j["beta2"].get<double>();
    if (j.contains("adam_eps")) adam_eps = j["adam_eps"].get<double>();
    if (j.contains("clip_norm")) clip_norm = j["clip_norm"].get<double>();
    if (j.contains("seed")) seed = j["seed"].get<uint64_t>();
    if (j.contains("checkpoint_interval"))
        checkpoint_interval = j["checkpoint_interval"].get<size_t>();
    if (j.contains("threads")) threads = j["threads"].get<size_t>();
}

std::string MetricsReport::to_json_line() const {
    json j{{"mae", mae},
           {"mse", mse},
           {"n_samples", n_samples},
           {"param_count", param_count},
           {"size_bytes", size_bytes}};
    return j.dump();
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("mse_loss: shape mismatch (" + shape_str(pred.shape()) +
                                    " vs " + shape_str(target.shape()) + ")");
    Tensor diff = sub(pred, target);
    return mean_all(mul(diff, diff));
}

AdamState AdamState::init(const std::vector<Tensor>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor& p : params) {
        s.m.emplace_back(p.numel(), 0.0);
        s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match parameter list");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p];
        const bool has = t.has_grad();
        std::vector<double>& m = state.m[p];
        std::vector<double>& v = state.v[p];
        for (size_t i = 0; i < t.numel(); ++i) {
            const double g = has ? t.grad()[i] : 0.0;
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            t[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

namespace {

struct CachedSample {
    std::string station;
    size_t day = 0;
    std::vector<double> image;   // normalized pixels
    std::vector<double> history; // physical ug/m3
    double target = 0.0;         // physical ug/m3
};

std::vector<CachedSample> cache_split(const Dataset& ds, const std::vector<size_t>& indices) {
    std::vector<CachedSample> out;
    out.reserve(indices.size());
    for (size_t idx : indices) {
        Sample s = ds.load(idx);
        CachedSample c;
        c.station = s.station;
        c.day = s.day;
        c.image = s.image.data();
        c.history = s.history.values;
        c.target = s.target;
        out.push_back(std::move(c));
    }
    return out;
}

Tensor image_tensor(const CachedSample& s) {
    return Tensor::from_data({kImageSize, kImageSize, 1}, s.image);
}

Tensor history_tensor_normalized(const CachedSample& s, const NormStats& stats) {
    const size_t len = s.history.size();
    std::vector<double> h(len);
    for (size_t i = 0; i < len; ++i) h[i] = (s.history[i] - stats.conc_mean) / stats.conc_std;
    return Tensor::from_data({len}, std::move(h));
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// One training sample: isolated gradient into its slot plus the squared
// error, so reductions stay in sample order regardless of threading.
void run_sample(const GeoFormerModel& worker_model, std::vector<Tensor>& worker_params,
                const CachedSample& s, const NormStats& stats, double* slot, double& sq_err) {
    for (Tensor& p : worker_params) p.zero_grad();
    Tensor pred = forward_normalized(image_tensor(s), history_tensor_normalized(s, stats),
                                     worker_model);
    const double target_norm = (s.target - stats.conc_mean) / stats.conc_std;
    const double err = pred.item() - target_norm;
    sq_err = err * err;
    Tensor diff = add_scalar(pred, -target_norm);
    Tensor loss = mul(diff, diff);
    loss.backward();
    size_t off = 0;
    for (const Tensor& p : worker_params) {
        const std::vector<double>& g = p.grad();
        std::copy(g.begin(), g.end(), slot + off);
        off += p.numel();
    }
}

} // namespace

TrainResult train(GeoFormerModel& model, const Dataset& dataset, const TrainConfig& cfg,
                  const std::string& out_dir) {
    cfg.validate();
    // Training binds the model to this dataset's normalization.
    model.stats = dataset.manifest().stats;

    const std::vector<size_t> train_idx = dataset.split_indices("train");
    if (train_idx.empty()) throw std::invalid_argument("train: dataset has no train samples");
    const std::vector<CachedSample> samples = cache_split(dataset, train_idx);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("train: cannot create " + out_dir + ": " + ec.message());
    std::ofstream csv(fs::path(out_dir) / "loss.csv", std::ios::trunc);
    if (!csv) throw IoError("train: cannot write loss.csv in " + out_dir);
    csv << "epoch,train_mse\n";

    std::vector<Tensor> params = model.parameters();
    AdamState adam = AdamState::init(params);
    size_t total_params = 0;
    for (const Tensor& p : params) total_params += p.numel();

    const size_t n = samples.size();
    const size_t threads = std::min<size_t>(cfg.threads, std::max<size_t>(1, n));
    std::vector<double> slots(cfg.batch_size * total_params);
    std::vector<double> sq_errs(cfg.batch_size);

    TrainResult result;
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        SplitMix64 shuffle_rng(derive_seed(cfg.seed, {0x65706f63ull, epoch})); // "epoc"
        shuffle_rng.shuffle(order);

        double epoch_sq_sum = 0.0;
        for (size_t start = 0; start < n; start += cfg.batch_size) {
            const size_t b = std::min(cfg.batch_size, n - start);

            auto worker = [&](size_t first, size_t count) {
                // Each worker computes on its own parameter copy so graphs
                // never share gradient buffers across threads.
                GeoFormerModel local = model.clone();
                std::vector<Tensor> local_params = local.parameters();
                for (size_t j = first; j < first + count; ++j) {
                    run_sample(local, local_params, samples[order[start + j]], model.stats,
                               slots.data() + j * total_params, sq_errs[j]);
                }
            };
            if (threads == 1 || b == 1) {
                worker(0, b);
            } else {
                const size_t t_use = std::min(threads, b);
                std::vector<std::thread> pool;
                const size_t chunk = (b + t_use - 1) / t_use;
                for (size_t t = 1; t < t_use; ++t) {
                    const size_t first = t * chunk;
                    if (first >= b) break;
                    pool.emplace_back(worker, first, std::min(chunk, b - first));
                }
                worker(0, std::min(chunk, b));
                for (std::thread& th : pool) th.join();
            }

            // Reductions in sample order: batch loss, then gradients.
            for (size_t j = 0; j < b; ++j) {
                if (!std::isfinite(sq_errs[j])) {
                    const CachedSample& s = samples[order[start + j]];
                    throw std::runtime_error("train: non-finite loss at epoch " +
                                             std::to_string(epoch) + ", sample " + s.station +
                                             " day " + std::to_string(s.day));
                }
                epoch_sq_sum += sq_errs[j];
            }
            const double inv_b = 1.0 / static_cast<double>(b);
            size_t off = 0;
            for (Tensor& p : params) {
                std::vector<double>& g = p.grad_mut();
                std::fill(g.begin(), g.end(), 0.0);
                for (size_t j = 0; j < b; ++j) {
                    const double* slot = slots.data() + j * total_params + off;
                    for (size_t i = 0; i < g.size(); ++i) g[i] += slot[i];
                }
                for (double& v : g) v *= inv_b;
                off += p.numel();
            }

            if (cfg.clip_norm > 0.0) {
                double sq = 0.0;
                for (const Tensor& p : params)
                    for (double v : p.grad()) sq += v * v;
                const double norm = std::sqrt(sq);
                if (norm > cfg.clip_norm) {
                    const double scalef = cfg.clip_norm / norm;
                    for (Tensor& p : params)
                        for (double& v : p.grad_mut()) v *= scalef;
                }
            }
            adam_step(params, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
        }

        const double epoch_mse = epoch_sq_sum / static_cast<double>(n);
        result.epoch_mse.push_back(epoch_mse);
        csv << epoch << "," << format_double(epoch_mse) << "\n";
        csv.flush();

        if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0 &&
            epoch != cfg.epochs) {
            std::ostringstream tag;
            tag << "epoch_" << std::setw(4) << std::setfill('0') << epoch;
            save_checkpoint(model, (fs::path(out_dir) / tag.str()).string(),
                            "{\"train_config\": " + cfg.to_json() + "}");
        }
    }

    result.checkpoint_dir = (fs::path(out_dir) / "checkpoint").string();
    save_checkpoint(model, result.checkpoint_dir, "{\"train_config\": " + cfg.to_json() + "}");
    return result;
}

namespace {

MetricsReport metrics_from_errors(const std::vector<double>& abs_errs,
                                  const std::vector<double>& sq_errs) {
    MetricsReport r;
    r.n_samples = abs_errs.size();
    double abs_sum = 0.0, sq_sum = 0.0;
    for (size_t i = 0; i < abs_errs.size(); ++i) {
        abs_sum += abs_errs[i];
        sq_sum += sq_errs[i];
    }
    r.mae = abs_sum / static_cast<double>(abs_errs.size());
    r.mse = sq_sum / static_cast<double>(sq_errs.size());
    // Jensen: MAE can never exceed sqrt(MSE).
    if (r.mae > std::sqrt(r.mse) + 1e-9 * (1.0 + r.mae))
        throw std::logic_error("metrics: MAE " + std::to_string(r.mae) + " exceeds sqrt(MSE) " +
                               std::to_string(std::sqrt(r.mse)));
    return r;
}

MetricsReport finish_report(const GeoFormerModel& model, const std::vector<double>& abs_errs,
                            const std::vector<double>& sq_errs) {
    MetricsReport r = metrics_from_errors(abs_errs, sq_errs);
    r.param_count = param_count(model);
    r.size_bytes = serialized_size_bytes(model);
    return r;
}

} // namespace

MetricsReport compute_metrics(const std::vector<double>& predictions,
                              const std::vector<double>& targets) {
    if (predictions.size() != targets.size())
        throw std::invalid_argument("compute_metrics: " + std::to_string(predictions.size()) +
                                    " predictions for " + std::to_string(targets.size()) +
                                    " targets");
    if (predictions.empty()) throw std::invalid_argument("compute_metrics: empty input");
    std::vector<double> abs_errs(predictions.size()), sq_errs(predictions.size());
    for (size_t i = 0; i < predictions.size(); ++i) {
        const double err = predictions[i] - targets[i];
        abs_errs[i] = std::fabs(err);
        sq_errs[i] = err * err;
    }
    return metrics_from_errors(abs_errs, sq_errs);
}

MetricsReport evaluate(const GeoFormerModel& model, const Dataset& dataset,
                       const std::string& split, size_t threads) {
    const std::vector<size_t> idx = dataset.split_indices(split);
    if (idx.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
    if (threads == 0) throw std::invalid_argument("evaluate: threads must be >= 1");

    std::vector<double> abs_errs(idx.size()), sq_errs(idx.size());
    auto worker = [&](size_t first, size_t count) {
        NoGradGuard ng;
        for (size_t j = first; j < first + count; ++j) {
            Sample s = dataset.load(idx[j]);
            const Prediction p = forward(s.image, s.history, model);
            if (!std::isfinite(p.value))
                throw std::runtime_error("evaluate: non-finite prediction for " + s.station +
                                         " day " + std::to_string(s.day));
            const double err = p.value - s.target;
            abs_errs[j] = std::fabs(err);
            sq_errs[j] = err * err;
        }
    };
    const size_t t_use = std::min(threads, idx.size());
    if (t_use <= 1) {
        worker(0, idx.size());
    } else {
        std::vector<std::thread> pool;
        const size_t chunk = (idx.size() + t_use - 1) / t_use;
        for (size_t t = 1; t < t_use; ++t) {
            const size_t first = t * chunk;
            if (first >= idx.size()) break;
            pool.emplace_back(worker, first, std::min(chunk, idx.size() - first));
        }
        worker(0, std::min(chunk, idx.size()));
        for (std::thread& th : pool) th.join();
    }
    return finish_report(model, abs_errs, sq_errs);
}

MetricsReport evaluate_autoregressive(const GeoFormerModel& model, const Dataset& dataset,
                                      const std::string& split) {
    const std::vector<size_t> idx = dataset.split_indices(split);
    if (idx.empty())
        throw std::invalid_argument("evaluate_autoregressive: split '" + split + "' is empty");

    // Samples are ordered (station, day) in the manifest; rollouts consume
    // them per station, feeding predictions back as history.
    std::vector<double> abs_errs, sq_errs;
    abs_errs.reserve(idx.size());
    sq_errs.reserve(idx.size());
    NoGradGuard ng;
    std::string current;
    No2Series hist;
    for (size_t j : idx) {
        Sample s = dataset.load(j);
        if (s.station != current) {
            current = s.station;
            hist = s.history; // ground-truth seed window for this station
        }
        const Prediction p = forward(s.image, hist, model);
        if (!std::isfinite(p.value))
            throw std::runtime_error("evaluate_autoregressive: non-finite prediction for " +
                                     s.station + " day " + std::to_string(s.day));
        const double err = p.value - s.target;
        abs_errs.push_back(std::fabs(err));
        sq_errs.push_back(err * err);
        // Slide the window; concentrations stay physical, so clip at zero.
        hist.values.erase(hist.values.begin());
        hist.values.push_back(std::max(0.0, p.value));
        hist.timestamps.erase(hist.timestamps.begin());
        hist.timestamps.push_back(p.timestamp);
    }
    return finish_report(model, abs_errs, sq_errs);
}

} // namespace geoformer
