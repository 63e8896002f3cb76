#include "geoformer/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace geoformer {

namespace {

void require_attention_shapes(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw std::invalid_argument("attention: Q, K, V must be rank-2");
    if (q.extent(1) != k.extent(1))
        throw std::invalid_argument("attention: query/key width mismatch (" +
                                    shape_str(q.shape()) + " vs " + shape_str(k.shape()) + ")");
    if (k.extent(0) != v.extent(0))
        throw std::invalid_argument("attention: key/value length mismatch (" +
                                    shape_str(k.shape()) + " vs " + shape_str(v.shape()) + ")");
}

} // namespace

AttentionConfig AttentionConfig::make(size_t d_model, size_t n_heads) {
    if (n_heads == 0 || d_model == 0)
        throw std::invalid_argument("attention config: zero d_model or n_heads");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("attention config: d_model " + std::to_string(d_model) +
                                    " not divisible by n_heads " + std::to_string(n_heads));
    return AttentionConfig{d_model, n_heads};
}

MeasurementVariant measurement_variant_from_string(const std::string& name) {
    if (name == "paper-eq3") return MeasurementVariant::PaperEq3;
    if (name == "informer-max-mean") return MeasurementVariant::InformerMaxMean;
    throw std::invalid_argument("unknown measurement variant: " + name);
}

std::string to_string(MeasurementVariant v) {
    return v == MeasurementVariant::PaperEq3 ? "paper-eq3" : "informer-max-mean";
}

MultiHeadParams MultiHeadParams::init(const AttentionConfig& cfg, SplitMix64& rng) {
    MultiHeadParams p;
    const size_t d = cfg.d_model, dk = cfg.d_k();
    const double bound_proj = std::sqrt(6.0 / static_cast<double>(d + dk));
    for (size_t h = 0; h < cfg.n_heads; ++h) {
        for (auto* w : {&p.w_q, &p.w_k, &p.w_v}) {
            Tensor t = Tensor::zeros({d, dk}, true);
            for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound_proj, bound_proj);
            w->push_back(t);
        }
    }
    const double bound_o = std::sqrt(6.0 / static_cast<double>(2 * d));
    p.w_o = Tensor::zeros({d, d}, true);
    for (size_t i = 0; i < p.w_o.numel(); ++i) p.w_o[i] = rng.uniform(-bound_o, bound_o);
    return p;
}

ScoreMatrix scaled_scores(const Tensor& q, const Tensor& k, DotCounter* counter) {
    if (q.rank() != 2 || k.rank() != 2 || q.extent(1) != k.extent(1))
        throw std::invalid_argument("scaled_scores: width mismatch (" + shape_str(q.shape()) +
                                    " vs " + shape_str(k.shape()) + ")");
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.extent(1)));
    Tensor s = scale(matmul(q, transpose(k)), inv_sqrt_dk);
    if (counter)
        counter->count += static_cast<unsigned long long>(q.extent(0)) * k.extent(0);
    return ScoreMatrix{s};
}

Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, DotCounter* counter) {
    require_attention_shapes(q, k, v);
    ScoreMatrix s = scaled_scores(q, k, counter);
    return matmul(softmax_rows(s.values), v);
}

namespace {

Tensor multi_head_core(const Tensor& e, const MultiHeadParams& params,
                       const ProbSparseConfig* sparse) {
    if (e.rank() != 2)
        throw std::invalid_argument("multi_head_self_attention: tokens must be rank-2");
    if (params.w_q.empty() || params.w_q.size() != params.w_k.size() ||
        params.w_q.size() != params.w_v.size())
        throw std::invalid_argument("multi_head_self_attention: inconsistent head parameters");
    std::vector<Tensor> heads;
    heads.reserve(params.n_heads());
    for (size_t h = 0; h < params.n_heads(); ++h) {
        Tensor qh = matmul(e, params.w_q[h]);
        Tensor kh = matmul(e, params.w_k[h]);
        Tensor vh = matmul(e, params.w_v[h]);
        heads.push_back(sparse ? probsparse_attention(qh, kh, vh, *sparse)
                               : dense_attention(qh, kh, vh));
    }
    return matmul(concat_cols(heads), params.w_o);
}

} // namespace

Tensor multi_head_self_attention(const Tensor& e, const MultiHeadParams& params) {
    return multi_head_core(e, params, nullptr);
}

Tensor multi_head_probsparse_self_attention(const Tensor& e, const MultiHeadParams& params,
                                            const ProbSparseConfig& cfg) {
    return multi_head_core(e, params, &cfg);
}

SparsityMeasurement sparsity_measurement(const ScoreMatrix& scores, MeasurementVariant variant) {
    const Tensor& x = scores.values;
    if (x.rank() != 2) throw std::invalid_argument("sparsity_measurement: scores must be rank-2");
    const size_t l_q = x.extent(0), l_k = x.extent(1);
    SparsityMeasurement result;
    result.values = Tensor::zeros({l_q});
    // The measurement only steers the discrete top-u selection, so it is
    // computed outside the autodiff graph.
    for (size_t i = 0; i < l_q; ++i) {
        const double* row = x.data().data() + i * l_k;
        double mx = row[0];
        for (size_t j = 1; j < l_k; ++j) mx = std::max(mx, row[j]);
        if (variant == MeasurementVariant::InformerMaxMean) {
            double mean = 0.0;
            for (size_t j = 0; j < l_k; ++j) mean += row[j];
            mean /= static_cast<double>(l_k);
            result.values[i] = mx - mean;
        } else {
            // Shifted domain: M = s + ln(sum e^{x-s}) - e^s * mean(e^{x-s}).
            double acc = 0.0;
            for (size_t j = 0; j < l_k; ++j) acc += std::exp(row[j] - mx);
            const double log_sum_exp = mx + std::log(acc);
            const double mean_shifted = acc / static_cast<double>(l_k);
            double exp_mean;
            const double max_exp_arg = std::log(std::numeric_limits<double>::max());
            if (mx > max_exp_arg - std::log(std::max(mean_shifted, 1e-300))) {
                exp_mean = std::numeric_limits<double>::max();
                result.saturated = true;
            } else {
                exp_mean = std::exp(mx) * mean_shifted;
                if (!std::isfinite(exp_mean)) {
                    exp_mean = std::numeric_limits<double>::max();
                    result.saturated = true;
                }
            }
            result.values[i] = log_sum_exp - exp_mean;
        }
    }
    return result;
}

size_t top_u_count(size_t l_q, double sampling_factor) {
    if (l_q == 0) throw std::invalid_argument("top_u_count: empty query set");
    if (!(sampling_factor > 0.0))
        throw std::invalid_argument("top_u_count: sampling factor must be positive");
    const double raw = std::ceil(sampling_factor * std::log(static_cast<double>(l_q)));
    const size_t u = raw < 1.0 ? 1 : static_cast<size_t>(raw);
    return std::min(l_q, u);
}

std::vector<size_t> top_u_queries(const Tensor& measurement, double sampling_factor) {
    if (measurement.rank() != 1)
        throw std::invalid_argument("top_u_queries: measurement must be rank-1");
    const size_t l_q = measurement.numel();
    const size_t u = top_u_count(l_q, sampling_factor);
    std::vector<size_t> order(l_q);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return measurement[a] > measurement[b]; });
    order.resize(u);
    std::sort(order.begin(), order.end());
    return order;
}

size_t measurement_key_count(size_t l_q, size_t l_k, const ProbSparseConfig& cfg) {
    if (l_q == 0 || l_k == 0) throw std::invalid_argument("measurement_key_count: empty lengths");
    if (!(cfg.key_sample_factor > 0.0))
        throw std::invalid_argument("measurement_key_count: key_sample_factor must be positive");
    const double raw = std::ceil(cfg.key_sample_factor * std::log(static_cast<double>(l_q)));
    const size_t k = raw < 1.0 ? 1 : static_cast<size_t>(raw);
    return std::min(l_k, k);
}

std::vector<size_t> sample_measurement_keys(size_t l_q, size_t l_k, const ProbSparseConfig& cfg) {
    const size_t k = measurement_key_count(l_q, l_k, cfg);
    SplitMix64 rng(derive_seed(cfg.seed, {0x6b657973ull, l_q, l_k})); // "keys"
    return rng.sample_without_replacement(l_k, k);
}

Tensor probsparse_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const ProbSparseConfig& cfg, DotCounter* counter) {
    require_attention_shapes(q, k, v);
    const size_t l_q = q.extent(0), l_k = k.extent(0), d = q.extent(1);

    // Measurement on a sampled key subset, outside the graph.
    std::vector<size_t> selected;
    {
        NoGradGuard ng;
        const std::vector<size_t> key_subset = sample_measurement_keys(l_q, l_k, cfg);
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        Tensor probe_scores = Tensor::zeros({l_q, key_subset.size()});
        for (size_t i = 0; i < l_q; ++i) {
            const double* qi = q.data().data() + i * d;
            for (size_t s = 0; s < key_subset.size(); ++s) {
                const double* kj = k.data().data() + key_subset[s] * d;
                double dot = 0.0;
                for (size_t c = 0; c < d; ++c) dot += qi[c] * kj[c];
                probe_scores[i * key_subset.size() + s] = dot * inv_sqrt_d;
            }
        }
        if (counter)
            counter->count += static_cast<unsigned long long>(l_q) * key_subset.size();
        SparsityMeasurement m = sparsity_measurement(ScoreMatrix{probe_scores},
                                                     cfg.measurement_variant);
        selected = top_u_queries(m.values, cfg.sampling_factor);
    }

    if (selected.size() == l_q) return dense_attention(q, k, v, counter);

    Tensor q_active = take_rows(q, selected);
    Tensor active_out = dense_attention(q_active, k, v, counter);
    Tensor lazy_fill = mean_over_rows(v);
    return scatter_rows_with_fill(active_out, selected, lazy_fill, l_q);
}

unsigned long long dense_dot_count(size_t l_q, size_t l_k) {
    return static_cast<unsigned long long>(l_q) * l_k;
}

unsigned long long probsparse_dot_count(size_t l_q, size_t l_k, const ProbSparseConfig& cfg) {
    const unsigned long long u = top_u_count(l_q, cfg.sampling_factor);
    const unsigned long long probes = measurement_key_count(l_q, l_k, cfg);
    return u * l_k + static_cast<unsigned long long>(l_q) * probes;
}

} // namespace geoformer
