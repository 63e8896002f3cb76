#pragma once

#include "geoformer/rng.hpp"
#include "geoformer/tensor.hpp"

#include <cstdint>
#include <vector>

namespace geoformer {

struct AttentionConfig {
    size_t d_model = 64;
    size_t n_heads = 4;

    size_t d_k() const { return d_model / n_heads; }
    /// Throws if d_model is not divisible by n_heads or d_k would be 0.
    static AttentionConfig make(size_t d_model, size_t n_heads);
};

enum class MeasurementVariant {
    PaperEq3,        // ln sum exp(x) - mean exp(x), the formula as printed
    InformerMaxMean, // max(x) - mean(x), the cited source's approximation
};

MeasurementVariant measurement_variant_from_string(const std::string& name);
std::string to_string(MeasurementVariant v);

struct ProbSparseConfig {
    double sampling_factor = 5.0;  // c in u = ceil(c * ln L_Q)
    MeasurementVariant measurement_variant = MeasurementVariant::PaperEq3;
    double key_sample_factor = 1.0; // keys probed per query: ceil(factor * ln L_Q), capped at L_K
    uint64_t seed = 42;             // key-subset sampling stream
};

/// Scaled dot products q_i . k_j / sqrt(d_k), one row per query.
struct ScoreMatrix {
    Tensor values; // L_Q x L_K
};

/// Per-query sparsity scores. `saturated` flags rows where the exp-mean term
/// of the PaperEq3 variant overflowed and was clamped to DBL_MAX.
struct SparsityMeasurement {
    Tensor values; // [L_Q]
    bool saturated = false;
};

/// Counts query-key dot products actually executed; pass to the attention
/// entry points to verify the analytic count formulas.
struct DotCounter {
    unsigned long long count = 0;
};

/// Per-head projection weights plus the output projection.
struct MultiHeadParams {
    std::vector<Tensor> w_q, w_k, w_v; // n_heads tensors, d_model x d_k
    Tensor w_o;                        // d_model x d_model

    static MultiHeadParams init(const AttentionConfig& cfg, SplitMix64& rng);
    size_t n_heads() const { return w_q.size(); }
};

ScoreMatrix scaled_scores(const Tensor& q, const Tensor& k, DotCounter* counter = nullptr);

/// softmax(Q K^T / sqrt(d_k)) V.
Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       DotCounter* counter = nullptr);

/// Split-project per head, dense attention per head, concatenate, project.
Tensor multi_head_self_attention(const Tensor& e, const MultiHeadParams& params);

/// Same head plumbing with probsparse attention inside each head.
Tensor multi_head_probsparse_self_attention(const Tensor& e, const MultiHeadParams& params,
                                            const ProbSparseConfig& cfg);

SparsityMeasurement sparsity_measurement(const ScoreMatrix& scores, MeasurementVariant variant);

/// u = min(L_Q, ceil(c * ln L_Q)), at least 1.
size_t top_u_count(size_t l_q, double sampling_factor);

/// Indices of the u largest measurements, ties broken by ascending index;
/// returned ascending.
std::vector<size_t> top_u_queries(const Tensor& measurement, double sampling_factor);

/// Keys probed per query for the measurement: min(L_K, ceil(factor * ln L_Q)),
/// at least 1.
size_t measurement_key_count(size_t l_q, size_t l_k, const ProbSparseConfig& cfg);

/// The seeded key subset used for the measurement (ascending).
std::vector<size_t> sample_measurement_keys(size_t l_q, size_t l_k, const ProbSparseConfig& cfg);

/// Top-u queries get exact dense attention over all keys; the rest fall back
/// to the column mean of V. The top-u selection itself is treated as a
/// constant for gradients.
Tensor probsparse_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const ProbSparseConfig& cfg, DotCounter* counter = nullptr);

unsigned long long dense_dot_count(size_t l_q, size_t l_k);
unsigned long long probsparse_dot_count(size_t l_q, size_t l_k, const ProbSparseConfig& cfg);

} // namespace geoformer
