#pragma once

#include "geoformer/attention.hpp"

#include <string>
#include <vector>

namespace geoformer {

/// Physical NO2 history: concentrations in ug/m3 at strictly increasing day
/// indices. Values are normalized only at the model boundary.
struct No2Series {
    std::vector<double> values;
    std::vector<long> timestamps;

    size_t length() const { return values.size(); }
    /// Enforces L >= 1, non-negative values, strictly increasing timestamps.
    void validate() const;
};

struct LayerNormParams {
    Tensor gamma, beta; // [d_model]
    static LayerNormParams init(size_t d);
};

struct FeedForwardParams {
    Tensor w1, b1; // d_model x hidden, [hidden]
    Tensor w2, b2; // hidden x d_model, [d_model]
    static FeedForwardParams init(size_t d_model, size_t hidden, SplitMix64& rng);
};

/// Pre-layernorm transformer block: x + MHSA(LN(x)), then + FF(LN(.)).
struct EncoderBlockParams {
    MultiHeadParams mhsa;
    FeedForwardParams ff;
    LayerNormParams ln1, ln2;
    static EncoderBlockParams init(const AttentionConfig& cfg, size_t ff_hidden, SplitMix64& rng);
};

struct VitParams {
    Tensor w_embed; // (P*P) x d_model
    std::vector<EncoderBlockParams> blocks;
};

struct SeriesParams {
    Tensor w_value; // 1 x d_model
    std::vector<EncoderBlockParams> blocks;
    ProbSparseConfig probsparse;
};

/// Flattens non-overlapping P x P patches of an [H, W, 1] image, row-major
/// within each patch, patches in raster order. H and W must divide by P.
Tensor extract_patches(const Tensor& image, size_t patch);

/// extract_patches followed by the linear projection into embedding space.
Tensor patch_embed(const Tensor& image, size_t patch, const Tensor& w_embed);

/// pe[p][2i] = sin(p / 10000^{2i/d}), pe[p][2i+1] = cos(same).
Tensor sinusoidal_positions(size_t n, size_t d_model);

Tensor encoder_block_forward(const Tensor& x, const EncoderBlockParams& params);
Tensor encoder_block_forward_probsparse(const Tensor& x, const EncoderBlockParams& params,
                                        const ProbSparseConfig& cfg);

/// Patch embedding + positions, then the block stack. Returns the full token
/// sequence; pooling is the fusion stage's job.
Tensor vit_encode(const Tensor& image, size_t patch, const VitParams& params);

/// Scalar-to-d_model value embedding + positions, then probsparse blocks.
/// `values` are already normalized, shape [L].
Tensor series_encode(const Tensor& values, const SeriesParams& params);

} // namespace geoformer
