#include "geoformer/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace geoformer {

void No2Series::validate() const {
    if (values.empty()) throw std::invalid_argument("No2Series: empty series");
    if (timestamps.size() != values.size())
        throw std::invalid_argument("No2Series: " + std::to_string(timestamps.size()) +
                                    " timestamps for " + std::to_string(values.size()) +
                                    " values");
    for (double v : values)
        if (!(v >= 0.0))
            throw std::invalid_argument("No2Series: negative concentration " + std::to_string(v));
    for (size_t i = 1; i < timestamps.size(); ++i)
        if (timestamps[i] <= timestamps[i - 1])
            throw std::invalid_argument("No2Series: timestamps not strictly increasing at " +
                                        std::to_string(i));
}

LayerNormParams LayerNormParams::init(size_t d) {
    return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

FeedForwardParams FeedForwardParams::init(size_t d_model, size_t hidden, SplitMix64& rng) {
    FeedForwardParams p;
    const double b1 = std::sqrt(6.0 / static_cast<double>(d_model + hidden));
    p.w1 = Tensor::zeros({d_model, hidden}, true);
    for (size_t i = 0; i < p.w1.numel(); ++i) p.w1[i] = rng.uniform(-b1, b1);
    p.b1 = Tensor::zeros({hidden}, true);
    p.w2 = Tensor::zeros({hidden, d_model}, true);
    for (size_t i = 0; i < p.w2.numel(); ++i) p.w2[i] = rng.uniform(-b1, b1);
    p.b2 = Tensor::zeros({d_model}, true);
    return p;
}

EncoderBlockParams EncoderBlockParams::init(const AttentionConfig& cfg, size_t ff_hidden,
                                            SplitMix64& rng) {
    EncoderBlockParams p;
    p.mhsa = MultiHeadParams::init(cfg, rng);
    p.ff = FeedForwardParams::init(cfg.d_model, ff_hidden, rng);
    p.ln1 = LayerNormParams::init(cfg.d_model);
    p.ln2 = LayerNormParams::init(cfg.d_model);
    return p;
}

Tensor extract_patches(const Tensor& image, size_t patch) {
    if (image.rank() != 3 || image.shape()[2] != 1)
        throw std::invalid_argument("extract_patches: expected [H, W, 1] image, got " +
                                    shape_str(image.shape()));
    const size_t h = image.shape()[0], w = image.shape()[1];
    if (patch == 0 || h % patch != 0 || w % patch != 0)
        throw std::invalid_argument("extract_patches: image " + std::to_string(h) + "x" +
                                    std::to_string(w) + " not divisible by patch size " +
                                    std::to_string(patch));
    const size_t gh = h / patch, gw = w / patch;
    const size_t n = gh * gw, pp = patch * patch;
    Tensor out = make_op_result({n, pp}, "extract_patches", {image});
    for (size_t py = 0; py < gh; ++py)
        for (size_t px = 0; px < gw; ++px) {
            const size_t tok = py * gw + px;
            for (size_t y = 0; y < patch; ++y)
                for (size_t x = 0; x < patch; ++x)
                    out[tok * pp + y * patch + x] = image[(py * patch + y) * w + px * patch + x];
        }
    auto pi = image.node().get();
    auto po = out.node().get();
    if (out.requires_grad())
        out.node()->backward_fn = [pi, po, gh, gw, patch, w, pp] {
            if (!pi->requires_grad) return;
            pi->ensure_grad();
            for (size_t py = 0; py < gh; ++py)
                for (size_t px = 0; px < gw; ++px) {
                    const size_t tok = py * gw + px;
                    for (size_t y = 0; y < patch; ++y)
                        for (size_t x = 0; x < patch; ++x)
                            pi->grad[(py * patch + y) * w + px * patch + x] +=
                                po->grad[tok * pp + y * patch + x];
                }
        };
    return out;
}

Tensor patch_embed(const Tensor& image, size_t patch, const Tensor& w_embed) {
    Tensor tokens = extract_patches(image, patch);
    if (w_embed.rank() != 2 || w_embed.extent(0) != tokens.extent(1))
        throw std::invalid_argument("patch_embed: projection " + shape_str(w_embed.shape()) +
                                    " does not accept patch width " +
                                    std::to_string(tokens.extent(1)));
    return matmul(tokens, w_embed);
}

Tensor sinusoidal_positions(size_t n, size_t d_model) {
    Tensor pe = Tensor::zeros({n, d_model});
    for (size_t p = 0; p < n; ++p)
        for (size_t i = 0; 2 * i < d_model; ++i) {
            const double rate =
                std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_model));
            const double angle = static_cast<double>(p) * rate;
            pe[p * d_model + 2 * i] = std::sin(angle);
            if (2 * i + 1 < d_model) pe[p * d_model + 2 * i + 1] = std::cos(angle);
        }
    return pe;
}

namespace {

Tensor feed_forward(const Tensor& x, const FeedForwardParams& ff) {
    return linear(gelu(linear(x, ff.w1, ff.b1)), ff.w2, ff.b2);
}

Tensor block_core(const Tensor& x, const EncoderBlockParams& p, const ProbSparseConfig* sparse) {
    Tensor normed = layernorm(x, p.ln1.gamma, p.ln1.beta);
    Tensor attended = sparse ? multi_head_probsparse_self_attention(normed, p.mhsa, *sparse)
                             : multi_head_self_attention(normed, p.mhsa);
    Tensor a = add(x, attended);
    Tensor y = add(a, feed_forward(layernorm(a, p.ln2.gamma, p.ln2.beta), p.ff));
    return y;
}

} // namespace

Tensor encoder_block_forward(const Tensor& x, const EncoderBlockParams& params) {
    return block_core(x, params, nullptr);
}

Tensor encoder_block_forward_probsparse(const Tensor& x, const EncoderBlockParams& params,
                                        const ProbSparseConfig& cfg) {
    return block_core(x, params, &cfg);
}

Tensor vit_encode(const Tensor& image, size_t patch, const VitParams& params) {
    Tensor tokens = patch_embed(image, patch, params.w_embed);
    Tensor x = add(tokens, sinusoidal_positions(tokens.extent(0), tokens.extent(1)));
    for (const EncoderBlockParams& block : params.blocks) x = encoder_block_forward(x, block);
    return x;
}

Tensor series_encode(const Tensor& values, const SeriesParams& params) {
    if (values.rank() != 1 || values.numel() == 0)
        throw std::invalid_argument("series_encode: expected non-empty rank-1 values, got " +
                                    shape_str(values.shape()));
    Tensor column = reshape(values, {values.numel(), 1});
    Tensor tokens = matmul(column, params.w_value);
    Tensor x = add(tokens, sinusoidal_positions(tokens.extent(0), tokens.extent(1)));
    for (const EncoderBlockParams& block : params.blocks)
        x = encoder_block_forward_probsparse(x, block, params.probsparse);
    return x;
}

} // namespace geoformer
