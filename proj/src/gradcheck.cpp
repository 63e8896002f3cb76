#include "geoformer/gradcheck.hpp"

#include "geoformer/train.hpp"

#include <algorithm>
#include <cmath>

namespace geoformer {

namespace {

double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

Tensor random_tensor(std::vector<size_t> shape, SplitMix64& rng, double lo = -2.0,
                     double hi = 2.0) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

} // namespace

double gradcheck_function(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> inputs) {
    Tensor y = f(inputs);
    if (y.numel() != 1) throw std::invalid_argument("gradcheck: function must return a scalar");
    y.backward();

    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor fd = finite_diff_grad(
            [&](const Tensor& probe) {
                std::vector<Tensor> alt = inputs;
                alt[i] = probe;
                return f(alt).item();
            },
            inputs[i]);
        const std::vector<double>& ad = inputs[i].grad();
        for (size_t c = 0; c < fd.numel(); ++c) worst = std::max(worst, rel_err(ad[c], fd[c]));
    }
    return worst;
}

namespace {

GradCheckResult check(const std::string& name,
                      const std::function<Tensor(const std::vector<Tensor>&)>& f,
                      std::vector<Tensor> inputs) {
    return {name, gradcheck_function(f, std::move(inputs))};
}

// Fixed random weights make the reduction scalar sensitive to every output
// coordinate, not just their sum.
Tensor weighted_sum(const Tensor& t, uint64_t seed) {
    SplitMix64 rng(seed);
    Tensor w = Tensor::zeros(t.shape());
    for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(0.25, 1.75);
    return sum(mul(t, w));
}

GradCheckResult check_tiny_model(uint64_t seed) {
    ModelConfig cfg;
    cfg.image_size = 16;
    cfg.patch = 8;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.spatial_blocks = 1;
    cfg.temporal_blocks = 1;
    cfg.history_len = 4;
    cfg.probsparse.seed = seed;
    GeoFormerModel model = GeoFormerModel::init(cfg, NormStats{}, derive_seed(seed, {21}));

    SplitMix64 rng(derive_seed(seed, {22}));
    Tensor image = random_tensor({16, 16, 1}, rng);
    Tensor hist = random_tensor({4}, rng);

    Tensor out = forward_normalized(image, hist, model);
    out.backward();

    auto run = [&] {
        NoGradGuard ng;
        return forward_normalized(image, hist, model).item();
    };
    double worst = 0.0;
    auto check_param = [&](Tensor& p) {
        Tensor fd = finite_diff_grad(
            [&](const Tensor& probe) {
                std::vector<double> saved = p.data();
                p.data() = probe.data();
                const double v = run();
                p.data() = saved;
                return v;
            },
            p);
        const std::vector<double>& ad = p.grad();
        for (size_t c = 0; c < fd.numel(); ++c) worst = std::max(worst, rel_err(ad[c], fd[c]));
    };
    for (Tensor& p : model.parameters()) check_param(p);
    check_param(image);
    check_param(hist);
    return {"tiny_end_to_end_model", worst};
}

} // namespace

std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed) {
    std::vector<GradCheckResult> results;
    SplitMix64 rng(derive_seed(seed, {20}));

    auto r34 = [&] { return random_tensor({3, 4}, rng); };

    results.push_back(check("add", [](const std::vector<Tensor>& in) {
        return sum(add(in[0], in[1]));
    }, {r34(), r34()}));
    results.push_back(check("sub", [&](const std::vector<Tensor>& in) {
        return weighted_sum(sub(in[0], in[1]), seed + 1);
    }, {r34(), r34()}));
    results.push_back(check("mul", [&](const std::vector<Tensor>& in) {
        return weighted_sum(mul(in[0], in[1]), seed + 2);
    }, {r34(), r34()}));
    results.push_back(check("scale", [](const std::vector<Tensor>& in) {
        return sum(scale(in[0], -1.7));
    }, {r34()}));
    results.push_back(check("add_scalar", [](const std::vector<Tensor>& in) {
        return sum(add_scalar(in[0], 0.4));
    }, {r34()}));
    results.push_back(check("exp", [&](const std::vector<Tensor>& in) {
        return weighted_sum(exp(in[0]), seed + 3);
    }, {r34()}));
    results.push_back(check("ln", [&](const std::vector<Tensor>& in) {
        return weighted_sum(ln(in[0]), seed + 4);
    }, {random_tensor({3, 4}, rng, 0.2, 3.0)}));
    results.push_back(check("gelu", [&](const std::vector<Tensor>& in) {
        return weighted_sum(gelu(in[0]), seed + 5);
    }, {r34()}));
    results.push_back(check("layernorm", [&](const std::vector<Tensor>& in) {
        return weighted_sum(layernorm(in[0], in[1], in[2]), seed + 6);
    }, {r34(), random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)}));
    results.push_back(check("matmul", [&](const std::vector<Tensor>& in) {
        return weighted_sum(matmul(in[0], in[1]), seed + 7);
    }, {r34(), random_tensor({4, 5}, rng)}));
    results.push_back(check("transpose", [&](const std::vector<Tensor>& in) {
        return weighted_sum(transpose(in[0]), seed + 8);
    }, {r34()}));
    results.push_back(check("softmax_rows", [&](const std::vector<Tensor>& in) {
        return weighted_sum(softmax_rows(in[0]), seed + 9);
    }, {r34()}));
    results.push_back(check("sum", [](const std::vector<Tensor>& in) {
        return sum(in[0]);
    }, {r34()}));
    results.push_back(check("mean_all", [](const std::vector<Tensor>& in) {
        return mean_all(in[0]);
    }, {r34()}));
    results.push_back(check("reshape", [&](const std::vector<Tensor>& in) {
        return weighted_sum(reshape(in[0], {4, 3}), seed + 10);
    }, {r34()}));
    results.push_back(check("concat_cols", [&](const std::vector<Tensor>& in) {
        return weighted_sum(concat_cols({in[0], in[1]}), seed + 11);
    }, {r34(), random_tensor({3, 2}, rng)}));
    results.push_back(check("slice_cols", [&](const std::vector<Tensor>& in) {
        return weighted_sum(slice_cols(in[0], 1, 2), seed + 12);
    }, {r34()}));
    results.push_back(check("expand_rows", [&](const std::vector<Tensor>& in) {
        return weighted_sum(expand_rows(in[0], 5), seed + 13);
    }, {random_tensor({4}, rng)}));
    results.push_back(check("take_rows", [&](const std::vector<Tensor>& in) {
        return weighted_sum(take_rows(in[0], {2, 0}), seed + 14);
    }, {r34()}));
    results.push_back(check("scatter_rows_with_fill", [&](const std::vector<Tensor>& in) {
        return weighted_sum(scatter_rows_with_fill(in[0], {3, 1}, in[1], 5), seed + 15);
    }, {random_tensor({2, 4}, rng), random_tensor({4}, rng)}));
    results.push_back(check("mean_over_rows", [&](const std::vector<Tensor>& in) {
        return weighted_sum(mean_over_rows(in[0]), seed + 16);
    }, {r34()}));
    results.push_back(check("linear_bias", [&](const std::vector<Tensor>& in) {
        return weighted_sum(linear(in[0], in[1], in[2]), seed + 17);
    }, {r34(), random_tensor({4, 5}, rng), random_tensor({5}, rng)}));

    results.push_back(check("dense_attention", [&](const std::vector<Tensor>& in) {
        return weighted_sum(dense_attention(in[0], in[1], in[2]), seed + 18);
    }, {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5, 2}, rng)}));

    {
        const AttentionConfig att = AttentionConfig::make(4, 2);
        SplitMix64 prng(derive_seed(seed, {23}));
        MultiHeadParams mhsa = MultiHeadParams::init(att, prng);
        std::vector<Tensor> inputs{random_tensor({3, 4}, rng)};
        for (size_t h = 0; h < 2; ++h) {
            inputs.push_back(mhsa.w_q[h]);
            inputs.push_back(mhsa.w_k[h]);
            inputs.push_back(mhsa.w_v[h]);
        }
        inputs.push_back(mhsa.w_o);
        results.push_back(check("multi_head_self_attention",
                                [&, att](const std::vector<Tensor>& in) {
                                    MultiHeadParams p;
                                    for (size_t h = 0; h < 2; ++h) {
                                        p.w_q.push_back(in[1 + 3 * h]);
                                        p.w_k.push_back(in[2 + 3 * h]);
                                        p.w_v.push_back(in[3 + 3 * h]);
                                    }
                                    p.w_o = in[7];
                                    return weighted_sum(multi_head_self_attention(in[0], p),
                                                        seed + 19);
                                },
                                inputs));
    }

    {
        ProbSparseConfig ps;
        ps.sampling_factor = 0.7; // u < L_Q so the lazy fallback path is exercised
        ps.seed = seed;
        results.push_back(check("probsparse_attention",
                                [&, ps](const std::vector<Tensor>& in) {
                                    return weighted_sum(probsparse_attention(in[0], in[1], in[2], ps),
                                                        seed + 24);
                                },
                                {random_tensor({8, 4}, rng), random_tensor({8, 4}, rng),
                                 random_tensor({8, 3}, rng)}));
    }

    results.push_back(check("cross_attend", [&](const std::vector<Tensor>& in) {
        CamParams cam{in[2], in[3], in[4], in[5]};
        return weighted_sum(cross_attend(in[0], in[1], cam), seed + 25);
    }, {random_tensor({3, 8}, rng), random_tensor({4, 8}, rng), random_tensor({8, 8}, rng),
        random_tensor({8, 8}, rng), random_tensor({8, 8}, rng), random_tensor({8, 8}, rng)}));

    results.push_back(check("regress_head", [](const std::vector<Tensor>& in) {
        HeadParams head{in[1], in[2], in[3], in[4]};
        return regress_head(in[0], head);
    }, {random_tensor({6}, rng), random_tensor({6, 6}, rng), random_tensor({6}, rng),
        random_tensor({6, 1}, rng), random_tensor({1}, rng)}));

    results.push_back(check("mse_loss", [](const std::vector<Tensor>& in) {
        return mse_loss(in[0], in[1]);
    }, {random_tensor({6}, rng), random_tensor({6}, rng)}));

    {
        const AttentionConfig att = AttentionConfig::make(4, 2);
        SplitMix64 prng(derive_seed(seed, {26}));
        EncoderBlockParams block = EncoderBlockParams::init(att, 8, prng);
        results.push_back(check("encoder_block", [&, block](const std::vector<Tensor>& in) {
            return weighted_sum(encoder_block_forward(in[0], block), seed + 27);
        }, {random_tensor({4, 4}, rng)}));
    }

    results.push_back(check_tiny_model(seed));
    return results;
}

bool gradcheck_all_passed(const std::vector<GradCheckResult>& results, double tol) {
    for (const GradCheckResult& r : results)
        if (!(r.max_rel_err < tol)) return false;
    return !results.empty();
}

} // namespace geoformer
