#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "geoformer/gradcheck.hpp"
#include "geoformer/tensor_io.hpp"
#include "geoformer/train.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>

using namespace geoformer;
using test_util::random_tensor;

namespace {

ModelConfig micro_model() {
    ModelConfig cfg;
    cfg.image_size = 64;
    cfg.patch = 16;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.spatial_blocks = 1;
    cfg.temporal_blocks = 1;
    cfg.history_len = 12;
    return cfg;
}

// Small shared dataset for the training tests.
struct Fixture {
    test_util::TempDir tmp{"train_fixture"};
    Fixture() { build_dataset(3, 40, 12, 17, tmp.str()); }
    Dataset open() const { return Dataset::open(tmp.str()); }
};

} // namespace

TEST_CASE("mse_loss values and gradient") {
    Tensor same = Tensor::from_data({3}, {1, 2, 3});
    CHECK(mse_loss(same, same).item() == 0.0);

    Tensor pred = Tensor::from_data({2}, {0, 0});
    Tensor target = Tensor::from_data({2}, {1, 3});
    CHECK(mse_loss(pred, target).item() == 5.0);

    // d/dpred mean (pred - t)^2 = 2 (pred - t) / n.
    Tensor p = Tensor::from_data({2}, {0.5, -1.0}, true);
    Tensor loss = mse_loss(p, target);
    loss.backward();
    CHECK(p.grad()[0] == doctest::Approx(2.0 * (0.5 - 1.0) / 2.0).epsilon(1e-12));
    CHECK(p.grad()[1] == doctest::Approx(2.0 * (-1.0 - 3.0) / 2.0).epsilon(1e-12));

    SplitMix64 rng(3);
    const double err = gradcheck_function(
        [](const std::vector<Tensor>& in) { return mse_loss(in[0], in[1]); },
        {random_tensor({5}, rng, -2, 2, true), random_tensor({5}, rng, -2, 2, true)});
    CHECK(err < 1e-6);

    CHECK_THROWS_AS(mse_loss(Tensor::zeros({2}), Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("adam: zero gradient leaves parameters untouched") {
    std::vector<Tensor> params{Tensor::from_data({2}, {1.5, -2.5}, true)};
    params[0].grad_mut(); // allocated, all zero
    AdamState state = AdamState::init(params);
    for (int i = 0; i < 5; ++i) adam_step(params, state, 1e-2);
    CHECK(params[0][0] == 1.5);
    CHECK(params[0][1] == -2.5);
}

TEST_CASE("adam: constant gradient drives steps toward lr * sign(g)") {
    std::vector<Tensor> params{Tensor::from_data({1}, {0.0}, true)};
    AdamState state = AdamState::init(params);
    const double lr = 1e-3, g = 0.5;
    double prev = params[0][0];
    double last_step = 0.0;
    for (int i = 0; i < 500; ++i) {
        params[0].grad_mut()[0] = g;
        adam_step(params, state, lr);
        last_step = prev - params[0][0];
        prev = params[0][0];
    }
    CHECK(last_step == doctest::Approx(lr).epsilon(1e-6));
}

TEST_CASE("compute_metrics: stubs, hand arithmetic, and the two-pass oracle") {
    CHECK(compute_metrics({1, 2, 3}, {1, 2, 3}).mae == 0.0);
    CHECK(compute_metrics({1, 2, 3}, {1, 2, 3}).mse == 0.0);

    const MetricsReport zero_pred = compute_metrics({0, 0}, {1, 3});
    CHECK(zero_pred.mae == 2.0);
    CHECK(zero_pred.mse == 5.0);
    CHECK(zero_pred.n_samples == 2);

    SplitMix64 rng(9);
    std::vector<double> preds, targets;
    for (int i = 0; i < 257; ++i) {
        preds.push_back(rng.uniform(-30, 30));
        targets.push_back(rng.uniform(-30, 30));
    }
    const MetricsReport r = compute_metrics(preds, targets);
    // Two-pass recomputation with the same accumulation order.
    std::vector<double> abs_errs, sq_errs;
    for (size_t i = 0; i < preds.size(); ++i) {
        const double err = preds[i] - targets[i];
        abs_errs.push_back(std::fabs(err));
        sq_errs.push_back(err * err);
    }
    double abs_sum = 0.0, sq_sum = 0.0;
    for (size_t i = 0; i < abs_errs.size(); ++i) {
        abs_sum += abs_errs[i];
        sq_sum += sq_errs[i];
    }
    CHECK(r.mae == abs_sum / 257.0);
    CHECK(r.mse == sq_sum / 257.0);
    CHECK(r.mae <= std::sqrt(r.mse) + 1e-12);
}

TEST_CASE("metrics report serializes in the documented key order") {
    MetricsReport r;
    r.mae = 2.5;
    r.mse = 7.25;
    r.n_samples = 4;
    r.param_count = 10;
    r.size_bytes = 56;
    CHECK(r.to_json_line() ==
          "{\"mae\":2.5,\"mse\":7.25,\"n_samples\":4,\"param_count\":10,\"size_bytes\":56}");
}

TEST_CASE("training is reproducible and thread-count independent") {
    Fixture fx;
    Dataset ds = fx.open();

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 5;

    test_util::TempDir out_a("train_a"), out_b("train_b"), out_c("train_c");
    {
        GeoFormerModel m = GeoFormerModel::init(micro_model(), ds.manifest().stats, 77);
        train(m, ds, cfg, out_a.str());
    }
    {
        GeoFormerModel m = GeoFormerModel::init(micro_model(), ds.manifest().stats, 77);
        train(m, ds, cfg, out_b.str());
    }
    CHECK(test_util::directories_identical(out_a.str(), out_b.str()));

    TrainConfig threaded = cfg;
    threaded.threads = 2;
    {
        GeoFormerModel m = GeoFormerModel::init(micro_model(), ds.manifest().stats, 77);
        train(m, ds, threaded, out_c.str());
    }
    CHECK(test_util::directories_identical(out_a.str(), out_c.str()));
}

TEST_CASE("loss CSV has the documented header and one line per epoch") {
    Fixture fx;
    Dataset ds = fx.open();
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    test_util::TempDir out("train_csv");
    GeoFormerModel m = GeoFormerModel::init(micro_model(), ds.manifest().stats, 7);
    const TrainResult result = train(m, ds, cfg, out.str());
    CHECK(result.epoch_mse.size() == 3);

    const std::string csv = test_util::read_file_bytes(out.str() + "/loss.csv");
    CHECK(csv.rfind("epoch,train_mse\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(std::filesystem::exists(out.path() / "checkpoint" / "manifest.json"));
}

TEST_CASE("a non-finite loss aborts with the offending sample named") {
    Fixture fx;
    Dataset ds = fx.open();
    // Poison one train-split history file with a NaN.
    const SampleEntry& victim = ds.manifest().samples[ds.split_indices("train")[2]];
    Tensor hist = load_gft1(fx.tmp.str() + "/" + victim.history_path);
    hist[0] = std::nan("");
    save_gft1(hist, fx.tmp.str() + "/" + victim.history_path);

    Dataset poisoned = Dataset::open(fx.tmp.str());
    TrainConfig cfg;
    cfg.epochs = 1;
    test_util::TempDir out("train_nan");
    GeoFormerModel m = GeoFormerModel::init(micro_model(), poisoned.manifest().stats, 7);
    CHECK_THROWS_WITH_AS(train(m, poisoned, cfg, out.str()),
                         doctest::Contains(victim.station.c_str()), std::runtime_error);
}

TEST_CASE("evaluate is side-effect free and within-split exact") {
    Fixture fx;
    Dataset ds = fx.open();
    GeoFormerModel m = GeoFormerModel::init(micro_model(), ds.manifest().stats, 3);

    const MetricsReport a = evaluate(m, ds, "test");
    const MetricsReport b = evaluate(m, ds, "test");
    CHECK(a.mae == b.mae);
    CHECK(a.mse == b.mse);
    CHECK(a.n_samples == b.n_samples);
    CHECK(a.mae <= std::sqrt(a.mse) + 1e-12);
    CHECK(a.param_count == param_count(m));
    CHECK(a.size_bytes == serialized_size_bytes(m));

    // Thread-count independence for evaluation.
    const MetricsReport c = evaluate(m, ds, "test", 2);
    CHECK(a.mae == c.mae);
    CHECK(a.mse == c.mse);

    // One pass equals a two-pass recomputation via the public pieces.
    std::vector<double> preds, targets;
    for (size_t i : ds.split_indices("test")) {
        Sample s = ds.load(i);
        preds.push_back(forward(s.image, s.history, m).value);
        targets.push_back(s.target);
    }
    const MetricsReport oracle = compute_metrics(preds, targets);
    CHECK(oracle.mae == a.mae);
    CHECK(oracle.mse == a.mse);

    CHECK_THROWS_AS(evaluate(m, ds, "validation"), std::invalid_argument);
}

TEST_CASE("a constant-zero predictor scores the split's raw moments") {
    Fixture fx;
    Dataset ds = fx.open();
    GeoFormerModel m = GeoFormerModel::init(micro_model(), ds.manifest().stats, 3);
    // Zero head weights, then bias the normalized output to de-normalize to 0.
    auto zero = [](Tensor t) {
        for (size_t i = 0; i < t.numel(); ++i) t[i] = 0.0;
    };
    zero(m.head.w1);
    zero(m.head.b1);
    zero(m.head.w2);
    m.head.b2[0] = -m.stats.conc_mean / m.stats.conc_std;

    const MetricsReport r = evaluate(m, ds, "test");
    double abs_sum = 0.0, sq_sum = 0.0;
    size_t n = 0;
    for (size_t i : ds.split_indices("test")) {
        const double t = ds.manifest().samples[i].target;
        abs_sum += std::fabs(t);
        sq_sum += t * t;
        ++n;
    }
    CHECK(r.mae == doctest::Approx(abs_sum / n).epsilon(1e-9));
    CHECK(r.mse == doctest::Approx(sq_sum / n).epsilon(1e-9));
}

TEST_CASE("autoregressive evaluation stays finite and deterministic") {
    Fixture fx;
    Dataset ds = fx.open();
    GeoFormerModel m = GeoFormerModel::init(micro_model(), ds.manifest().stats, 13);
    const MetricsReport a = evaluate_autoregressive(m, ds, "test");
    const MetricsReport b = evaluate_autoregressive(m, ds, "test");
    CHECK(std::isfinite(a.mae));
    CHECK(a.mae == b.mae);
    CHECK(a.n_samples == ds.split_indices("test").size());
}

TEST_CASE("train config validation and json overlay") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    TrainConfig overlay;
    overlay.merge_json(R"({"epochs": 9, "lr": 0.5, "unknown_key": 1})");
    CHECK(overlay.epochs == 9);
    CHECK(overlay.lr == 0.5);
    CHECK(overlay.batch_size == 16); // untouched default
}
