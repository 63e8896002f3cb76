// Acceptance suite: runs every acceptance criterion end to end and prints
// one PASS/FAIL line per criterion. Exits non-zero if any criterion fails.

#include "geoformer/data_synth.hpp"
#include "geoformer/gradcheck.hpp"
#include "geoformer/model.hpp"
#include "geoformer/tensor_io.hpp"
#include "geoformer/train.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

using namespace geoformer;
namespace fs = std::filesystem;

namespace {

struct CriterionResult {
    int id;
    std::string summary;
    bool pass = false;
    std::string detail;
};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

size_t worker_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : std::min<unsigned>(hw, 8);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// ---- criterion 1: size machinery (Table 1 itself is not reproducible) ----
CriterionResult criterion_size(const std::string& tmp) {
    CriterionResult r{1, "size machinery: size_bytes equals on-disk checkpoint tensor bytes"};
    GeoFormerModel model = GeoFormerModel::init(ModelConfig{}, NormStats{}, 42);
    const std::string dir = tmp + "/c1_ckpt";
    save_checkpoint(model, dir);
    size_t on_disk = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".gft1") on_disk += fs::file_size(e.path());
    const size_t reported = serialized_size_bytes(model);
    r.pass = reported == on_disk;
    r.detail = "reported " + std::to_string(reported) + " bytes vs " + std::to_string(on_disk) +
               " on disk; published reference accuracy figures are not reproducible (their"
               " source dataset is private), so the size accounting is what is validated";
    return r;
}

// ---- criterion 2: gradient suite ----
CriterionResult criterion_gradients() {
    CriterionResult r{2, "gradient suite: every op + tiny end-to-end model under 1e-4"};
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_gradcheck_suite(42);
    const double wall = seconds_since(t0);
    double worst = 0.0;
    std::string worst_name;
    for (const auto& g : results)
        if (g.max_rel_err > worst) {
            worst = g.max_rel_err;
            worst_name = g.name;
        }
    r.pass = gradcheck_all_passed(results, 1e-4) && wall < 60.0;
    r.detail = std::to_string(results.size()) + " checks, worst " + worst_name + " at " +
               fmt(worst) + ", " + fmt(wall) + " s";
    return r;
}

// ---- criterion 3: attention oracle equivalence ----
CriterionResult criterion_attention_oracle() {
    CriterionResult r{3, "dense attention vs brute-force oracle; probsparse(u=L_Q) vs dense"};
    SplitMix64 rng(2024);
    ProbSparseConfig full;
    full.sampling_factor = 1000.0; // u = L_Q on every instance
    double worst_oracle = 0.0, worst_sparse = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const size_t lq = 1 + rng.below(8), lk = 1 + rng.below(8);
        const size_t d = 1 + rng.below(6), dv = 1 + rng.below(6);
        Tensor q = test_util::random_tensor({lq, d}, rng);
        Tensor k = test_util::random_tensor({lk, d}, rng);
        Tensor v = test_util::random_tensor({lk, dv}, rng);
        Tensor dense = dense_attention(q, k, v);
        worst_oracle = std::max(
            worst_oracle, test_util::max_abs_diff(dense, test_util::naive_dense_attention(q, k, v)));
        worst_sparse =
            std::max(worst_sparse, test_util::max_abs_diff(dense, probsparse_attention(q, k, v, full)));
    }
    r.pass = worst_oracle < 1e-9 && worst_sparse < 1e-9;
    r.detail = "20 instances; max |dense - oracle| = " + fmt(worst_oracle) +
               ", max |probsparse - dense| = " + fmt(worst_sparse);
    return r;
}

// ---- criterion 4: complexity counts via the CLI bench ----
CriterionResult criterion_complexity(const std::string& cli) {
    CriterionResult r{4, "complexity: dense dots exactly L^2, probsparse doubling ratio <= 2.6"};
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = test_util::run_command("'" + cli + "' bench 2>/dev/null");
    const double wall = seconds_since(t0);
    if (run.exit_code != 0) {
        r.detail = "bench exited with " + std::to_string(run.exit_code);
        return r;
    }
    std::istringstream lines(run.output);
    std::string line;
    std::getline(lines, line); // header
    std::vector<unsigned long long> ls, dense, sparse;
    double dense_slope = 0.0;
    bool parsed_slope = false;
    while (std::getline(lines, line)) {
        if (line.rfind("fit,dense_dots_slope,", 0) == 0) {
            dense_slope = std::stod(line.substr(21));
            parsed_slope = true;
            continue;
        }
        if (line.rfind("fit,", 0) == 0) continue;
        unsigned long long l, d, s;
        if (std::sscanf(line.c_str(), "%llu,%llu,%llu", &l, &d, &s) == 3) {
            ls.push_back(l);
            dense.push_back(d);
            sparse.push_back(s);
        }
    }
    bool ok = parsed_slope && ls.size() == 5 && wall < 120.0;
    double worst_ratio = 0.0;
    for (size_t i = 0; i < ls.size(); ++i) {
        ok = ok && dense[i] == ls[i] * ls[i];
        if (i > 0) {
            const double ratio = static_cast<double>(sparse[i]) / static_cast<double>(sparse[i - 1]);
            worst_ratio = std::max(worst_ratio, ratio);
            ok = ok && ratio <= 2.6;
        }
    }
    ok = ok && dense_slope >= 1.9 && dense_slope <= 2.1;
    r.pass = ok;
    r.detail = "dense slope " + fmt(dense_slope) + ", worst sparse doubling ratio " +
               fmt(worst_ratio) + ", " + fmt(wall) + " s";
    return r;
}

// ---- criterion 5: learning sanity ----
CriterionResult criterion_learning(const std::string& tmp) {
    CriterionResult r{5, "learning: 16-sample overfit to <= 5%; full run beats history-mean"};

    // Part A: 16-sample overfit, 2000 steps (batch 16 => one step per epoch).
    const std::string overfit_ds = tmp + "/c5_overfit_ds";
    build_dataset(2, 32, 16, 42, overfit_ds); // one train station, 16 samples
    Dataset ds_small = Dataset::open(overfit_ds);
    if (ds_small.split_indices("train").size() != 16) {
        r.detail = "expected 16 train samples, got " +
                   std::to_string(ds_small.split_indices("train").size());
        return r;
    }
    ModelConfig tiny;
    tiny.image_size = 64;
    tiny.patch = 16;
    tiny.d_model = 16;
    tiny.n_heads = 2;
    tiny.spatial_blocks = 1;
    tiny.temporal_blocks = 1;
    tiny.history_len = 16;
    TrainConfig overfit_cfg;
    overfit_cfg.epochs = 2000;
    overfit_cfg.batch_size = 16;
    overfit_cfg.seed = 42;
    overfit_cfg.threads = worker_threads();
    const auto t0 = std::chrono::steady_clock::now();
    GeoFormerModel tiny_model = GeoFormerModel::init(tiny, ds_small.manifest().stats, 42);
    const TrainResult overfit = train(tiny_model, ds_small, overfit_cfg, tmp + "/c5_overfit_run");
    const double overfit_wall = seconds_since(t0);
    const double initial = overfit.epoch_mse.front();
    double best = initial;
    for (double v : overfit.epoch_mse) best = std::min(best, v);
    const bool overfit_ok = best <= 0.05 * initial && overfit_wall < 300.0;
    std::cerr << "[acceptance] overfit: initial " << initial << " -> best " << best << " in "
              << overfit_wall << " s\n";

    // Part B: full synthetic run, held-out stations vs the history-mean
    // baseline.
    const std::string full_ds_dir = tmp + "/c5_full_ds";
    auto t1 = std::chrono::steady_clock::now();
    build_dataset(35, 450, 32, 42, full_ds_dir);
    std::cerr << "[acceptance] full dataset built in " << seconds_since(t1) << " s\n";
    Dataset full_ds = Dataset::open(full_ds_dir);

    TrainConfig full_cfg; // library defaults: batch 16, lr 1e-3, clip 1.0
    full_cfg.epochs = 50;
    full_cfg.seed = 42;
    full_cfg.threads = worker_threads();
    GeoFormerModel model = GeoFormerModel::init(ModelConfig{}, full_ds.manifest().stats,
                                                derive_seed(42, {7}));
    t1 = std::chrono::steady_clock::now();
    const TrainResult full_run = train(model, full_ds, full_cfg, tmp + "/c5_full_run");
    std::cerr << "[acceptance] 50-epoch run finished in " << seconds_since(t1) << " s (mse "
              << full_run.epoch_mse.front() << " -> " << full_run.epoch_mse.back() << ")\n";

    // Monotone-trend property of the loss curve: smooth with a 5-epoch
    // window, then require a net decrease over the 50 epochs and clear
    // descent below the starting level. (Pointwise non-increase does not
    // survive constant-lr plateau wander.)
    std::vector<double> smoothed;
    for (size_t e = 4; e < full_run.epoch_mse.size(); ++e) {
        double s = 0.0;
        for (size_t j = e - 4; j <= e; ++j) s += full_run.epoch_mse[j];
        smoothed.push_back(s / 5.0);
    }
    double smoothed_min = smoothed.front();
    for (double s : smoothed) smoothed_min = std::min(smoothed_min, s);
    const bool trend_ok =
        smoothed.back() < smoothed.front() && smoothed_min < 0.75 * smoothed.front();

    const MetricsReport model_report = evaluate(model, full_ds, "test", worker_threads());

    // History-mean baseline on the same split (independent oracle).
    std::vector<double> base_preds, base_targets;
    for (size_t i : full_ds.split_indices("test")) {
        Sample s = full_ds.load(i);
        double mean = 0.0;
        for (double v : s.history.values) mean += v;
        base_preds.push_back(mean / static_cast<double>(s.history.length()));
        base_targets.push_back(s.target);
    }
    const MetricsReport baseline = compute_metrics(base_preds, base_targets);

    const bool full_ok = model_report.mae < baseline.mae;
    r.pass = overfit_ok && full_ok && trend_ok;
    r.detail = "overfit " + fmt(initial) + " -> " + fmt(best) + " (" + fmt(overfit_wall) +
               " s); held-out MAE " + fmt(model_report.mae) + " vs history-mean " +
               fmt(baseline.mae) + "; smoothed loss " + fmt(smoothed.front()) + " -> " +
               fmt(smoothed.back()) + " (min " + fmt(smoothed_min) + ")";
    return r;
}

// ---- criterion 6: probsparse selection properties ----
CriterionResult criterion_selection() {
    CriterionResult r{6, "top-u selection: u formula, dominance, uniform-score closed forms"};
    bool ok = true;
    SplitMix64 rng(64);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t lq = 1 + rng.below(3000);
        const size_t expected =
            std::min<size_t>(lq, std::max<size_t>(1, static_cast<size_t>(std::ceil(
                                      5.0 * std::log(static_cast<double>(lq))))));
        ok = ok && top_u_count(lq, 5.0) == expected;
        Tensor m = test_util::random_tensor({std::min<size_t>(lq, 200)}, rng, -4.0, 4.0);
        const std::vector<size_t> sel = top_u_queries(m, 5.0);
        std::set<size_t> chosen(sel.begin(), sel.end());
        ok = ok && chosen.size() == sel.size() &&
             sel.size() == top_u_count(m.numel(), 5.0);
        double min_sel = 1e300, max_unsel = -1e300;
        for (size_t i = 0; i < m.numel(); ++i) {
            if (chosen.count(i))
                min_sel = std::min(min_sel, m[i]);
            else
                max_unsel = std::max(max_unsel, m[i]);
        }
        if (chosen.size() < m.numel()) ok = ok && min_sel >= max_unsel;
    }

    ScoreMatrix uniform{Tensor::zeros({1, 4})};
    const double eq3 = sparsity_measurement(uniform, MeasurementVariant::PaperEq3).values[0];
    const double mm =
        sparsity_measurement(ScoreMatrix{Tensor::full({1, 4}, 1.3)}, MeasurementVariant::InformerMaxMean)
            .values[0];
    const bool eq3_ok = std::fabs(eq3 - (std::log(4.0) - 1.0)) <= 1e-9 &&
                        std::fabs(eq3 - 0.38629) < 1e-5;
    const bool mm_ok = std::fabs(mm) <= 1e-12;
    r.pass = ok && eq3_ok && mm_ok;
    r.detail = "paper-eq3 uniform M = " + fmt(eq3) + " (ln 4 - 1), informer-max-mean M = " +
               fmt(mm);
    return r;
}

// ---- criterion 7: pipeline integrity ----
CriterionResult criterion_pipeline(const std::string& tmp) {
    CriterionResult r{7, "pipeline: byte-reproducible build, no leakage, no target leakage"};
    const std::string ds_a = tmp + "/c7_a", ds_b = tmp + "/c7_b";
    build_dataset(8, 60, 16, 99, ds_a);
    build_dataset(8, 60, 16, 99, ds_b);
    const bool bytes_ok = test_util::directories_identical(ds_a, ds_b);

    Dataset ds = Dataset::open(ds_a);
    std::set<std::string> train_ids, test_ids;
    for (const StationEntry& s : ds.manifest().stations)
        (s.split == "train" ? train_ids : test_ids).insert(s.id);
    bool audit_ok = !train_ids.empty() && !test_ids.empty();
    for (const std::string& id : test_ids) audit_ok = audit_ok && !train_ids.count(id);
    for (size_t i : ds.split_indices("train"))
        audit_ok = audit_ok && train_ids.count(ds.manifest().samples[i].station) > 0;
    for (size_t i : ds.split_indices("test"))
        audit_ok = audit_ok && test_ids.count(ds.manifest().samples[i].station) > 0;
    audit_ok = audit_ok && ds.split_indices("train").size() + ds.split_indices("test").size() ==
                               ds.manifest().samples.size();

    // Outlier injection: day-t concentration must not touch sample t's image.
    Station st = make_station(2, 99);
    No2Series series = generate_station_series(st, 60, 99);
    Tensor before = sample_image(st, series, 40, 99);
    series.values[40] = 1e6;
    Tensor after = sample_image(st, series, 40, 99);
    const bool leak_ok = test_util::max_abs_diff(before, after) == 0.0;

    r.pass = bytes_ok && audit_ok && leak_ok;
    r.detail = std::string("rebuild byte-identical: ") + (bytes_ok ? "yes" : "NO") +
               "; id audit: " + (audit_ok ? "clean" : "LEAK") +
               "; outlier pixel delta: " + (leak_ok ? "0" : "nonzero");
    return r;
}

// ---- criterion 8: CLI determinism ----
CriterionResult criterion_determinism(const std::string& cli, const std::string& tmp) {
    CriterionResult r{8, "determinism: synth/train/eval/bench byte-identical across reruns"};
    auto run = [&](const std::string& args) {
        return test_util::run_command("'" + cli + "' " + args + " 2>/dev/null");
    };
    // Snapshot of a directory so the same command can overwrite it on rerun.
    auto snapshot = [](const std::string& dir, const std::string& copy) {
        fs::remove_all(copy);
        fs::copy(dir, copy, fs::copy_options::recursive);
    };
    bool ok = true;
    std::string why;

    const std::string ds = tmp + "/c8_ds";
    const std::string synth_cmd =
        "--seed 11 synth --stations 4 --days 45 --history 12 --out '" + ds + "'";
    const auto s1 = run(synth_cmd);
    snapshot(ds, ds + "_snap");
    const auto s2 = run(synth_cmd);
    if (s1.exit_code != 0 || s2.exit_code != 0) {
        ok = false;
        why += "synth failed; ";
    }
    if (s1.output != s2.output || s1.output.empty()) {
        ok = false;
        why += "synth stdout differs; ";
    }
    if (!test_util::directories_identical(ds, ds + "_snap")) {
        ok = false;
        why += "synth bytes differ; ";
    }

    const std::string cfg_path = tmp + "/c8_config.json";
    std::ofstream(cfg_path) << R"({"epochs": 2, "batch_size": 8,
        "model": {"patch": 16, "d_model": 8, "n_heads": 2,
                  "spatial_blocks": 1, "temporal_blocks": 1, "history_len": 12}})";
    const std::string run_dir = tmp + "/c8_run";
    const std::string train_cmd = "--seed 11 train --data '" + ds + "' --config '" + cfg_path +
                                  "' --out '" + run_dir + "'";
    const auto t1 = run(train_cmd);
    snapshot(run_dir, run_dir + "_snap");
    const auto t2 = run(train_cmd);
    if (t1.exit_code != 0 || t2.exit_code != 0) {
        ok = false;
        why += "train failed; ";
    }
    if (t1.output != t2.output || !test_util::directories_identical(run_dir, run_dir + "_snap")) {
        ok = false;
        why += "train outputs differ; ";
    }

    const std::string eval_cmd =
        "eval --ckpt '" + run_dir + "/checkpoint' --data '" + ds + "' --split test";
    const auto e1 = run(eval_cmd);
    const auto e2 = run(eval_cmd);
    if (e1.exit_code != 0 || e1.output != e2.output || e1.output.empty()) {
        ok = false;
        why += "eval stdout differs; ";
    }

    const std::string bench_cmd = "--seed 11 bench --lengths 64,128,256 --no-timing";
    const auto b1 = run(bench_cmd);
    const auto b2 = run(bench_cmd);
    if (b1.exit_code != 0 || b1.output != b2.output || b1.output.empty()) {
        ok = false;
        why += "bench stdout differs; ";
    }

    r.pass = ok;
    r.detail = ok ? "synth dir, train outputs, eval and bench stdout all byte-identical on rerun"
                  : why;
    return r;
}

} // namespace

int main(int argc, char** argv) {
    std::string cli;
    std::string tmp_root = "acceptance_tmp";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--cli" && i + 1 < argc) cli = argv[++i];
        else if (arg == "--tmp" && i + 1 < argc) tmp_root = argv[++i];
    }
    if (cli.empty()) {
        std::cerr << "usage: acceptance --cli <path-to-geoformer-binary> [--tmp DIR]\n";
        return 2;
    }

    fs::remove_all(tmp_root);
    fs::create_directories(tmp_root);
    const std::string tmp = fs::absolute(tmp_root).string();

    std::vector<CriterionResult> results;
    const auto suite_t0 = std::chrono::steady_clock::now();
    results.push_back(criterion_size(tmp));
    results.push_back(criterion_gradients());
    results.push_back(criterion_attention_oracle());
    results.push_back(criterion_complexity(cli));
    results.push_back(criterion_learning(tmp));
    results.push_back(criterion_selection());
    results.push_back(criterion_pipeline(tmp));
    results.push_back(criterion_determinism(cli, tmp));

    bool all = true;
    for (const CriterionResult& r : results) {
        all = all && r.pass;
        std::cout << (r.pass ? "PASS" : "FAIL") << ": criterion " << r.id << " — " << r.summary
                  << " (" << r.detail << ")\n";
    }
    std::cout << (all ? "ACCEPTANCE: all criteria passed" : "ACCEPTANCE: FAILURES present")
              << " in " << fmt(seconds_since(suite_t0)) << " s\n";

    std::error_code ec;
    fs::remove_all(tmp, ec);
    return all ? 0 : 1;
}
