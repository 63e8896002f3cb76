#include "geoformer/data_synth.hpp"
#include "geoformer/gradcheck.hpp"
#include "geoformer/model.hpp"
#include "geoformer/tensor_io.hpp"
#include "geoformer/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace geoformer;
using nlohmann::json;

struct SynthArgs {
    size_t stations = 35;
    size_t days = 450;
    size_t history = 32;
    std::string out;
};

struct TrainArgs {
    std::string data;
    std::string config_file;
    std::string out;
};

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string split = "test";
    size_t threads = 1;
    bool autoregressive = false;
};

struct GradcheckArgs {
    double tol = 1e-4;
};

struct BenchArgs {
    std::vector<size_t> lengths = {256, 512, 1024, 2048, 4096};
    std::string variant = "paper-eq3";
    size_t width = 16;
    double factor = 5.0;
    bool no_timing = false;
};

void merge_model_json(ModelConfig& cfg, const json& j) {
    if (j.contains("image_size")) cfg.image_size = j["image_size"].get<size_t>();
    if (j.contains("patch")) cfg.patch = j["patch"].get<size_t>();
    if (j.contains("d_model")) cfg.d_model = j["d_model"].get<size_t>();
    if (j.contains("n_heads")) cfg.n_heads = j["n_heads"].get<size_t>();
    if (j.contains("spatial_blocks")) cfg.spatial_blocks = j["spatial_blocks"].get<size_t>();
    if (j.contains("temporal_blocks")) cfg.temporal_blocks = j["temporal_blocks"].get<size_t>();
    if (j.contains("history_len")) cfg.history_len = j["history_len"].get<size_t>();
    if (j.contains("probsparse")) {
        const json& ps = j["probsparse"];
        if (ps.contains("sampling_factor"))
            cfg.probsparse.sampling_factor = ps["sampling_factor"].get<double>();
        if (ps.contains("measurement_variant"))
            cfg.probsparse.measurement_variant =
                measurement_variant_from_string(ps["measurement_variant"].get<std::string>());
        if (ps.contains("key_sample_factor"))
            cfg.probsparse.key_sample_factor = ps["key_sample_factor"].get<double>();
        if (ps.contains("seed")) cfg.probsparse.seed = ps["seed"].get<uint64_t>();
    }
}

int run_synth(const SynthArgs& args, uint64_t seed) {
    build_dataset(args.stations, args.days, args.history, seed, args.out);
    std::cout << args.out << "/manifest.json\n";
    return 0;
}

int run_train(const TrainArgs& args, uint64_t seed, const CLI::App* sub) {
    TrainConfig cfg;
    cfg.seed = seed;
    ModelConfig model_cfg;
    model_cfg.probsparse.seed = seed;

    if (!args.config_file.empty()) {
        std::ifstream in(args.config_file);
        if (!in) throw IoError("train: cannot open config file " + args.config_file);
        std::stringstream buf;
        buf << in.rdbuf();
        const json j = json::parse(buf.str());
        cfg.merge_json(buf.str());
        if (j.contains("model")) merge_model_json(model_cfg, j["model"]);
    }
    // Flags win over file values.
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->count() == 0) continue;
        const std::string name = opt->get_name();
        if (name == "--epochs") cfg.epochs = opt->as<size_t>();
        else if (name == "--batch") cfg.batch_size = opt->as<size_t>();
        else if (name == "--lr") cfg.lr = opt->as<double>();
        else if (name == "--threads") cfg.threads = opt->as<size_t>();
        else if (name == "--checkpoint-interval") cfg.checkpoint_interval = opt->as<size_t>();
    }
    cfg.validate();
    model_cfg.validate();

    Dataset ds = Dataset::open(args.data);
    if (ds.manifest().history_len != model_cfg.history_len)
        throw std::invalid_argument("train: dataset history length " +
                                    std::to_string(ds.manifest().history_len) +
                                    " does not match model history_len " +
                                    std::to_string(model_cfg.history_len));
    GeoFormerModel model =
        GeoFormerModel::init(model_cfg, ds.manifest().stats, derive_seed(seed, {7}));
    TrainResult result = train(model, ds, cfg, args.out);
    std::cout << result.checkpoint_dir << "\n";
    return 0;
}

int run_eval(const EvalArgs& args) {
    GeoFormerModel model = load_checkpoint(args.ckpt);
    Dataset ds = Dataset::open(args.data);
    const MetricsReport report = args.autoregressive
                                     ? evaluate_autoregressive(model, ds, args.split)
                                     : evaluate(model, ds, args.split, args.threads);
    std::cout << report.to_json_line() << "\n";
    return 0;
}

int run_gradcheck(const GradcheckArgs& args, uint64_t seed) {
    const auto results = run_gradcheck_suite(seed);
    std::cout << "op,max_rel_err\n";
    for (const GradCheckResult& r : results) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6e", r.max_rel_err);
        std::cout << r.name << "," << buf << "\n";
    }
    const bool ok = gradcheck_all_passed(results, args.tol);
    std::cerr << "gradcheck: " << (ok ? "all under" : "FAILED at") << " tol " << args.tol << "\n";
    return ok ? 0 : 1;
}

int run_bench(const BenchArgs& args, uint64_t seed) {
    if (args.lengths.empty()) throw std::invalid_argument("bench: no lengths given");
    ProbSparseConfig cfg;
    cfg.sampling_factor = args.factor;
    cfg.measurement_variant = measurement_variant_from_string(args.variant);
    cfg.seed = seed;

    std::cout << "length,dense_dots,sparse_dots,dense_ms,sparse_ms\n";
    std::vector<double> log_l, log_dense, log_sparse;
    for (size_t l : args.lengths) {
        SplitMix64 rng(derive_seed(seed, {0x62656e63ull, l})); // "benc"
        Tensor q = Tensor::zeros({l, args.width});
        Tensor k = Tensor::zeros({l, args.width});
        Tensor v = Tensor::zeros({l, args.width});
        for (Tensor* t : {&q, &k, &v})
            for (size_t i = 0; i < t->numel(); ++i) (*t)[i] = rng.uniform(-1.0, 1.0);

        NoGradGuard ng;
        DotCounter dense_counter;
        const auto t0 = std::chrono::steady_clock::now();
        Tensor dense_out = dense_attention(q, k, v, &dense_counter);
        const auto t1 = std::chrono::steady_clock::now();
        DotCounter sparse_counter;
        Tensor sparse_out = probsparse_attention(q, k, v, cfg, &sparse_counter);
        const auto t2 = std::chrono::steady_clock::now();
        if (!all_finite(dense_out) || !all_finite(sparse_out))
            throw std::runtime_error("bench: non-finite attention output at length " +
                                     std::to_string(l));

        const double dense_ms =
            args.no_timing ? 0.0 : std::chrono::duration<double, std::milli>(t1 - t0).count();
        const double sparse_ms =
            args.no_timing ? 0.0 : std::chrono::duration<double, std::milli>(t2 - t1).count();
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%zu,%llu,%llu,%.3f,%.3f", l, dense_counter.count,
                      sparse_counter.count, dense_ms, sparse_ms);
        std::cout << buf << "\n";
        log_l.push_back(std::log(static_cast<double>(l)));
        log_dense.push_back(std::log(static_cast<double>(dense_counter.count)));
        log_sparse.push_back(std::log(static_cast<double>(sparse_counter.count)));
    }

    auto slope = [&](const std::vector<double>& y) {
        const size_t n = log_l.size();
        if (n < 2) return 0.0;
        double mx = 0.0, my = 0.0;
        for (size_t i = 0; i < n; ++i) {
            mx += log_l[i];
            my += y[i];
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < n; ++i) {
            num += (log_l[i] - mx) * (y[i] - my);
            den += (log_l[i] - mx) * (log_l[i] - mx);
        }
        return num / den;
    };
    char buf[96];
    std::snprintf(buf, sizeof(buf), "fit,dense_dots_slope,%.6f", slope(log_dense));
    std::cout << buf << "\n";
    std::snprintf(buf, sizeof(buf), "fit,sparse_dots_slope,%.6f", slope(log_sparse));
    std::cout << buf << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"geoformer: synthetic NO2 spatio-temporal transformer workbench"};
    app.require_subcommand(1);
    app.fallthrough();

    uint64_t seed = 42;
    app.add_option("--seed", seed, "Global RNG seed")->capture_default_str();

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
    synth->add_option("--stations", synth_args.stations, "Number of synthetic stations")
        ->capture_default_str();
    synth->add_option("--days", synth_args.days, "Days of daily data per station")
        ->capture_default_str();
    synth->add_option("--history", synth_args.history, "History window length L")
        ->capture_default_str();
    synth->add_option("--out", synth_args.out, "Output dataset directory")->required();

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
    train_cmd->add_option("--data", train_args.data, "Dataset directory")->required();
    train_cmd->add_option("--out", train_args.out, "Output directory (checkpoint + loss.csv)")
        ->required();
    train_cmd
        ->add_option("--config", train_args.config_file,
                     "JSON config (train fields + \"model\" object); precedence: flag > file > "
                     "default")
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--epochs", "Training epochs")->capture_default_str();
    train_cmd->add_option("--batch", "Batch size");
    train_cmd->add_option("--lr", "Learning rate");
    train_cmd->add_option("--threads", "Worker threads (output is thread-count independent)");
    train_cmd->add_option("--checkpoint-interval", "Epochs between periodic checkpoints");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    eval_cmd->add_option("--ckpt", eval_args.ckpt, "Checkpoint directory")->required();
    eval_cmd->add_option("--data", eval_args.data, "Dataset directory")->required();
    eval_cmd->add_option("--split", eval_args.split, "train or test")
        ->check(CLI::IsMember({"train", "test"}))
        ->capture_default_str();
    eval_cmd->add_option("--threads", eval_args.threads, "Worker threads")->capture_default_str();
    eval_cmd->add_flag("--autoregressive", eval_args.autoregressive,
                       "Feed predictions back as history instead of ground truth");

    GradcheckArgs gradcheck_args;
    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
    gradcheck_cmd->add_option("--tol", gradcheck_args.tol, "Max relative error to accept")
        ->capture_default_str();

    BenchArgs bench_args;
    CLI::App* bench_cmd =
        app.add_subcommand("bench", "Dense vs probsparse attention cost over sequence lengths");
    bench_cmd->add_option("--lengths", bench_args.lengths, "Sequence lengths")
        ->delimiter(',')
        ->capture_default_str();
    bench_cmd->add_option("--variant", bench_args.variant, "paper-eq3 or informer-max-mean")
        ->check(CLI::IsMember({"paper-eq3", "informer-max-mean"}))
        ->capture_default_str();
    bench_cmd->add_option("--width", bench_args.width, "Key/query width d_k")
        ->capture_default_str();
    bench_cmd->add_option("--factor", bench_args.factor, "ProbSparse sampling factor c")
        ->capture_default_str();
    bench_cmd->add_flag("--no-timing", bench_args.no_timing,
                        "Zero the ms columns for byte-reproducible output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*synth) return run_synth(synth_args, seed);
        if (*train_cmd) return run_train(train_args, seed, train_cmd);
        if (*eval_cmd) return run_eval(eval_args);
        if (*gradcheck_cmd) return run_gradcheck(gradcheck_args, seed);
        if (*bench_cmd) return run_bench(bench_args, seed);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
