// dlanet: synthetic facade generation, training, evaluation, prediction and
// self-verification for the DLA-Net point cloud segmentation stack.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "dla/config.hpp"
#include "dla/kernels.hpp"
#include "dla/selftest.hpp"
#include "dla/training.hpp"

namespace fs = std::filesystem;
using dla::ConfigError;
using dla::DataError;
using dla::NumericalError;

namespace {

constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 ok, 1 usage, 2 data, 3 numerical, 4 selftest failure.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitSelftest = 4;

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

struct TrainCli {
    std::string config_path;
    std::string data_dir;
    std::string split = "kfold6";
    std::string out_dir = "runs/default";
    std::string resume;
    bool parallel_folds = false;
    // Overrides, applied over the config file.
    int64_t epochs = -1, batch_size = -1, points = -1, steps_per_epoch = -1;
    double lr0 = -1, lr_decay = -1;
    int64_t k_neighbors = -1;
    int64_t seed = -1;
    std::string precision, pe_variant, sa_pe, ap_mode, sa_aggregate, pe_bn, sa_bn;
    bool no_rgb = false;
};

dla::RunConfig resolve_config(const TrainCli& cli) {
    dla::RunConfig cfg =
        cli.config_path.empty() ? dla::default_run_config() : dla::load_run_config(cli.config_path);
    if (cli.epochs >= 0) cfg.train.epochs = cli.epochs;
    if (cli.batch_size >= 0) cfg.train.batch_size = cli.batch_size;
    if (cli.points >= 0) cfg.train.points_per_sample = cli.points;
    if (cli.steps_per_epoch >= 0) cfg.train.steps_per_epoch = cli.steps_per_epoch;
    if (cli.lr0 >= 0) cfg.train.lr0 = cli.lr0;
    if (cli.lr_decay >= 0) cfg.train.lr_decay = cli.lr_decay;
    if (cli.seed >= 0) cfg.train.seed = static_cast<uint64_t>(cli.seed);
    if (cli.k_neighbors >= 0) {
        cfg.train.k_neighbors = cli.k_neighbors;
        cfg.net.k_neighbors = cli.k_neighbors;
    }
    if (!cli.precision.empty()) cfg.train.precision = cli.precision;
    if (!cli.pe_variant.empty()) cfg.net.dla.pe_variant = dla::pe_variant_from_string(cli.pe_variant);
    if (!cli.sa_pe.empty()) cfg.net.dla.sa_pe = dla::sa_pe_placement_from_string(cli.sa_pe);
    if (!cli.ap_mode.empty()) cfg.net.dla.ap_mode = dla::ap_mode_from_string(cli.ap_mode);
    if (!cli.sa_aggregate.empty())
        cfg.net.dla.sa_aggregate = dla::sa_aggregate_from_string(cli.sa_aggregate);
    auto onoff = [](const std::string& s, const char* what) {
        if (s == "on") return true;
        if (s == "off") return false;
        throw ConfigError(std::string(what) + " must be 'on' or 'off', got '" + s + "'");
    };
    if (!cli.pe_bn.empty()) cfg.net.dla.pe_bn = onoff(cli.pe_bn, "--pe-bn");
    if (!cli.sa_bn.empty()) cfg.net.dla.sa_bn = onoff(cli.sa_bn, "--sa-bn");
    if (cli.no_rgb) {
        cfg.net.use_rgb = false;
        cfg.net.d_in = 3;
    }
    if (const char* env = std::getenv("DLA_SEED")) cfg.train.seed = std::strtoull(env, nullptr, 10);
    cfg.net.validate();
    cfg.train.validate();
    return cfg;
}

int cmd_gen(uint64_t seed, int64_t points, const std::string& out, int areas,
            const std::string& format) {
    const dla::CloudFormat fmt = dla::format_from_string(format);
    for (int i = 0; i < areas; ++i) {
        const fs::path dir = fs::path(out) / ("Area" + std::to_string(i + 1));
        fs::create_directories(dir);
        dla::PointCloud cloud = dla::generate_synthetic_area(seed, i, points);
        const fs::path file = dir / ("area" + std::to_string(i + 1) + ".fpc");
        dla::save_cloud(cloud, file.string(), fmt);
        std::cout << file.string() << ": " << cloud.size() << " points\n";
    }
    return 0;
}

void write_manifest(const std::string& out_dir, const dla::RunConfig& cfg, const TrainCli& cli) {
    nlohmann::json m;
    m["version"] = kVersion;
    m["start_time"] = iso_now();
    m["data_dir"] = cli.data_dir;
    m["split"] = cli.split;
    m["out_dir"] = cli.out_dir;
    m["seed"] = cfg.train.seed;
    m["config"] = nlohmann::json::parse(dla::dump_run_config(cfg));
    std::ofstream f(out_dir + "/manifest.json", std::ios::trunc);
    if (!f) throw DataError("cannot write manifest in " + out_dir);
    f << m.dump(2) << "\n";
}

template <class T>
int train_with(const TrainCli& cli, const dla::RunConfig& cfg) {
    dla::AreaSet areas = dla::load_areas(cli.data_dir);
    const std::vector<dla::Split> splits = dla::make_splits(areas, cli.split);

    fs::create_directories(cli.out_dir);
    write_manifest(cli.out_dir, cfg, cli);
    {
        std::ofstream f(cli.out_dir + "/config.json", std::ios::trunc);
        f << dla::dump_run_config(cfg) << "\n";
    }

    std::vector<dla::FoldResult> results(splits.size());
    auto run_fold = [&](size_t f) {
        const std::string tag =
            splits.size() == 1 ? "fold" : "fold" + std::to_string(f);
        const uint64_t fold_seed = dla::Prng::derive(cfg.train.seed, 7000 + f);
        results[f] = dla::train_one_fold<T>(areas, splits[f], cfg.net, cfg.train, fold_seed,
                                            cli.out_dir, tag, f == 0 ? cli.resume : "");
    };

    if (cli.parallel_folds && splits.size() > 1) {
        std::vector<std::thread> threads;
        for (size_t f = 0; f < splits.size(); ++f) threads.emplace_back(run_fold, f);
        for (auto& t : threads) t.join();
    } else {
        for (size_t f = 0; f < splits.size(); ++f) run_fold(f);
    }

    dla::ConfusionMatrix pooled(static_cast<int>(cfg.net.n_class));
    for (size_t f = 0; f < splits.size(); ++f) {
        pooled.merge(results[f].cm);
        const dla::Metrics m = dla::metrics(results[f].cm);
        const std::string name = "test:" + areas.names[static_cast<size_t>(splits[f].test[0])];
        std::cout << dla::metrics_table(m, name);
        std::ofstream mf(cli.out_dir + "/metrics_fold" + std::to_string(f) + ".json");
        mf << dla::metrics_json(m) << "\n";
    }
    if (splits.size() > 1) {
        const dla::Metrics pm = dla::metrics(pooled);
        std::cout << dla::metrics_table(pm, "pooled");
        std::ofstream mf(cli.out_dir + "/metrics_pooled.json");
        mf << dla::metrics_json(pm) << "\n";
    }
    return 0;
}

// Rebuild a model and load the checkpoint into it.
template <class T>
dla::Model<T> model_from_checkpoint(const std::string& ckpt, const dla::RunConfig& cfg) {
    dla::Model<T> model(cfg.net, 0);
    dla::load_checkpoint(ckpt, model.store);
    return model;
}

dla::RunConfig config_for_checkpoint(const std::string& ckpt, const std::string& config_path) {
    std::string path = config_path;
    if (path.empty()) {
        const fs::path sibling = fs::path(ckpt).parent_path() / "config.json";
        if (!fs::exists(sibling))
            throw ConfigError("no --config given and " + sibling.string() + " does not exist");
        path = sibling.string();
    }
    return dla::load_run_config(path);
}

template <class T>
int eval_with(const std::string& ckpt, const dla::RunConfig& cfg, const std::string& data_dir,
              const std::string& area, const std::string& out_json) {
    dla::AreaSet areas = dla::load_areas(data_dir);
    const int idx = areas.find(area);
    if (idx < 0) throw DataError("unknown area '" + area + "' under " + data_dir);
    dla::Model<T> model = model_from_checkpoint<T>(ckpt, cfg);
    const dla::ConfusionMatrix cm =
        dla::evaluate_area(model, areas.clouds[static_cast<size_t>(idx)], cfg.train.eval_chunk_points);
    const dla::Metrics m = dla::metrics(cm);
    std::cout << dla::metrics_table(m, area);
    if (!out_json.empty()) {
        std::ofstream f(out_json, std::ios::trunc);
        if (!f) throw DataError("cannot write " + out_json);
        f << dla::metrics_json(m) << "\n";
    } else {
        std::cout << dla::metrics_json(m) << "\n";
    }
    return 0;
}

template <class T>
int predict_with(const std::string& ckpt, const dla::RunConfig& cfg, const std::string& in_path,
                 const std::string& out_path) {
    dla::PointCloud cloud = dla::load_cloud(in_path, dla::sniff_format(in_path));
    dla::Model<T> model = model_from_checkpoint<T>(ckpt, cfg);
    dla::Tensor<T> logits = dla::evaluate_full(model, cloud, cfg.train.eval_chunk_points);
    const std::vector<int32_t> pred = dla::predict(logits);
    cloud.label.resize(static_cast<size_t>(cloud.size()));
    for (size_t i = 0; i < pred.size(); ++i) cloud.label[i] = static_cast<uint8_t>(pred[i]);
    dla::save_cloud(cloud, out_path, dla::CloudFormat::ply_ascii);
    std::cout << out_path << ": " << cloud.size() << " points\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DLA-Net facade point cloud segmentation"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate synthetic labeled facade areas");
    uint64_t gen_seed = 1;
    int64_t gen_points = 8192;
    int gen_areas = 6;
    std::string gen_out = "data", gen_format = "fpc_bin";
    gen->add_option("--seed", gen_seed, "base rng seed");
    gen->add_option("--points", gen_points, "points per area")->check(CLI::Range(int64_t(256), int64_t(100000000)));
    gen->add_option("--areas", gen_areas, "number of areas")->check(CLI::Range(1, 64));
    gen->add_option("--out", gen_out, "output directory (<out>/Area<i>/*.fpc)");
    gen->add_option("--format", gen_format, "fpc_bin or fpc_text");

    // train
    auto* train = app.add_subcommand("train", "train DLA-Net on an area directory");
    TrainCli tc;
    train->add_option("--config", tc.config_path, "JSON config file");
    train->add_option("--data", tc.data_dir, "area directory root")->required();
    train->add_option("--split", tc.split, "leave_one_out:<Area> or kfold6");
    train->add_option("--out", tc.out_dir, "run output directory");
    train->add_option("--resume", tc.resume, "checkpoint to resume from (single-fold runs)");
    train->add_flag("--parallel-folds", tc.parallel_folds, "run folds on parallel threads");
    train->add_option("--epochs", tc.epochs);
    train->add_option("--batch-size", tc.batch_size);
    train->add_option("--points", tc.points, "points per training sample");
    train->add_option("--steps-per-epoch", tc.steps_per_epoch);
    train->add_option("--lr0", tc.lr0);
    train->add_option("--lr-decay", tc.lr_decay);
    train->add_option("--k", tc.k_neighbors, "neighborhood size K");
    train->add_option("--seed", tc.seed);
    train->add_option("--precision", tc.precision, "f32 or f64");
    train->add_option("--pe-variant", tc.pe_variant,
                      "neighbor_only|relative_only|relative_dist|center_relative_dist|"
                      "neighbor_relative_dist|all");
    train->add_option("--sa-pe", tc.sa_pe, "both|mapping_only|values_only|none");
    train->add_option("--ap-mode", tc.ap_mode, "attentive|max|avg|passthrough|no_pe");
    train->add_option("--sa-aggregate", tc.sa_aggregate, "sum|per_neighbor");
    train->add_option("--pe-bn", tc.pe_bn, "on|off");
    train->add_option("--sa-bn", tc.sa_bn, "on|off");
    train->add_flag("--no-rgb", tc.no_rgb, "xyz-only input features");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one area");
    std::string ev_ckpt, ev_config, ev_data, ev_area, ev_json;
    eval->add_option("--checkpoint", ev_ckpt)->required();
    eval->add_option("--config", ev_config, "config JSON (default: sibling config.json)");
    eval->add_option("--data", ev_data)->required();
    eval->add_option("--area", ev_area)->required();
    eval->add_option("--out-json", ev_json, "write metrics JSON here instead of stdout");

    // predict
    auto* pred = app.add_subcommand("predict", "label a cloud and export a colored PLY");
    std::string pr_ckpt, pr_config, pr_in, pr_out;
    pred->add_option("--checkpoint", pr_ckpt)->required();
    pred->add_option("--config", pr_config, "config JSON (default: sibling config.json)");
    pred->add_option("--in", pr_in, "input cloud (fpc_text/fpc_bin/ply)")->required();
    pred->add_option("--out", pr_out, "output PLY path")->required();

    // selftest
    auto* self = app.add_subcommand("selftest", "run the built-in verification suite");
    bool inject_fault = false;
    self->add_flag("--inject-fault", inject_fault,
                   "corrupt one gradient to prove failures are detected");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(gen_seed, gen_points, gen_out, gen_areas, gen_format);
        if (train->parsed()) {
            const dla::RunConfig cfg = resolve_config(tc);
            return cfg.train.precision == "f64" ? train_with<double>(tc, cfg)
                                                : train_with<float>(tc, cfg);
        }
        if (eval->parsed()) {
            const dla::RunConfig cfg = config_for_checkpoint(ev_ckpt, ev_config);
            return dla::checkpoint_dtype(ev_ckpt) == 1
                       ? eval_with<double>(ev_ckpt, cfg, ev_data, ev_area, ev_json)
                       : eval_with<float>(ev_ckpt, cfg, ev_data, ev_area, ev_json);
        }
        if (pred->parsed()) {
            const dla::RunConfig cfg = config_for_checkpoint(pr_ckpt, pr_config);
            return dla::checkpoint_dtype(pr_ckpt) == 1
                       ? predict_with<double>(pr_ckpt, cfg, pr_in, pr_out)
                       : predict_with<float>(pr_ckpt, cfg, pr_in, pr_out);
        }
        if (self->parsed()) {
            dla::SelftestOptions opt;
            opt.inject_gradient_fault = inject_fault;
            return dla::run_selftest(opt, std::cout) == 0 ? 0 : kExitSelftest;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const dla::ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
