#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dla/checkpoint.hpp"
#include "dla/dataset.hpp"
#include "dla/training.hpp"

using namespace dla;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int c = 0;
        path = fs::temp_directory_path() / ("dla_train_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(c++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

DlaNetConfig small_net() {
    DlaNetConfig cfg;
    cfg.encoder_dims = {8, 16, 16, 32};
    cfg.k_neighbors = 8;
    return cfg;
}

TrainConfig small_train(uint64_t seed) {
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.points_per_sample = 320;
    tc.steps_per_epoch = 3;
    tc.seed = seed;
    return tc;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("lr_schedule: the 5% decay sequence") {
    TrainConfig cfg;
    CHECK(lr_schedule(0, cfg) == 0.01);
    CHECK(lr_schedule(1, cfg) == doctest::Approx(0.0095).epsilon(1e-12));
    CHECK(lr_schedule(2, cfg) == doctest::Approx(0.009025).epsilon(1e-12));
    for (int e = 0; e < 20; ++e) CHECK(lr_schedule(e + 1, cfg) < lr_schedule(e, cfg));
    TrainConfig flat;
    flat.lr_decay = 1.0;
    CHECK(lr_schedule(50, flat) == flat.lr0);
}

TEST_CASE("train config validation") {
    TrainConfig bad;
    bad.lr0 = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.lr_decay = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.precision = "f16";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("fixed seed gives bit-identical epoch statistics and parameters") {
    PointCloud scene = generate_synthetic_facade(5, 2048);
    auto run = [&](uint64_t seed) {
        Model<float> model(small_net(), 31);
        Trainer<float> trainer(model, small_train(seed), {&scene});
        std::vector<double> losses;
        EpochStats stats{};
        for (int e = 0; e < 2; ++e)
            stats = trainer.run_epoch(e, [&](int64_t, int64_t, double, double l, double) {
                losses.push_back(l);
            });
        std::vector<float> flat;
        for (const auto& p : model.store.items())
            flat.insert(flat.end(), p->value.data->begin(), p->value.data->end());
        return std::make_tuple(stats.mean_loss, stats.oa, losses, flat);
    };
    const auto a = run(123);
    const auto b = run(123);
    CHECK(std::get<0>(a) == std::get<0>(b));
    CHECK(std::get<1>(a) == std::get<1>(b));
    CHECK(std::get<2>(a) == std::get<2>(b));
    CHECK(std::get<3>(a) == std::get<3>(b));
    const auto c = run(124);
    CHECK(std::get<2>(a) != std::get<2>(c));
}

TEST_CASE("toy scene: epoch-5 loss beats epoch-0 loss") {
    PointCloud scene = generate_synthetic_facade(6, 512);
    Model<float> model(small_net(), 8);
    TrainConfig tc;
    tc.epochs = 6;
    tc.batch_size = 1;
    tc.points_per_sample = 512;
    tc.steps_per_epoch = 4;
    tc.seed = 3;
    Trainer<float> trainer(model, tc, {&scene});
    double first = 0, last = 0;
    for (int e = 0; e < 6; ++e) {
        EpochStats s = trainer.run_epoch(e);
        if (e == 0) first = s.mean_loss;
        if (e == 5) last = s.mean_loss;
    }
    CHECK(last < first);
}

TEST_CASE("checkpoint: save -> load -> save is byte-identical; mismatches are named") {
    TempDir dir;
    Model<float> model(small_net(), 77);
    // Touch the adam state so the round-trip covers nonzero slots.
    for (auto& p : model.store.items())
        for (size_t i = 0; i < p->adam_m.size(); ++i) {
            p->adam_m[i] = static_cast<float>(i) * 0.5f;
            p->adam_v[i] = static_cast<float>(i) * 0.25f;
        }
    CheckpointMeta meta;
    meta.step = 17;
    meta.epoch = 3;
    const std::string a = (dir.path / "a.dlaw").string();
    save_checkpoint(a, model.store, meta);
    CHECK(checkpoint_dtype(a) == 0);

    Model<float> other(small_net(), 1);
    const CheckpointMeta back = load_checkpoint(a, other.store);
    CHECK(back.step == 17);
    CHECK(back.epoch == 3);
    const std::string b = (dir.path / "b.dlaw").string();
    save_checkpoint(b, other.store, back);
    CHECK(slurp(a) == slurp(b));

    DlaNetConfig different = small_net();
    different.encoder_dims = {8, 16, 16, 64};
    Model<float> wrong(different, 1);
    CHECK_THROWS_WITH_AS(load_checkpoint(a, wrong.store), doctest::Contains("enc3"), ShapeError);

    Model<double> wrong_dtype(small_net(), 1);
    CHECK_THROWS_WITH_AS(load_checkpoint(a, wrong_dtype.store), doctest::Contains("dtype"),
                         ShapeError);
}

TEST_CASE("resume reproduces the uninterrupted run bit-exactly") {
    TempDir dir;
    AreaSet areas;
    areas.names = {"Area1", "Area2"};
    areas.clouds.push_back(generate_synthetic_area(9, 0, 512));
    areas.clouds.push_back(generate_synthetic_area(9, 1, 512));
    Split split;
    split.train = {0};
    split.test = {1};

    DlaNetConfig net = small_net();
    TrainConfig tc;
    tc.batch_size = 1;
    tc.points_per_sample = 320;
    tc.steps_per_epoch = 2;
    tc.seed = 55;

    // Uninterrupted: 4 epochs.
    tc.epochs = 4;
    FoldResult full = train_one_fold<float>(areas, split, net, tc, /*fold_seed=*/99,
                                            (dir.path / "full").string(), "fold");

    // Interrupted: 2 epochs, then resume to 4.
    tc.epochs = 2;
    FoldResult half = train_one_fold<float>(areas, split, net, tc, 99,
                                            (dir.path / "part").string(), "fold");
    tc.epochs = 4;
    FoldResult done = train_one_fold<float>(areas, split, net, tc, 99,
                                            (dir.path / "part").string(), "fold",
                                            half.checkpoint_path);

    CHECK(slurp(full.checkpoint_path) == slurp(done.checkpoint_path));
    CHECK(slurp(full.log_path) == slurp(done.log_path));
}

TEST_CASE("evaluate_full: single pass identity, determinism, chunked agreement") {
    PointCloud scene = generate_synthetic_facade(77, 2048);
    Model<float> model(small_net(), 5);

    // Below the chunk limit: one pass, and deterministic across calls.
    Tensor<float> a = evaluate_full(model, scene, 65536);
    Tensor<float> b = evaluate_full(model, scene, 65536);
    REQUIRE(a.shape == Shape{2048, 8});
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.ptr()[i] == b.ptr()[i]);

    // Briefly train so predictions are structured rather than noise.
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 1;
    tc.points_per_sample = 512;
    tc.steps_per_epoch = 8;
    tc.seed = 4;
    Trainer<float> trainer(model, tc, {&scene});
    for (int e = 0; e < tc.epochs; ++e) trainer.run_epoch(e);

    Tensor<float> whole = evaluate_full(model, scene, 0);
    Tensor<float> chunked = evaluate_full(model, scene, 1024);
    const auto pw = predict(whole);
    const auto pc = predict(chunked);
    int64_t agree = 0;
    for (size_t i = 0; i < pw.size(); ++i) agree += pw[i] == pc[i];
    const double frac = static_cast<double>(agree) / static_cast<double>(pw.size());
    CAPTURE(frac);
    CHECK(frac >= 0.99);
}

TEST_CASE("non-finite loss aborts with batch and step context") {
    PointCloud scene = generate_synthetic_facade(8, 512);
    Model<float> model(small_net(), 2);
    // Poison one weight so the forward pass produces NaN.
    model.store.items().front()->value.ptr()[0] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig tc = small_train(1);
    tc.points_per_sample = 512;
    tc.batch_size = 1;
    Trainer<float> trainer(model, tc, {&scene});
    CHECK_THROWS_WITH_AS(trainer.run_epoch(0), doctest::Contains("step"), NumericalError);
}
