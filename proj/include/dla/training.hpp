#pragma once

#include <functional>
#include <string>

#include "dla/checkpoint.hpp"
#include "dla/dataset.hpp"
#include "dla/metrics.hpp"
#include "dla/network.hpp"

namespace dla {

struct TrainConfig {
    int64_t epochs = 100;
    int64_t batch_size = 6;
    double lr0 = 1e-2;
    double lr_decay = 0.95;  // multiplied in after each epoch (5% drop)
    int64_t points_per_sample = 40960;
    int64_t k_neighbors = 16;
    uint64_t seed = 1;
    std::string precision = "f32";  // f32 | f64
    int64_t steps_per_epoch = 0;    // 0: ceil(train points / (batch * points))
    int64_t eval_chunk_points = 65536;
    int64_t checkpoint_every = 1;   // epochs between checkpoints

    void validate() const;
};

double lr_schedule(int64_t epoch, const TrainConfig& cfg);

// Model = config + parameter store + wiring into it.
template <class T>
struct Model {
    DlaNetConfig cfg;
    ParamStore<T> store;
    DlaNetParams<T> params;

    Model(const DlaNetConfig& c, uint64_t init_seed) : cfg(c) {
        Prng rng(init_seed);
        params = build_dla_net(store, cfg, rng);
    }
};

struct EpochStats {
    double mean_loss = 0.0;
    double oa = 0.0;
    int64_t steps = 0;
};

// One NDJSON record per optimizer step.
using StepLogger = std::function<void(int64_t epoch, int64_t step, double lr, double loss, double oa)>;

template <class T>
class Trainer {
public:
    Trainer(Model<T>& model, TrainConfig cfg, std::vector<const PointCloud*> train_areas);

    // Crops a batch per step, runs forward/backward over the batch union and
    // applies Adam with the epoch's learning rate. The epoch has its own
    // derived rng stream, so a resumed run replays the identical sequence.
    EpochStats run_epoch(int64_t epoch, const StepLogger& log = nullptr);

    int64_t global_step() const { return step_; }
    void set_global_step(int64_t s) { step_ = s; }

private:
    Model<T>& model_;
    TrainConfig cfg_;
    std::vector<const PointCloud*> areas_;
    int64_t steps_per_epoch_ = 0;
    int64_t step_ = 0;
};

// Eval-mode logits for every point. Clouds beyond `chunk_points` run in
// overlapping nearest-neighbor chunks; each point keeps the logits from the
// chunk whose center it sat closest to.
template <class T>
Tensor<T> evaluate_full(Model<T>& model, const PointCloud& cloud, int64_t chunk_points);

template <class T>
ConfusionMatrix evaluate_area(Model<T>& model, const PointCloud& cloud, int64_t chunk_points);

// Full training of one split: epoch loop, NDJSON step log, periodic
// checkpoints, optional resume, final test-area evaluation.
struct FoldResult {
    ConfusionMatrix cm;
    std::string checkpoint_path;
    std::string log_path;
};

template <class T>
FoldResult train_one_fold(const AreaSet& areas, const Split& split, const DlaNetConfig& netcfg,
                          const TrainConfig& cfg, uint64_t fold_seed, const std::string& out_dir,
                          const std::string& tag, const std::string& resume_path = {});

}  // namespace dla
