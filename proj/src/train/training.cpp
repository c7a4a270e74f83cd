#include "dla/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dla/geometry.hpp"
#include "json.hpp"

namespace dla {

namespace {
constexpr uint64_t kEvalSeed = 0xeba1eba1ull;
constexpr uint64_t kEpochStream = 1000;
}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
    if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must be in (0,1]");
    if (points_per_sample < 256) throw ConfigError("points_per_sample must be >= 256");
    if (k_neighbors < 1) throw ConfigError("k_neighbors must be >= 1");
    if (precision != "f32" && precision != "f64")
        throw ConfigError("precision must be 'f32' or 'f64', got '" + precision + "'");
    if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
    if (eval_chunk_points < 256) throw ConfigError("eval_chunk_points must be >= 256");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
}

double lr_schedule(int64_t epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ConfigError("lr_schedule: negative epoch");
    return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

template <class T>
Trainer<T>::Trainer(Model<T>& model, TrainConfig cfg, std::vector<const PointCloud*> train_areas)
    : model_(model), cfg_(std::move(cfg)), areas_(std::move(train_areas)) {
    cfg_.validate();
    if (areas_.empty()) throw DataError("trainer: no training areas");
    int64_t total_points = 0;
    for (const auto* a : areas_) {
        if (a->size() == 0) throw DataError("trainer: empty training area");
        total_points += a->size();
    }
    steps_per_epoch_ = cfg_.steps_per_epoch > 0
                           ? cfg_.steps_per_epoch
                           : std::max<int64_t>(1, (total_points + cfg_.batch_size * cfg_.points_per_sample - 1) /
                                                      (cfg_.batch_size * cfg_.points_per_sample));
}

template <class T>
EpochStats Trainer<T>::run_epoch(int64_t epoch, const StepLogger& log) {
    Prng rng(Prng::derive(cfg_.seed, kEpochStream + static_cast<uint64_t>(epoch)));
    const double lr = lr_schedule(epoch, cfg_);
    EpochStats stats;
    double loss_sum = 0.0;
    int64_t correct = 0, seen = 0;

    for (int64_t s = 0; s < steps_per_epoch_; ++s) {
        std::vector<Pyramid> pyramids;
        std::vector<Crop> crops;
        pyramids.reserve(static_cast<size_t>(cfg_.batch_size));
        crops.reserve(static_cast<size_t>(cfg_.batch_size));
        for (int64_t b = 0; b < cfg_.batch_size; ++b) {
            const auto* area = areas_[rng.next_below(areas_.size())];
            crops.push_back(crop_fixed_count(*area, cfg_.points_per_sample, rng));
            pyramids.push_back(build_pyramid(crops.back().cloud.pos, model_.cfg, rng));
        }
        Pyramid batch = merge_pyramids(std::move(pyramids));

        const int64_t n = batch.n_points();
        Tensor<T> features({n, model_.cfg.d_in});
        std::vector<int32_t> labels;
        labels.reserve(static_cast<size_t>(n));
        int64_t row = 0;
        for (const auto& crop : crops) {
            Tensor<T> f = assemble_features<T>(crop.cloud, model_.cfg);
            std::copy(f.ptr(), f.ptr() + f.numel(), features.ptr() + row * model_.cfg.d_in);
            row += f.dim(0);
            for (uint8_t lab : crop.cloud.label) labels.push_back(lab);
        }

        Tape<T> tape;
        model_.store.begin_step(tape);
        Ctx<T> ctx;
        ctx.tape = &tape;
        ctx.train = true;
        ctx.rng = &rng;
        double loss_val = 0.0;
        try {
            Tensor<T> logits = dla_net_forward(ctx, batch, features, model_.params, model_.cfg);
            Tensor<T> loss = cross_entropy(ctx, logits, labels);
            loss_val = static_cast<double>(loss.item());
            const std::vector<int32_t> pred = predict(logits);
            for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
            seen += n;
            tape.backward(loss);
            AdamConfig adam;
            adam.lr = lr;
            adam_step(model_.store, tape, adam, ++step_);
        } catch (const NumericalError& e) {
            model_.store.end_step();
            throw NumericalError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(s) + ", global step " +
                                 std::to_string(step_ + 1) + ")");
        }
        model_.store.end_step();

        loss_sum += loss_val;
        const double batch_oa = static_cast<double>(correct) / static_cast<double>(seen);
        if (log) log(epoch, s, lr, loss_val, batch_oa);
    }
    stats.steps = steps_per_epoch_;
    stats.mean_loss = loss_sum / static_cast<double>(steps_per_epoch_);
    stats.oa = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    return stats;
}

namespace {

template <class T>
Tensor<T> forward_eval(Model<T>& model, const PointCloud& cloud, Prng& rng) {
    Pyramid pyramid = build_pyramid(cloud.pos, model.cfg, rng);
    Tensor<T> features = assemble_features<T>(cloud, model.cfg);
    Ctx<T> ctx;  // no tape, eval mode
    return dla_net_forward(ctx, pyramid, features, model.params, model.cfg);
}

inline double d2(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace

template <class T>
Tensor<T> evaluate_full(Model<T>& model, const PointCloud& cloud, int64_t chunk_points) {
    const int64_t n = cloud.size();
    Prng rng(kEvalSeed);
    if (chunk_points <= 0 || chunk_points >= n) return forward_eval(model, cloud, rng);

    const int64_t chunk = std::max<int64_t>(chunk_points, 256);
    if (chunk >= n) return forward_eval(model, cloud, rng);

    Tensor<T> logits({n, model.cfg.n_class});
    std::vector<double> best(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<char> assigned(static_cast<size_t>(n), 0);
    int64_t cursor = 0;
    const int64_t inner = (chunk + 1) / 2;

    for (;;) {
        while (cursor < n && assigned[static_cast<size_t>(cursor)]) ++cursor;
        if (cursor >= n) break;
        const int64_t center = cursor;
        Crop crop = crop_around(cloud, center, chunk, rng);
        Prng chunk_rng(Prng::derive(kEvalSeed, static_cast<uint64_t>(center)));
        Tensor<T> part = forward_eval(model, crop.cloud, chunk_rng);
        const Vec3& cpos = cloud.pos[static_cast<size_t>(center)];
        for (int64_t r = 0; r < static_cast<int64_t>(crop.source.size()); ++r) {
            const int64_t s = crop.source[static_cast<size_t>(r)];
            const double dist = d2(cpos, cloud.pos[static_cast<size_t>(s)]);
            if (dist < best[static_cast<size_t>(s)]) {
                best[static_cast<size_t>(s)] = dist;
                std::copy(part.ptr() + r * model.cfg.n_class,
                          part.ptr() + (r + 1) * model.cfg.n_class,
                          logits.ptr() + s * model.cfg.n_class);
            }
            // The inner half around the center is final; border points may
            // still be claimed by a closer later chunk.
            if (r < inner) assigned[static_cast<size_t>(s)] = 1;
        }
    }
    return logits;
}

template <class T>
ConfusionMatrix evaluate_area(Model<T>& model, const PointCloud& cloud, int64_t chunk_points) {
    if (!cloud.has_label()) throw DataError("evaluate_area: cloud has no labels");
    Tensor<T> logits = evaluate_full(model, cloud, chunk_points);
    ConfusionMatrix cm(static_cast<int>(model.cfg.n_class));
    accumulate(cm, cloud.label, predict(logits));
    return cm;
}

template <class T>
FoldResult train_one_fold(const AreaSet& areas, const Split& split, const DlaNetConfig& netcfg,
                          const TrainConfig& cfg, uint64_t fold_seed, const std::string& out_dir,
                          const std::string& tag, const std::string& resume_path) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    Model<T> model(netcfg, Prng::derive(fold_seed, 0));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = fold_seed;

    std::vector<const PointCloud*> train_areas;
    for (int i : split.train) train_areas.push_back(&areas.clouds[static_cast<size_t>(i)]);
    Trainer<T> trainer(model, fold_cfg, train_areas);

    int64_t start_epoch = 0;
    if (!resume_path.empty()) {
        const CheckpointMeta meta = load_checkpoint(resume_path, model.store);
        trainer.set_global_step(static_cast<int64_t>(meta.step));
        start_epoch = static_cast<int64_t>(meta.epoch);
    }

    FoldResult result;
    result.log_path = out_dir + "/train_" + tag + ".ndjson";
    std::ofstream log(result.log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot write training log: " + result.log_path);
    auto logger = [&](int64_t epoch, int64_t step, double lr, double loss, double oa) {
        nlohmann::json rec;
        rec["epoch"] = epoch;
        rec["step"] = step;
        rec["lr"] = lr;
        rec["loss"] = loss;
        rec["oa"] = oa;
        log << rec.dump() << "\n";
    };

    result.checkpoint_path = out_dir + "/ckpt_" + tag + ".dlaw";
    for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        trainer.run_epoch(epoch, logger);
        log.flush();
        if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs) {
            CheckpointMeta meta;
            meta.step = static_cast<uint64_t>(trainer.global_step());
            meta.epoch = static_cast<uint64_t>(epoch + 1);
            save_checkpoint(result.checkpoint_path, model.store, meta);
        }
    }

    result.cm = ConfusionMatrix(static_cast<int>(netcfg.n_class));
    for (int i : split.test)
        result.cm.merge(evaluate_area(model, areas.clouds[static_cast<size_t>(i)],
                                      cfg.eval_chunk_points));
    return result;
}

#define DLA_INSTANTIATE_TRAIN(T)                                                          \
    template class Trainer<T>;                                                            \
    template Tensor<T> evaluate_full<T>(Model<T>&, const PointCloud&, int64_t);           \
    template ConfusionMatrix evaluate_area<T>(Model<T>&, const PointCloud&, int64_t);     \
    template FoldResult train_one_fold<T>(const AreaSet&, const Split&, const DlaNetConfig&, \
                                          const TrainConfig&, uint64_t, const std::string&, \
                                          const std::string&, const std::string&);

DLA_INSTANTIATE_TRAIN(float)
DLA_INSTANTIATE_TRAIN(double)

}  // namespace dla
