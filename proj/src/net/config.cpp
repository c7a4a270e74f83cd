#include "dla/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dla {

using nlohmann::json;

RunConfig default_run_config() { return RunConfig{}; }

namespace {

template <class V>
void take(const json& j, std::set<std::string>& seen, const char* key, V& out) {
    if (!j.contains(key)) return;
    seen.insert(key);
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

void take_enum(const json& j, std::set<std::string>& seen, const char* key,
               const std::function<void(const std::string&)>& set) {
    if (!j.contains(key)) return;
    seen.insert(key);
    if (!j.at(key).is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
    set(j.at(key).get<std::string>());
}

void take_onoff(const json& j, std::set<std::string>& seen, const char* key, bool& out) {
    if (!j.contains(key)) return;
    seen.insert(key);
    const json& v = j.at(key);
    if (v.is_boolean()) {
        out = v.get<bool>();
    } else if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "on")
            out = true;
        else if (s == "off")
            out = false;
        else
            throw ConfigError(std::string("config key '") + key + "' must be on/off, got '" + s + "'");
    } else {
        throw ConfigError(std::string("config key '") + key + "' must be a bool or on/off");
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");

    RunConfig cfg;
    std::set<std::string> seen;

    take(j, seen, "d_in", cfg.net.d_in);
    take(j, seen, "n_class", cfg.net.n_class);
    take(j, seen, "encoder_dims", cfg.net.encoder_dims);
    take(j, seen, "decimation", cfg.net.decimation);
    take(j, seen, "head_dims", cfg.net.head_dims);
    take(j, seen, "dropout_p", cfg.net.dropout_p);
    take_onoff(j, seen, "use_rgb", cfg.net.use_rgb);

    take_enum(j, seen, "pe_variant",
              [&](const std::string& s) { cfg.net.dla.pe_variant = pe_variant_from_string(s); });
    take_enum(j, seen, "sa_pe_placement",
              [&](const std::string& s) { cfg.net.dla.sa_pe = sa_pe_placement_from_string(s); });
    take_enum(j, seen, "ap_mode",
              [&](const std::string& s) { cfg.net.dla.ap_mode = ap_mode_from_string(s); });
    take_enum(j, seen, "sa_aggregate",
              [&](const std::string& s) { cfg.net.dla.sa_aggregate = sa_aggregate_from_string(s); });
    take_onoff(j, seen, "pe_bn", cfg.net.dla.pe_bn);
    take_onoff(j, seen, "sa_bn", cfg.net.dla.sa_bn);

    take(j, seen, "epochs", cfg.train.epochs);
    take(j, seen, "batch_size", cfg.train.batch_size);
    take(j, seen, "lr0", cfg.train.lr0);
    take(j, seen, "lr_decay", cfg.train.lr_decay);
    take(j, seen, "points_per_sample", cfg.train.points_per_sample);
    take(j, seen, "seed", cfg.train.seed);
    take(j, seen, "precision", cfg.train.precision);
    take(j, seen, "steps_per_epoch", cfg.train.steps_per_epoch);
    take(j, seen, "eval_chunk_points", cfg.train.eval_chunk_points);
    take(j, seen, "checkpoint_every", cfg.train.checkpoint_every);

    // Shared between the sampler and the architecture.
    int64_t k = cfg.net.k_neighbors;
    take(j, seen, "k_neighbors", k);
    cfg.net.k_neighbors = k;
    cfg.train.k_neighbors = k;

    for (auto it = j.begin(); it != j.end(); ++it)
        if (!seen.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");

    // d_in follows use_rgb unless explicitly overridden.
    if (!seen.count("d_in")) cfg.net.d_in = cfg.net.use_rgb ? 6 : 3;
    cfg.net.validate();
    cfg.train.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
    json j;
    j["d_in"] = cfg.net.d_in;
    j["n_class"] = cfg.net.n_class;
    j["encoder_dims"] = cfg.net.encoder_dims;
    j["decimation"] = cfg.net.decimation;
    j["k_neighbors"] = cfg.net.k_neighbors;
    j["head_dims"] = cfg.net.head_dims;
    j["dropout_p"] = cfg.net.dropout_p;
    j["use_rgb"] = cfg.net.use_rgb;
    j["pe_variant"] = to_string(cfg.net.dla.pe_variant);
    j["pe_bn"] = cfg.net.dla.pe_bn;
    j["sa_pe_placement"] = to_string(cfg.net.dla.sa_pe);
    j["sa_bn"] = cfg.net.dla.sa_bn;
    j["sa_aggregate"] = to_string(cfg.net.dla.sa_aggregate);
    j["ap_mode"] = to_string(cfg.net.dla.ap_mode);
    j["epochs"] = cfg.train.epochs;
    j["batch_size"] = cfg.train.batch_size;
    j["lr0"] = cfg.train.lr0;
    j["lr_decay"] = cfg.train.lr_decay;
    j["points_per_sample"] = cfg.train.points_per_sample;
    j["seed"] = cfg.train.seed;
    j["precision"] = cfg.train.precision;
    j["steps_per_epoch"] = cfg.train.steps_per_epoch;
    j["eval_chunk_points"] = cfg.train.eval_chunk_points;
    j["checkpoint_every"] = cfg.train.checkpoint_every;
    return j.dump(2);
}

}  // namespace dla
