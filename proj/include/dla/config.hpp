#pragma once

#include <string>

#include "dla/network.hpp"
#include "dla/training.hpp"

namespace dla {

// One flat JSON document configures both the architecture and the run.
// Keys match the field names; unknown keys are rejected.
struct RunConfig {
    DlaNetConfig net;
    TrainConfig train;
};

RunConfig default_run_config();
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string dump_run_config(const RunConfig& cfg);  // every field materialized

}  // namespace dla
