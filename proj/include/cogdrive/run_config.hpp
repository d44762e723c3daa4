#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "cogdrive/metrics.hpp"
#include "cogdrive/planner.hpp"
#include "cogdrive/prednet.hpp"
#include "cogdrive/scene.hpp"
#include "cogdrive/simloop.hpp"
#include "cogdrive/training.hpp"

namespace cogdrive {

/// Every module configuration in one place, merged defaults <- file <- flags.
struct RunConfig {
    GeneratorConfig generator;
    NetConfig net;
    TrainConfig train;
    PlannerConfig planner;
    SimConfig sim;
    MetricsOptions metrics;
    std::uint64_t seed = 0;
    int threads = 1;
    bool strict = false;

    void validate() const;
};

inline constexpr std::string_view kConfigFormat = "cogdrive-config/1";

std::string generator_config_to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(std::string_view text);

std::string run_config_to_json(const RunConfig& config);
/// Applies a `cogdrive-config/1` document on top of `base`: every section is
/// merged key by key, so a file only lists what it changes. Unknown keys at
/// any level are rejected and the result is validated.
RunConfig merge_run_config(const RunConfig& base, std::string_view text);

}  // namespace cogdrive
