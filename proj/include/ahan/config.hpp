#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ahan/model.hpp"
#include "ahan/synth.hpp"

namespace ahan {

struct RunOptions {
    std::uint64_t seed = 1234;
    std::size_t eval_max_pairs = 4000;  // 0 = every pair
    std::size_t log_every = 10;
};

struct LoadedConfig {
    AhanConfig ahan;
    SynthConfig synth;
    RunOptions run;
};

/// Every section and key is optional; missing keys keep their defaults, unknown keys are rejected.
/// Errors name the offending key path and the violated constraint.
LoadedConfig parse_config(const std::string& json_text);
LoadedConfig load_config(const std::filesystem::path& path);

/// The effective configuration as JSON, including defaulted keys.
std::string dump_config(const LoadedConfig& config);

}  // namespace ahan
