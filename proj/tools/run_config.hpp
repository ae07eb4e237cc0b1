#pragma once

// Configuration of the gtt command line: one JSON file plus flag overrides.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gtt/datapipe.hpp"
#include "gtt/evaluation.hpp"
#include "gtt/experiments.hpp"
#include "gtt/model.hpp"
#include "gtt/synthetic.hpp"
#include "gtt/training.hpp"

namespace gtt::cli {

struct DataConfig {
    std::vector<std::filesystem::path> inputs; ///< CSV files
    std::optional<std::filesystem::path> roles; ///< column-role sidecar applied to every input
    std::optional<std::filesystem::path> corpus; ///< prepared corpus directory
};

struct ForecastConfig {
    std::size_t horizon = 64;
    bool keep_original_stats = true;
    std::size_t batch_size = 32;
};

/// Flag values; set fields win over the file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::filesystem::path> out;
    std::optional<std::string> preset;
    std::optional<std::size_t> horizon; ///< forecast horizon and the single evaluation horizon
    std::optional<std::size_t> context_len; ///< evaluation context
    std::optional<std::string> protocol;
    std::vector<std::filesystem::path> inputs;
    std::optional<std::filesystem::path> roles;
    std::optional<std::filesystem::path> corpus;
    std::optional<std::filesystem::path> checkpoint;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out = "out";
    int threads = 0; ///< 0: all cores
    DataConfig data;
    std::string preset = "micro";
    ModelConfig model;
    TrainConfig train;
    CorpusConfig corpus;
    FineTuneConfig finetune;
    EvalSpec eval;
    ForecastConfig forecast;
    SyntheticSpec synth;
    std::optional<std::filesystem::path> checkpoint;
    TrainabilityConfig trainability;
    ScalingProbeConfig scaling_probe;

    /// Materializes every default. Unknown keys and per-section seeds (the
    /// top-level seed is the only one) raise ConfigError.
    static RunConfig resolve(const nlohmann::json& file, const Overrides& flags);
    static nlohmann::json load_file(const std::filesystem::path& path);

    /// The effective config restricted to the named sections (all when empty).
    nlohmann::json to_json(const std::vector<std::string>& sections = {}) const;
};

} // namespace gtt::cli
