#pragma once

// Desk-scale experiments on synthetic data: the sine trainability run and the
// model-width scaling probe.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gtt/evaluation.hpp"
#include "gtt/synthetic.hpp"
#include "gtt/training.hpp"

namespace gtt {

/// Generates the series of every part, builds a corpus in `dir` through the
/// regular pipeline and loads it. The train split is cut to `train_limit`
/// samples (0: keep all).
struct SyntheticCorpus {
    SampleSet train;
    SampleSet val;
    CorpusManifest manifest;
};

SyntheticCorpus build_synthetic_corpus(const std::vector<SyntheticSpec>& parts, const CorpusConfig& corpus,
                                       std::uint64_t seed, std::size_t train_limit, const std::filesystem::path& dir);

/// One RawSeries of a single-channel sine with the given period.
RawSeries sine_series(std::size_t length, double period, double amplitude, double phase, const std::string& id);

struct TrainabilityConfig {
    ModelConfig model;
    TrainConfig train;
    std::vector<SyntheticSpec> corpus_parts;
    CorpusConfig corpus;
    std::size_t samples = 512;
    std::size_t eval_every = 250;
    double target_mae = 0.05;
    /// Zero-shot test series: a sine whose period lies outside every training band.
    double unseen_period = 48.0;
    std::size_t unseen_windows = 200;
    EvalSpec eval;
    std::uint64_t seed = 0;

    static TrainabilityConfig defaults();
    static TrainabilityConfig from_json(const nlohmann::json& j, TrainabilityConfig base = defaults());
    nlohmann::json to_json() const;
};

struct TrainabilityResult {
    std::size_t steps = 0;
    double train_mae = 0.0;
    bool reached = false;
    std::vector<std::pair<std::size_t, double>> curve; ///< (step, train MAE)
    std::vector<StepRecord> step_log;
    MetricTable model_table;
    MetricTable naive_table;
    double improvement = 0.0; ///< 1 - model MAE / naive MAE on the mean row
    double seconds = 0.0;
};

TrainabilityResult run_trainability(const TrainabilityConfig& config, const std::filesystem::path& work_dir);

struct ScalingProbeConfig {
    ModelConfig base;
    std::size_t width_factor = 2; ///< embed and MLP dims multiplied, head count kept
    /// Divide the wider model's learning rate by width_factor.
    bool scale_lr = false;
    TrainConfig train;
    std::vector<SyntheticSpec> corpus_parts;
    CorpusConfig corpus;
    std::size_t samples = 512;
    /// Held-out series drawn from the training generators with a different seed.
    std::size_t heldout_series = 4;
    std::size_t heldout_windows = 64; ///< rolling windows per held-out series
    EvalSpec eval;
    std::uint64_t seed = 0;

    static ScalingProbeConfig defaults();
    static ScalingProbeConfig from_json(const nlohmann::json& j, ScalingProbeConfig base = defaults());
    nlohmann::json to_json() const;
};

struct ProbeRow {
    std::string name;
    ModelConfig model;
    std::size_t params = 0;
    double lr = 0.0;
    std::size_t steps = 0;
    double train_mae = 0.0;
    std::optional<double> val_mae; ///< absent when the corpus has no validation samples
    double heldout_mae = 0.0; ///< mean-row MAE of the rolling evaluation
    double seconds = 0.0;
};

struct ScalingProbeResult {
    std::vector<ProbeRow> rows;
    std::string to_text() const;
    std::string to_csv() const;
};

ScalingProbeResult run_scaling_probe(const ScalingProbeConfig& config, const std::filesystem::path& out_dir);

} // namespace gtt
