#pragma once

// Rolling-origin evaluation with pooled point metrics per horizon plus the
// mean over horizons, and naive baselines under the same protocol.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gtt/datapipe.hpp"
#include "gtt/inference.hpp"

namespace gtt {

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
    std::optional<double> nrmse; ///< sqrt(MSE) / mean|y|; absent when sum|y| = 0
    std::optional<double> wape;  ///< sum|y - yhat| / sum|y|; absent when sum|y| = 0
    std::size_t count = 0;
};

/// Pools errors over any number of windows and channels.
class MetricAccumulator {
public:
    void add(double y, double yhat);
    void add(std::span<const double> y, std::span<const double> yhat);
    Metrics result() const;

private:
    double sq_ = 0.0;
    double abs_err_ = 0.0;
    double abs_y_ = 0.0;
    std::size_t n_ = 0;
};

Metrics compute_metrics(std::span<const double> y, std::span<const double> yhat);

struct MetricTable {
    std::vector<std::size_t> horizons;
    std::vector<Metrics> rows; ///< one per horizon
    Metrics mean;              ///< arithmetic mean of the rows (absent fields stay absent)
    std::size_t windows = 0;
    /// Optional per-window MAE [windows x horizons].
    std::vector<double> window_mae;

    std::string to_csv() const;
    std::string to_text(const std::string& title = {}) const;
    nlohmann::json to_json() const;
};

/// Arithmetic mean of per-horizon rows; a field is present only when present in every row.
Metrics mean_row(std::span<const Metrics> rows);

struct EvalSpec {
    std::size_t context_len = 1024;
    std::vector<std::size_t> horizons{96, 192, 336, 720};
    /// Target channel names; empty means every channel whose role is target.
    std::vector<std::string> targets;
    /// Explicit train/val/test row counts; when absent the fractions apply.
    std::optional<std::array<std::size_t, 3>> split_lengths;
    std::array<double, 3> split_fractions{0.7, 0.1, 0.2};
    /// Score in the space standardized by the train split's per-channel mean/std.
    bool standardized = false;
    bool keep_window_errors = false;
    std::size_t batch_size = 32; ///< windows per model call

    static EvalSpec standard();
    static EvalSpec ili(); ///< context 128, horizons {24, 36, 48, 60}
    static EvalSpec from_json(const nlohmann::json& j, EvalSpec base = standard());
    nlohmann::json to_json() const;
    void validate() const;
    std::size_t max_horizon() const;
};

struct SplitBounds {
    Range train;
    Range val;
    Range test;
};

SplitBounds eval_splits(std::size_t length, const EvalSpec& spec);

/// Context starts s in the test range with [s, s + context + max_horizon) inside it, stride 1.
std::vector<std::size_t> eval_window_starts(const Range& test, std::size_t context_len, std::size_t max_horizon);

/// Forecasts `horizon` rows after each context [s, s + context_len) of `series`
/// (targets first); returns one [horizon x targets] block per start.
using WindowForecaster = std::function<std::vector<std::vector<double>>(
    const RawSeries& series, std::span<const std::size_t> starts, std::size_t context_len, std::size_t horizon)>;

/// The protocol: forecast once at the largest horizon per window, score each
/// horizon on its prefix, pool over windows and target channels.
MetricTable rolling_eval_with(const RawSeries& series, const EvalSpec& spec, const WindowForecaster& forecaster);

MetricTable rolling_eval(const ModelParams<float>& params, const ModelConfig& config, const RawSeries& series,
                         const EvalSpec& spec, const ForecastOptions& options = {});

/// Repeats the last context value.
MetricTable naive_last_value(const RawSeries& series, const EvalSpec& spec);

/// Repeats the last `period` context values.
MetricTable naive_seasonal(const RawSeries& series, const EvalSpec& spec, std::size_t period);

} // namespace gtt
