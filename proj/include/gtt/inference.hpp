#pragma once

// Zero-shot forecasting: per-channel instance normalization of the context,
// left zero padding to the model context, 64-step autoregressive rollout and
// denormalization.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gtt/datapipe.hpp"
#include "gtt/model.hpp"

namespace gtt {

struct RevinStats {
    std::vector<double> mean;
    std::vector<double> std; ///< population std; 0 for a constant channel
    std::vector<std::uint8_t> bypass; ///< channels passed through unchanged (time features)
};

struct RevinOutput {
    std::vector<double> values; ///< [rows x channels]
    RevinStats stats;
};

/// (x - mean) / (std + 1e-8) per channel over all rows. Channels flagged in
/// `bypass` keep their values and get mean 0, std 1.
RevinOutput revin_normalize(std::span<const double> x, std::size_t rows, std::size_t channels,
                            std::span<const std::uint8_t> bypass = {});

/// y * (std + 1e-8) + mean per channel (bypassed channels unchanged).
std::vector<double> revin_denormalize(std::span<const double> y, std::size_t rows, std::size_t channels,
                                      const RevinStats& stats);

/// [rows x channels] -> [length x channels]: leading zero rows, or only the
/// most recent `length` rows when rows > length.
std::vector<double> zero_pad(std::span<const double> x, std::size_t rows, std::size_t channels,
                             std::size_t length = kContextLen);

struct ForecastRequest {
    RawSeries context; ///< values, roles and optional timestamps; no missing values
    std::size_t horizon = kTargetLen;

    /// All channels are targets, no timestamps.
    static ForecastRequest from_values(std::vector<double> values, std::size_t rows, std::size_t channels,
                                       std::size_t horizon);
};

struct ForecastOptions {
    /// Reuse the context statistics for every rollout block. When false each
    /// block renormalizes the real rows of its current window.
    bool keep_original_stats = true;
    /// Packed contexts per model call in forecast_many.
    std::size_t batch_size = 32;
};

struct ForecastResult {
    std::size_t horizon = 0;
    std::size_t targets = 0;
    std::vector<double> predictions; ///< [horizon x targets], original scale
    std::vector<std::string> names;  ///< target channel names
    std::vector<double> mean;        ///< per target channel
    std::vector<double> std;
    std::vector<std::int64_t> timestamps; ///< extrapolated, when the context has timestamps
    std::size_t blocks_used = 0;          ///< ceil(horizon / 64)
    std::size_t forward_calls = 0;

    double at(std::size_t t, std::size_t o) const { return predictions[t * targets + o]; }
};

ForecastResult forecast(const ModelParams<float>& params, const ModelConfig& config, const ForecastRequest& request,
                        const ForecastOptions& options = {});

/// Forecasts several requests, batching their packed contexts into shared model calls.
std::vector<ForecastResult> forecast_many(const ModelParams<float>& params, const ModelConfig& config,
                                          std::span<const ForecastRequest> requests,
                                          const ForecastOptions& options = {});

/// One packed, normalized, zero-padded model input.
struct PackedContext {
    std::vector<float> window; ///< [1024 x 32]
    std::array<std::uint8_t, kSampleChannels> channel_valid{};
    std::size_t data_channels = 0; ///< data channels precede the time features
    std::size_t real_rows = 0;     ///< trailing rows holding context (the rest is padding)
    /// Exact time features for the rolled-out rows [blocks * 64 x 6]; empty
    /// when the context has none or the interval is unknown.
    std::vector<double> future_time_features;
};

/// Autoregressive rollout in the normalized frame. Returns [blocks * 64 x 32]
/// predictions per context; padded channels are zero.
std::vector<std::vector<float>> rollout(const ModelParams<float>& params, const ModelConfig& config,
                                        std::span<const PackedContext> contexts, std::size_t horizon,
                                        const ForecastOptions& options = {}, std::size_t* forward_calls = nullptr);

/// Median spacing of the timestamps; 0 when fewer than two.
std::int64_t infer_interval(std::span<const std::int64_t> timestamps);

struct AffineReport {
    double a = 1.0;
    double b = 0.0;
    /// max |f(a x + b) - (a f(x) + b)| / max(|a f(x) + b|, a * std), std being
    /// the channel's context std, so values near zero are judged on the channel's scale.
    double max_rel_error = 0.0;
    bool passed = false;
};

/// Forecasts x and a * x + b (target and covariate channels) and compares.
AffineReport affine_equivariance_check(const ModelParams<float>& params, const ModelConfig& config,
                                       const ForecastRequest& request, double a, double b,
                                       double tolerance = 1e-4);

} // namespace gtt
