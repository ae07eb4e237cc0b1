#include "gtt/inference.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "gtt/errors.hpp"

namespace gtt {

RevinOutput revin_normalize(std::span<const double> x, std::size_t rows, std::size_t channels,
                            std::span<const std::uint8_t> bypass)
{
    if (rows == 0 || x.size() != rows * channels) {
        throw DimensionError("revin_normalize: expected " + std::to_string(rows) + " x " + std::to_string(channels) +
                             " values, got " + std::to_string(x.size()));
    }
    if (!bypass.empty() && bypass.size() != channels) {
        throw DimensionError("revin_normalize: bypass mask needs one flag per channel");
    }
    RevinOutput out;
    out.values.resize(x.size());
    out.stats.mean.assign(channels, 0.0);
    out.stats.std.assign(channels, 1.0);
    out.stats.bypass.assign(channels, 0);
    for (std::size_t c = 0; c < channels; ++c) {
        if (!bypass.empty() && bypass[c]) {
            out.stats.bypass[c] = 1;
            for (std::size_t t = 0; t < rows; ++t) {
                out.values[t * channels + c] = x[t * channels + c];
            }
            continue;
        }
        double mean = 0.0;
        for (std::size_t t = 0; t < rows; ++t) {
            mean += x[t * channels + c];
        }
        mean /= static_cast<double>(rows);
        double var = 0.0;
        for (std::size_t t = 0; t < rows; ++t) {
            const double d = x[t * channels + c] - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / static_cast<double>(rows));
        out.stats.mean[c] = mean;
        out.stats.std[c] = sd;
        for (std::size_t t = 0; t < rows; ++t) {
            out.values[t * channels + c] = (x[t * channels + c] - mean) / (sd + kNormEpsilon);
        }
    }
    return out;
}

std::vector<double> revin_denormalize(std::span<const double> y, std::size_t rows, std::size_t channels,
                                      const RevinStats& stats)
{
    if (y.size() != rows * channels || stats.mean.size() != channels || stats.std.size() != channels) {
        throw DimensionError("revin_denormalize: shape does not match the statistics");
    }
    std::vector<double> out(y.size());
    for (std::size_t t = 0; t < rows; ++t) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double v = y[t * channels + c];
            const bool pass = !stats.bypass.empty() && stats.bypass[c];
            out[t * channels + c] = pass ? v : v * (stats.std[c] + kNormEpsilon) + stats.mean[c];
        }
    }
    return out;
}

std::vector<double> zero_pad(std::span<const double> x, std::size_t rows, std::size_t channels, std::size_t length)
{
    if (x.size() != rows * channels) {
        throw DimensionError("zero_pad: value count does not match rows x channels");
    }
    std::vector<double> out(length * channels, 0.0);
    if (rows >= length) {
        std::copy(x.end() - static_cast<std::ptrdiff_t>(length * channels), x.end(), out.begin());
    } else {
        std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>((length - rows) * channels));
    }
    return out;
}

ForecastRequest ForecastRequest::from_values(std::vector<double> values, std::size_t rows, std::size_t channels,
                                             std::size_t horizon)
{
    ForecastRequest r;
    r.context.id = "context";
    r.context.length = rows;
    r.context.channels = channels;
    r.context.values = std::move(values);
    r.context.roles.assign(channels, ChannelRole::target);
    for (std::size_t c = 0; c < channels; ++c) {
        r.context.names.push_back("c" + std::to_string(c));
    }
    r.horizon = horizon;
    return r;
}

std::int64_t infer_interval(std::span<const std::int64_t> timestamps)
{
    if (timestamps.size() < 2) {
        return 0;
    }
    std::vector<std::int64_t> gaps(timestamps.size() - 1);
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        gaps[i - 1] = timestamps[i] - timestamps[i - 1];
    }
    const auto mid = gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2);
    std::nth_element(gaps.begin(), mid, gaps.end());
    return *mid;
}

namespace {

void check_model(const ModelConfig& config)
{
    config.validate();
    if (config.context_len != kContextLen || config.patch_size != kTargetLen || config.max_channels != kSampleChannels) {
        throw ConfigError("forecasting expects a model with context 1024, patch 64 and 32 channels");
    }
}

std::size_t block_count(std::size_t horizon)
{
    return (horizon + kTargetLen - 1) / kTargetLen;
}

// Renormalizes the real rows of a window's data channels in place and returns
// the (mean, std) used, so predictions can be mapped back.
std::vector<std::pair<double, double>> renormalize(std::vector<float>& w, const PackedContext& ctx,
                                                   std::size_t real_rows)
{
    std::vector<std::pair<double, double>> stats(kSampleChannels, {0.0, 1.0});
    const std::size_t first = kContextLen - real_rows;
    for (std::size_t c = 0; c < ctx.data_channels; ++c) {
        double mean = 0.0;
        for (std::size_t t = first; t < kContextLen; ++t) {
            mean += w[t * kSampleChannels + c];
        }
        mean /= static_cast<double>(real_rows);
        double var = 0.0;
        for (std::size_t t = first; t < kContextLen; ++t) {
            const double d = w[t * kSampleChannels + c] - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / static_cast<double>(real_rows));
        for (std::size_t t = first; t < kContextLen; ++t) {
            float& v = w[t * kSampleChannels + c];
            v = static_cast<float>((v - mean) / (sd + kNormEpsilon));
        }
        stats[c] = {mean, sd};
    }
    return stats;
}

} // namespace

std::vector<std::vector<float>> rollout(const ModelParams<float>& params, const ModelConfig& config,
                                        std::span<const PackedContext> contexts, std::size_t horizon,
                                        const ForecastOptions& options, std::size_t* forward_calls)
{
    check_model(config);
    if (horizon == 0) {
        throw ConfigError("forecast horizon must be at least 1");
    }
    const std::size_t blocks = block_count(horizon);
    const std::size_t batch = std::max<std::size_t>(options.batch_size, 1);
    constexpr std::size_t kWindow = kContextLen * kSampleChannels;
    constexpr std::size_t kBlock = kTargetLen * kSampleChannels;
    for (const auto& ctx : contexts) {
        if (ctx.window.size() != kWindow || ctx.real_rows == 0 || ctx.real_rows > kContextLen) {
            throw DimensionError("rollout: packed context must be 1024 x 32 with 1..1024 real rows");
        }
        if (!ctx.future_time_features.empty() && ctx.future_time_features.size() < blocks * kTargetLen * kTimeFeatures) {
            throw DimensionError("rollout: future time features do not cover the horizon");
        }
    }

    std::vector<std::vector<float>> out(contexts.size(), std::vector<float>(blocks * kBlock, 0.0f));
    std::size_t calls = 0;
    for (std::size_t begin = 0; begin < contexts.size(); begin += batch) {
        const std::size_t n = std::min(batch, contexts.size() - begin);
        std::vector<std::vector<float>> windows(n);
        std::vector<std::size_t> real(n);
        for (std::size_t i = 0; i < n; ++i) {
            windows[i] = contexts[begin + i].window;
            real[i] = contexts[begin + i].real_rows;
        }
        for (std::size_t b = 0; b < blocks; ++b) {
            std::vector<float> input(n * kWindow);
            std::vector<std::vector<std::pair<double, double>>> block_stats(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<float> w = windows[i];
                if (!options.keep_original_stats) {
                    block_stats[i] = renormalize(w, contexts[begin + i], real[i]);
                }
                std::copy(w.begin(), w.end(), input.begin() + static_cast<std::ptrdiff_t>(i * kWindow));
            }
            Tape<float> tape(false);
            const auto y = forward(tape, Tensor<float>({n, kContextLen, kSampleChannels}, std::move(input)),
                                   kSampleChannels, params, config);
            ++calls;
            const auto pred = y.all.values();
            for (std::size_t i = 0; i < n; ++i) {
                const PackedContext& ctx = contexts[begin + i];
                std::vector<float> rows(pred.begin() + static_cast<std::ptrdiff_t>(i * kBlock),
                                        pred.begin() + static_cast<std::ptrdiff_t>((i + 1) * kBlock));
                for (std::size_t t = 0; t < kTargetLen; ++t) {
                    float* row = rows.data() + t * kSampleChannels;
                    for (std::size_t c = 0; c < kSampleChannels; ++c) {
                        if (!ctx.channel_valid[c]) {
                            row[c] = 0.0f;
                        } else if (!options.keep_original_stats && c < ctx.data_channels) {
                            const auto [m, s] = block_stats[i][c];
                            row[c] = static_cast<float>(row[c] * (s + kNormEpsilon) + m);
                        }
                    }
                    if (!ctx.future_time_features.empty()) {
                        const double* tf = ctx.future_time_features.data() + (b * kTargetLen + t) * kTimeFeatures;
                        for (std::size_t k = 0; k < kTimeFeatures; ++k) {
                            row[ctx.data_channels + k] = static_cast<float>(tf[k]);
                        }
                    }
                }
                std::copy(rows.begin(), rows.end(), out[begin + i].begin() + static_cast<std::ptrdiff_t>(b * kBlock));
                // Slide: drop the oldest 64 rows, append the block.
                auto& w = windows[i];
                std::copy(w.begin() + kBlock, w.end(), w.begin());
                std::copy(rows.begin(), rows.end(), w.end() - kBlock);
                real[i] = std::min(kContextLen, real[i] + kTargetLen);
            }
        }
    }
    if (forward_calls) {
        *forward_calls = calls;
    }
    return out;
}

namespace {

struct Prepared {
    std::vector<PackedContext> groups; ///< groups holding at least one target
    std::vector<std::size_t> group_first;
    RevinStats stats; ///< per data channel, targets first
    ForecastResult result; ///< metadata filled in, predictions empty
};

Prepared prepare(const ForecastRequest& request)
{
    request.context.validate();
    if (request.horizon == 0) {
        throw ConfigError("forecast horizon must be at least 1");
    }
    const std::size_t targets = request.context.target_count();
    if (targets == 0) {
        throw ConfigError("forecast request has no target channel");
    }
    for (double v : request.context.values) {
        if (!std::isfinite(v)) {
            throw DataError("forecast context contains a missing or non-finite value");
        }
    }
    RawSeries s = request.context.targets_first();
    const std::size_t channels = s.channels;
    std::size_t rows = s.length;
    if (rows == 0) {
        throw DataError("forecast context is empty");
    }
    if (rows > kContextLen) {
        spdlog::warn("context of {} rows truncated to the most recent {}", rows, kContextLen);
        const std::size_t drop = rows - kContextLen;
        s.values.erase(s.values.begin(), s.values.begin() + static_cast<std::ptrdiff_t>(drop * channels));
        if (s.has_timestamps()) {
            s.timestamps.erase(s.timestamps.begin(), s.timestamps.begin() + static_cast<std::ptrdiff_t>(drop));
        }
        rows = kContextLen;
        s.length = rows;
    }

    Prepared p;
    RevinOutput norm = revin_normalize(s.values, rows, channels);
    p.stats = norm.stats;

    const std::size_t blocks = block_count(request.horizon);
    std::vector<double> tf;
    std::vector<double> future_tf;
    if (s.has_timestamps()) {
        tf = encode_time_features(s.timestamps);
        const std::int64_t step = infer_interval(s.timestamps);
        if (step > 0) {
            std::vector<std::int64_t> future(blocks * kTargetLen);
            for (std::size_t k = 0; k < future.size(); ++k) {
                future[k] = s.timestamps.back() + static_cast<std::int64_t>(k + 1) * step;
            }
            future_tf = encode_time_features(future);
            p.result.timestamps.assign(future.begin(), future.begin() + static_cast<std::ptrdiff_t>(request.horizon));
        } else {
            spdlog::warn("cannot infer the sampling interval from one timestamp; rolled time features are predicted");
        }
    }

    for (const auto& group : pack_channels(norm.values, rows, channels, tf)) {
        if (group.first_source_channel >= targets) {
            break; // targets come first, so later groups hold covariates only
        }
        PackedContext ctx;
        const auto padded = zero_pad(group.values, rows, kSampleChannels);
        ctx.window.assign(padded.begin(), padded.end());
        ctx.channel_valid = group.channel_valid;
        ctx.data_channels = group.data_channels;
        ctx.real_rows = rows;
        ctx.future_time_features = future_tf;
        p.groups.push_back(std::move(ctx));
        p.group_first.push_back(group.first_source_channel);
    }

    ForecastResult& r = p.result;
    r.horizon = request.horizon;
    r.targets = targets;
    r.names.assign(s.names.begin(), s.names.begin() + static_cast<std::ptrdiff_t>(targets));
    r.mean.assign(p.stats.mean.begin(), p.stats.mean.begin() + static_cast<std::ptrdiff_t>(targets));
    r.std.assign(p.stats.std.begin(), p.stats.std.begin() + static_cast<std::ptrdiff_t>(targets));
    r.blocks_used = blocks;
    return p;
}

void finish(Prepared& p, std::span<const std::vector<float>> preds)
{
    ForecastResult& r = p.result;
    r.predictions.assign(r.horizon * r.targets, 0.0);
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
        const std::size_t first = p.group_first[g];
        const std::size_t last = std::min(r.targets, first + p.groups[g].data_channels);
        for (std::size_t o = first; o < last; ++o) {
            const double scale = r.std[o] + kNormEpsilon;
            for (std::size_t t = 0; t < r.horizon; ++t) {
                const double y = preds[g][t * kSampleChannels + (o - first)];
                r.predictions[t * r.targets + o] = y * scale + r.mean[o];
            }
        }
    }
    for (double v : r.predictions) {
        if (!std::isfinite(v)) {
            throw NonFiniteError("forecast produced a non-finite value");
        }
    }
}

} // namespace

ForecastResult forecast(const ModelParams<float>& params, const ModelConfig& config, const ForecastRequest& request,
                        const ForecastOptions& options)
{
    return forecast_many(params, config, std::span(&request, 1), options).front();
}

std::vector<ForecastResult> forecast_many(const ModelParams<float>& params, const ModelConfig& config,
                                          std::span<const ForecastRequest> requests, const ForecastOptions& options)
{
    check_model(config);
    std::vector<Prepared> prepared;
    prepared.reserve(requests.size());
    for (const auto& r : requests) {
        prepared.push_back(prepare(r));
    }
    // Requests sharing a horizon are rolled out together.
    std::vector<ForecastResult> results(requests.size());
    std::vector<bool> done(requests.size(), false);
    for (std::size_t i = 0; i < requests.size(); ++i) {
        if (done[i]) {
            continue;
        }
        const std::size_t horizon = requests[i].horizon;
        std::vector<std::size_t> members;
        std::vector<PackedContext> contexts;
        for (std::size_t j = i; j < requests.size(); ++j) {
            if (!done[j] && requests[j].horizon == horizon) {
                members.push_back(j);
                contexts.insert(contexts.end(), prepared[j].groups.begin(), prepared[j].groups.end());
                done[j] = true;
            }
        }
        std::size_t calls = 0;
        const auto preds = rollout(params, config, contexts, horizon, options, &calls);
        std::size_t offset = 0;
        for (std::size_t j : members) {
            Prepared& p = prepared[j];
            finish(p, std::span(preds).subspan(offset, p.groups.size()));
            offset += p.groups.size();
            p.result.forward_calls = calls;
            results[j] = std::move(p.result);
        }
    }
    return results;
}

AffineReport affine_equivariance_check(const ModelParams<float>& params, const ModelConfig& config,
                                       const ForecastRequest& request, double a, double b, double tolerance)
{
    if (!(a > 0.0)) {
        throw ConfigError("affine_equivariance_check needs a > 0");
    }
    ForecastRequest shifted = request;
    for (double& v : shifted.context.values) {
        v = a * v + b;
    }
    const ForecastResult base = forecast(params, config, request);
    const ForecastResult moved = forecast(params, config, shifted);
    AffineReport report;
    report.a = a;
    report.b = b;
    for (std::size_t t = 0; t < base.horizon; ++t) {
        for (std::size_t o = 0; o < base.targets; ++o) {
            const double expected = a * base.at(t, o) + b;
            const double denom = std::max(std::fabs(expected), a * (base.std[o] + kNormEpsilon));
            report.max_rel_error = std::max(report.max_rel_error, std::fabs(moved.at(t, o) - expected) / denom);
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    return report;
}

} // namespace gtt
