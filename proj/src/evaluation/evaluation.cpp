#include "gtt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "gtt/errors.hpp"

namespace gtt {

void MetricAccumulator::add(double y, double yhat)
{
    const double e = y - yhat;
    sq_ += e * e;
    abs_err_ += std::fabs(e);
    abs_y_ += std::fabs(y);
    ++n_;
}

void MetricAccumulator::add(std::span<const double> y, std::span<const double> yhat)
{
    if (y.size() != yhat.size()) {
        throw DimensionError("metrics: " + std::to_string(y.size()) + " targets vs " + std::to_string(yhat.size()) +
                             " predictions");
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        add(y[i], yhat[i]);
    }
}

Metrics MetricAccumulator::result() const
{
    if (n_ == 0) {
        throw DataError("metrics over zero points");
    }
    Metrics m;
    const auto n = static_cast<double>(n_);
    m.count = n_;
    m.mse = sq_ / n;
    m.mae = abs_err_ / n;
    if (abs_y_ > 0.0) {
        m.nrmse = std::sqrt(m.mse) / (abs_y_ / n);
        m.wape = abs_err_ / abs_y_;
    }
    return m;
}

Metrics compute_metrics(std::span<const double> y, std::span<const double> yhat)
{
    MetricAccumulator acc;
    acc.add(y, yhat);
    return acc.result();
}

Metrics mean_row(std::span<const Metrics> rows)
{
    if (rows.empty()) {
        throw DataError("mean of zero metric rows");
    }
    Metrics m;
    bool nrmse = true;
    bool wape = true;
    double nrmse_sum = 0.0;
    double wape_sum = 0.0;
    for (const auto& r : rows) {
        m.mse += r.mse;
        m.mae += r.mae;
        m.count += r.count;
        nrmse = nrmse && r.nrmse.has_value();
        wape = wape && r.wape.has_value();
        nrmse_sum += r.nrmse.value_or(0.0);
        wape_sum += r.wape.value_or(0.0);
    }
    const auto n = static_cast<double>(rows.size());
    m.mse /= n;
    m.mae /= n;
    if (nrmse) m.nrmse = nrmse_sum / n;
    if (wape) m.wape = wape_sum / n;
    return m;
}

namespace {

std::string optional_field(const std::optional<double>& v, const char* absent)
{
    return v ? fmt::format("{:.6g}", *v) : absent;
}

nlohmann::json optional_json(const std::optional<double>& v)
{
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json metrics_json(const Metrics& m)
{
    return {{"mse", m.mse}, {"mae", m.mae}, {"nrmse", optional_json(m.nrmse)}, {"wape", optional_json(m.wape)},
            {"count", m.count}};
}

} // namespace

std::string MetricTable::to_csv() const
{
    std::string out = "horizon,mse,mae,nrmse,wape\n";
    auto line = [&](const std::string& label, const Metrics& m) {
        out += fmt::format("{},{},{},{},{}\n", label, m.mse, m.mae,
                           m.nrmse ? fmt::format("{}", *m.nrmse) : "", m.wape ? fmt::format("{}", *m.wape) : "");
    };
    for (std::size_t i = 0; i < rows.size(); ++i) {
        line(std::to_string(horizons[i]), rows[i]);
    }
    line("mean", mean);
    return out;
}

std::string MetricTable::to_text(const std::string& title) const
{
    std::string out;
    if (!title.empty()) {
        out += title + "\n";
    }
    out += fmt::format("{:>8} {:>12} {:>12} {:>12} {:>12}\n", "horizon", "MSE", "MAE", "NRMSE", "WAPE");
    auto line = [&](const std::string& label, const Metrics& m) {
        out += fmt::format("{:>8} {:>12.6g} {:>12.6g} {:>12} {:>12}\n", label, m.mse, m.mae,
                           optional_field(m.nrmse, "-"), optional_field(m.wape, "-"));
    };
    for (std::size_t i = 0; i < rows.size(); ++i) {
        line(std::to_string(horizons[i]), rows[i]);
    }
    line("mean", mean);
    out += fmt::format("({} windows)\n", windows);
    return out;
}

nlohmann::json MetricTable::to_json() const
{
    nlohmann::json j;
    j["windows"] = windows;
    j["rows"] = nlohmann::json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto r = metrics_json(rows[i]);
        r["horizon"] = horizons[i];
        j["rows"].push_back(r);
    }
    j["mean"] = metrics_json(mean);
    return j;
}

EvalSpec EvalSpec::standard()
{
    return EvalSpec{};
}

EvalSpec EvalSpec::ili()
{
    EvalSpec s;
    s.context_len = 128;
    s.horizons = {24, 36, 48, 60};
    return s;
}

EvalSpec EvalSpec::from_json(const nlohmann::json& j, EvalSpec base)
{
    if (!j.is_object()) {
        throw ConfigError("evaluation config must be a JSON object");
    }
    static const std::set<std::string> known = {"protocol",      "context_len",     "horizons",
                                                "targets",       "split_lengths",   "split_fractions",
                                                "standardized",  "keep_window_errors", "batch_size"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            throw ConfigError("unknown evaluation key '" + key + "'");
        }
    }
    try {
        if (j.contains("protocol")) {
            const std::string p = j.at("protocol");
            if (p == "standard") {
                base = standard();
            } else if (p == "ili") {
                base = ili();
            } else {
                throw ConfigError("unknown evaluation protocol '" + p + "' (standard, ili)");
            }
        }
        if (j.contains("context_len")) base.context_len = j.at("context_len");
        if (j.contains("horizons")) base.horizons = j.at("horizons").get<std::vector<std::size_t>>();
        if (j.contains("targets")) base.targets = j.at("targets").get<std::vector<std::string>>();
        if (j.contains("split_lengths")) {
            if (j.at("split_lengths").is_null()) {
                base.split_lengths.reset();
            } else {
                base.split_lengths = j.at("split_lengths").get<std::array<std::size_t, 3>>();
            }
        }
        if (j.contains("split_fractions")) base.split_fractions = j.at("split_fractions").get<std::array<double, 3>>();
        if (j.contains("standardized")) base.standardized = j.at("standardized");
        if (j.contains("keep_window_errors")) base.keep_window_errors = j.at("keep_window_errors");
        if (j.contains("batch_size")) base.batch_size = j.at("batch_size");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad evaluation config: ") + e.what());
    }
    base.validate();
    return base;
}

nlohmann::json EvalSpec::to_json() const
{
    nlohmann::json j{{"context_len", context_len},   {"horizons", horizons},
                     {"targets", targets},           {"split_fractions", split_fractions},
                     {"standardized", standardized}, {"keep_window_errors", keep_window_errors},
                     {"batch_size", batch_size}};
    j["split_lengths"] = split_lengths ? nlohmann::json(*split_lengths) : nlohmann::json(nullptr);
    return j;
}

void EvalSpec::validate() const
{
    if (context_len == 0) throw ConfigError("context_len must be positive");
    if (horizons.empty()) throw ConfigError("at least one horizon is required");
    for (std::size_t h : horizons) {
        if (h == 0) throw ConfigError("horizons must be positive");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!split_lengths) {
        double sum = 0.0;
        for (double f : split_fractions) {
            if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
            sum += f;
        }
        if (sum > 1.0 + 1e-9) throw ConfigError("split fractions sum to more than 1");
        if (!(split_fractions[2] > 0.0)) throw ConfigError("the test fraction must be positive");
    } else if ((*split_lengths)[2] == 0) {
        throw ConfigError("the test split must be nonempty");
    }
}

std::size_t EvalSpec::max_horizon() const
{
    return *std::max_element(horizons.begin(), horizons.end());
}

SplitBounds eval_splits(std::size_t length, const EvalSpec& spec)
{
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::size_t n_test = 0;
    if (spec.split_lengths) {
        std::tie(n_train, n_val, n_test) =
            std::tuple((*spec.split_lengths)[0], (*spec.split_lengths)[1], (*spec.split_lengths)[2]);
        if (n_train + n_val + n_test > length) {
            throw DataError("split lengths " + std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                            std::to_string(n_test) + " exceed the series length " + std::to_string(length));
        }
    } else {
        const auto& f = spec.split_fractions;
        const auto n = static_cast<double>(length);
        n_train = static_cast<std::size_t>(std::floor(f[0] * n));
        n_val = static_cast<std::size_t>(std::floor(f[1] * n));
        const bool complete = std::fabs(f[0] + f[1] + f[2] - 1.0) < 1e-9;
        n_test = complete ? length - n_train - n_val : static_cast<std::size_t>(std::floor(f[2] * n));
    }
    SplitBounds b;
    b.train = {0, n_train};
    b.val = {n_train, n_train + n_val};
    b.test = {n_train + n_val, n_train + n_val + n_test};
    return b;
}

std::vector<std::size_t> eval_window_starts(const Range& test, std::size_t context_len, std::size_t max_horizon)
{
    std::vector<std::size_t> out;
    const std::size_t span = context_len + max_horizon;
    if (test.size() < span) {
        return out;
    }
    for (std::size_t s = test.begin; s + span <= test.end; ++s) {
        out.push_back(s);
    }
    return out;
}

namespace {

// Applies EvalSpec::targets and moves targets first.
RawSeries arrange(const RawSeries& series, const EvalSpec& spec)
{
    series.validate();
    RawSeries s = series;
    if (!spec.targets.empty()) {
        std::set<std::string> wanted(spec.targets.begin(), spec.targets.end());
        for (std::size_t c = 0; c < s.channels; ++c) {
            const bool hit = wanted.erase(s.names[c]) > 0;
            s.roles[c] = hit ? ChannelRole::target : ChannelRole::covariate;
        }
        if (!wanted.empty()) {
            throw ConfigError("evaluation target '" + *wanted.begin() + "' is not a column of " + series.id);
        }
    }
    if (s.target_count() == 0) {
        throw ConfigError("series " + series.id + " has no target channel to evaluate");
    }
    return s.targets_first();
}

RawSeries slice_rows(const RawSeries& s, std::size_t begin, std::size_t end)
{
    RawSeries out = s;
    out.length = end - begin;
    out.values.assign(s.values.begin() + static_cast<std::ptrdiff_t>(begin * s.channels),
                      s.values.begin() + static_cast<std::ptrdiff_t>(end * s.channels));
    if (s.has_timestamps()) {
        out.timestamps.assign(s.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                              s.timestamps.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

} // namespace

MetricTable rolling_eval_with(const RawSeries& series, const EvalSpec& spec, const WindowForecaster& forecaster)
{
    spec.validate();
    const RawSeries s = arrange(series, spec);
    const std::size_t targets = s.target_count();
    const std::size_t h_max = spec.max_horizon();
    const SplitBounds bounds = eval_splits(s.length, spec);
    const auto starts = eval_window_starts(bounds.test, spec.context_len, h_max);
    if (starts.empty()) {
        throw DataError("test split of " + std::to_string(bounds.test.size()) + " rows is shorter than context " +
                        std::to_string(spec.context_len) + " + horizon " + std::to_string(h_max));
    }
    for (std::size_t t = bounds.test.begin; t < bounds.test.end; ++t) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            if (!std::isfinite(s.at(t, c))) {
                throw DataError("missing value in the test split of " + s.id + " at row " + std::to_string(t));
            }
        }
    }

    std::vector<double> mu(targets, 0.0);
    std::vector<double> sigma(targets, 1.0);
    if (spec.standardized) {
        if (bounds.train.size() == 0) {
            throw DataError("standardized scoring needs a nonempty train split");
        }
        for (std::size_t o = 0; o < targets; ++o) {
            double sum = 0.0, sq = 0.0, n = 0.0;
            for (std::size_t t = bounds.train.begin; t < bounds.train.end; ++t) {
                const double v = s.at(t, o);
                if (std::isfinite(v)) {
                    sum += v;
                    sq += v * v;
                    n += 1.0;
                }
            }
            if (n > 0) {
                mu[o] = sum / n;
                const double var = std::max(sq / n - mu[o] * mu[o], 0.0);
                sigma[o] = var > 0.0 ? std::sqrt(var) : 1.0;
            }
        }
    }

    MetricTable table;
    table.horizons = spec.horizons;
    table.windows = starts.size();
    std::vector<MetricAccumulator> acc(spec.horizons.size());
    if (spec.keep_window_errors) {
        table.window_mae.assign(starts.size() * spec.horizons.size(), 0.0);
    }
    for (std::size_t begin = 0; begin < starts.size(); begin += spec.batch_size) {
        const auto chunk = std::span(starts).subspan(begin, std::min(spec.batch_size, starts.size() - begin));
        const auto preds = forecaster(s, chunk, spec.context_len, h_max);
        if (preds.size() != chunk.size()) {
            throw InvariantError("forecaster returned the wrong number of windows");
        }
        for (std::size_t w = 0; w < chunk.size(); ++w) {
            if (preds[w].size() != h_max * targets) {
                throw InvariantError("forecaster returned a block of the wrong size");
            }
            const std::size_t origin = chunk[w] + spec.context_len;
            for (std::size_t k = 0; k < spec.horizons.size(); ++k) {
                double window_abs = 0.0;
                for (std::size_t t = 0; t < spec.horizons[k]; ++t) {
                    for (std::size_t o = 0; o < targets; ++o) {
                        const double y = (s.at(origin + t, o) - mu[o]) / sigma[o];
                        const double yhat = (preds[w][t * targets + o] - mu[o]) / sigma[o];
                        acc[k].add(y, yhat);
                        window_abs += std::fabs(y - yhat);
                    }
                }
                if (spec.keep_window_errors) {
                    table.window_mae[(begin + w) * spec.horizons.size() + k] =
                        window_abs / static_cast<double>(spec.horizons[k] * targets);
                }
            }
        }
    }
    for (const auto& a : acc) {
        table.rows.push_back(a.result());
    }
    table.mean = mean_row(table.rows);
    return table;
}

MetricTable rolling_eval(const ModelParams<float>& params, const ModelConfig& config, const RawSeries& series,
                         const EvalSpec& spec, const ForecastOptions& options)
{
    ForecastOptions opts = options;
    opts.batch_size = spec.batch_size;
    return rolling_eval_with(series, spec,
                             [&](const RawSeries& s, std::span<const std::size_t> starts, std::size_t ctx,
                                 std::size_t horizon) {
                                 std::vector<ForecastRequest> requests;
                                 requests.reserve(starts.size());
                                 for (std::size_t start : starts) {
                                     requests.push_back({slice_rows(s, start, start + ctx), horizon});
                                 }
                                 std::vector<std::vector<double>> out;
                                 for (auto& r : forecast_many(params, config, requests, opts)) {
                                     out.push_back(std::move(r.predictions));
                                 }
                                 return out;
                             });
}

MetricTable naive_last_value(const RawSeries& series, const EvalSpec& spec)
{
    return naive_seasonal(series, spec, 1);
}

MetricTable naive_seasonal(const RawSeries& series, const EvalSpec& spec, std::size_t period)
{
    if (period == 0 || period > spec.context_len) {
        throw ConfigError("seasonal period must lie in [1, context_len]");
    }
    return rolling_eval_with(series, spec,
                             [period](const RawSeries& s, std::span<const std::size_t> starts, std::size_t ctx,
                                      std::size_t horizon) {
                                 const std::size_t targets = s.target_count();
                                 std::vector<std::vector<double>> out;
                                 for (std::size_t start : starts) {
                                     std::vector<double> block(horizon * targets);
                                     const std::size_t base = start + ctx - period;
                                     for (std::size_t t = 0; t < horizon; ++t) {
                                         for (std::size_t o = 0; o < targets; ++o) {
                                             block[t * targets + o] = s.at(base + t % period, o);
                                         }
                                     }
                                     out.push_back(std::move(block));
                                 }
                                 return out;
                             });
}

} // namespace gtt
