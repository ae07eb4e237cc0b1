#include "gtt/synthetic.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <fmt/format.h>

#include "gtt/errors.hpp"
#include "gtt/rng.hpp"

namespace gtt {

namespace {

const std::set<std::string> kGenerators{"sine-mixture", "trend+season", "random-walk"};

void check_range(const std::array<double, 2>& r, const char* name, bool positive = false)
{
    if (!(r[0] <= r[1]) || (positive && r[0] <= 0.0)) {
        throw ConfigError(std::string("synthetic spec: invalid range for '") + name + "'");
    }
}

} // namespace

void SyntheticSpec::validate() const
{
    if (!kGenerators.count(generator)) {
        throw ConfigError("synthetic spec: unknown generator '" + generator +
                          "' (expected sine-mixture, trend+season or random-walk)");
    }
    if (length == 0 || channels == 0 || interval <= 0) {
        throw ConfigError("synthetic spec: length, channels and interval must be positive");
    }
    if (generator == "sine-mixture" && components == 0) {
        throw ConfigError("synthetic spec: sine-mixture needs at least one component");
    }
    check_range(amplitude, "amplitude");
    check_range(period, "period", true);
    check_range(phase, "phase");
    check_range(offset, "offset");
    check_range(slope, "slope");
    if (noise_std < 0.0 || step_std < 0.0) {
        throw ConfigError("synthetic spec: noise_std and step_std must be non-negative");
    }
}

nlohmann::json SyntheticSpec::to_json() const
{
    return {{"generator", generator}, {"n_series", n_series},   {"length", length},       {"channels", channels},
            {"components", components}, {"amplitude", amplitude}, {"period", period},     {"phase", phase},
            {"offset", offset},         {"slope", slope},         {"noise_std", noise_std}, {"step_std", step_std},
            {"timestamps", timestamps}, {"start", start},         {"interval", interval}, {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j)
{
    SyntheticSpec spec;
    const nlohmann::json defaults = spec.to_json();
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) {
            throw ConfigError("synthetic spec: unknown key '" + key + "'");
        }
    }
    nlohmann::json merged = defaults;
    merged.update(j);
    try {
        spec.generator = merged["generator"];
        spec.n_series = merged["n_series"];
        spec.length = merged["length"];
        spec.channels = merged["channels"];
        spec.components = merged["components"];
        spec.amplitude = merged["amplitude"];
        spec.period = merged["period"];
        spec.phase = merged["phase"];
        spec.offset = merged["offset"];
        spec.slope = merged["slope"];
        spec.noise_std = merged["noise_std"];
        spec.step_std = merged["step_std"];
        spec.timestamps = merged["timestamps"];
        spec.start = merged["start"];
        spec.interval = merged["interval"];
        spec.seed = merged["seed"];
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synthetic spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

std::vector<SyntheticSeries> generate_synthetic(const SyntheticSpec& spec)
{
    spec.validate();
    constexpr double two_pi = 2.0 * std::numbers::pi;
    std::vector<SyntheticSeries> out;
    for (std::size_t i = 0; i < spec.n_series; ++i) {
        std::mt19937_64 rng(indexed_seed(substream_seed(spec.seed, "synthetic"), i));
        auto uniform = [&](const std::array<double, 2>& r) {
            return r[0] == r[1] ? r[0] : std::uniform_real_distribution<double>(r[0], r[1])(rng);
        };
        std::normal_distribution<double> normal(0.0, 1.0);

        SyntheticSeries s;
        RawSeries& raw = s.series;
        raw.id = fmt::format("synthetic-{:04d}", i);
        raw.length = spec.length;
        raw.channels = spec.channels;
        raw.values.assign(spec.length * spec.channels, 0.0);
        raw.roles.assign(spec.channels, ChannelRole::target);
        for (std::size_t c = 0; c < spec.channels; ++c) {
            raw.names.push_back(fmt::format("ch{}", c));
        }
        s.truth = {{"id", raw.id}, {"generator", spec.generator}, {"channels", nlohmann::json::array()}};
        for (std::size_t c = 0; c < spec.channels; ++c) {
            nlohmann::json truth;
            auto column = [&](std::size_t t) -> double& { return raw.values[t * spec.channels + c]; };
            if (spec.generator == "sine-mixture" || spec.generator == "trend+season") {
                const std::size_t terms = spec.generator == "sine-mixture" ? spec.components : 1;
                const double base = uniform(spec.offset);
                const double slope = spec.generator == "trend+season" ? uniform(spec.slope) : 0.0;
                truth["offset"] = base;
                truth["slope"] = slope;
                truth["terms"] = nlohmann::json::array();
                std::vector<std::array<double, 3>> waves;
                for (std::size_t k = 0; k < terms; ++k) {
                    const std::array<double, 3> w{uniform(spec.amplitude), uniform(spec.period), uniform(spec.phase)};
                    waves.push_back(w);
                    truth["terms"].push_back({{"amplitude", w[0]}, {"period", w[1]}, {"phase", w[2]}});
                }
                for (std::size_t t = 0; t < spec.length; ++t) {
                    double v = base + slope * static_cast<double>(t);
                    for (const auto& w : waves) {
                        v += w[0] * std::sin(two_pi * static_cast<double>(t) / w[1] + w[2]);
                    }
                    column(t) = v;
                }
            } else {
                double v = uniform(spec.offset);
                truth["start"] = v;
                truth["step_std"] = spec.step_std;
                for (std::size_t t = 0; t < spec.length; ++t) {
                    column(t) = v;
                    v += spec.step_std * normal(rng);
                }
            }
            if (spec.noise_std > 0.0) {
                for (std::size_t t = 0; t < spec.length; ++t) {
                    column(t) += spec.noise_std * normal(rng);
                }
            }
            truth["noise_std"] = spec.noise_std;
            s.truth["channels"].push_back(truth);
        }
        if (spec.timestamps) {
            for (std::size_t t = 0; t < spec.length; ++t) {
                raw.timestamps.push_back(spec.start + static_cast<std::int64_t>(t) * spec.interval);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::string format_timestamp(std::int64_t unix_seconds)
{
    using namespace std::chrono;
    std::int64_t days = unix_seconds / 86400;
    std::int64_t sod = unix_seconds % 86400;
    if (sod < 0) {
        sod += 86400;
        --days;
    }
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    return fmt::format("{:04d}-{:02d}-{:02d} {:02d}:{:02d}:{:02d}", static_cast<int>(ymd.year()),
                       static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), sod / 3600,
                       (sod / 60) % 60, sod % 60);
}

void write_csv(const RawSeries& series, const std::filesystem::path& path)
{
    series.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    if (series.has_timestamps()) {
        out << "timestamp,";
    }
    for (std::size_t c = 0; c < series.channels; ++c) {
        out << (c ? "," : "") << series.names[c];
    }
    out << '\n';
    for (std::size_t t = 0; t < series.length; ++t) {
        if (series.has_timestamps()) {
            out << format_timestamp(series.timestamps[t]) << ',';
        }
        for (std::size_t c = 0; c < series.channels; ++c) {
            const double v = series.at(t, c);
            if (c) out << ',';
            if (!std::isnan(v)) out << fmt::format("{:.17g}", v);
        }
        out << '\n';
    }
    if (!out) {
        throw DataError("write failed: " + path.string());
    }
}

} // namespace gtt
