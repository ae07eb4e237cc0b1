#pragma once

// Seeded synthetic series for tests, demos and the acceptance suite.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "gtt/datapipe.hpp"

namespace gtt {

struct SyntheticSpec {
    std::string generator = "sine-mixture"; ///< sine-mixture, trend+season or random-walk
    std::size_t n_series = 1;
    std::size_t length = 4096;
    std::size_t channels = 1;
    std::size_t components = 2; ///< sine terms per channel (sine-mixture)
    std::array<double, 2> amplitude{0.5, 2.0};
    std::array<double, 2> period{16.0, 256.0};
    std::array<double, 2> phase{0.0, 6.283185307179586};
    std::array<double, 2> offset{-1.0, 1.0};
    std::array<double, 2> slope{-1e-3, 1e-3}; ///< per step (trend+season)
    double noise_std = 0.0;
    double step_std = 1.0; ///< random-walk increments
    bool timestamps = false;
    std::int64_t start = 1577836800; ///< 2020-01-01T00:00:00Z
    std::int64_t interval = 3600;    ///< seconds between rows
    std::uint64_t seed = 0;

    /// Rejects unknown keys and invalid ranges with ConfigError.
    static SyntheticSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
};

struct SyntheticSeries {
    RawSeries series;
    nlohmann::json truth; ///< generator parameters per channel
};

std::vector<SyntheticSeries> generate_synthetic(const SyntheticSpec& spec);

/// "YYYY-MM-DD HH:MM:SS" (UTC).
std::string format_timestamp(std::int64_t unix_seconds);

/// Header row of channel names, optional leading "timestamp" column; NaN written as an empty field.
void write_csv(const RawSeries& series, const std::filesystem::path& path);

} // namespace gtt
