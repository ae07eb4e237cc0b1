#pragma once

// Pretraining sample preparation: window extraction, channel packing,
// per-sample normalization, context masking and sharded corpus output.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace gtt {

inline constexpr std::size_t kContextLen = 1024;
inline constexpr std::size_t kTargetLen = 64;
inline constexpr std::size_t kWindowLen = kContextLen + kTargetLen;
inline constexpr std::size_t kSampleChannels = 32;
inline constexpr std::size_t kTimeFeatures = 6;
inline constexpr std::size_t kMaxMaskLen = 960;
inline constexpr double kNormEpsilon = 1e-8;
inline constexpr double kExtremeValue = 9.0;

enum class ChannelRole { target, covariate };

const char* role_name(ChannelRole role);

/// A raw multivariate series. Missing values are NaN.
struct RawSeries {
    std::string id;
    std::size_t length = 0;
    std::size_t channels = 0;
    std::vector<double> values;           ///< [length x channels], row-major
    std::vector<std::int64_t> timestamps; ///< unix seconds (UTC), empty when absent
    std::vector<ChannelRole> roles;       ///< one per channel
    std::vector<std::string> names;       ///< one per channel

    double at(std::size_t t, std::size_t c) const { return values[t * channels + c]; }
    bool has_timestamps() const { return !timestamps.empty(); }

    /// Throws DataError on inconsistent sizes or non-increasing timestamps.
    void validate() const;

    /// Same series with target channels first, then covariates (stable order).
    RawSeries targets_first() const;
    std::size_t target_count() const;
};

/// Parses "YYYY-MM-DD", "YYYY-MM-DD[ T]HH:MM[:SS[.fff]]" with an optional "Z"
/// or "+HH:MM" offset. Returns unix seconds (UTC); nullopt when malformed.
std::optional<std::int64_t> parse_iso8601(std::string_view text);

/// [n x 6]: sin/cos of second-of-day, day-of-week (Monday = 0) and month.
std::vector<double> encode_time_features(std::span<const std::int64_t> unix_seconds);

/// Column roles for CSV ingestion. Columns not listed default to `fallback`.
struct ColumnRoles {
    std::optional<std::string> timestamp_column; ///< nullopt: autodetect from the first column
    std::vector<std::string> targets;
    std::vector<std::string> covariates;
    std::vector<std::string> ignore;
    ChannelRole fallback = ChannelRole::target;

    /// JSON sidecar: {"timestamp": "date", "targets": [...], "covariates": [...], "ignore": [...]}.
    /// When targets are listed, unlisted columns become covariates.
    static ColumnRoles load(const std::filesystem::path& path);
};

/// Header row with channel names, empty fields become NaN.
RawSeries read_csv(const std::filesystem::path& path, const ColumnRoles& roles = {});

struct Range {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end > begin ? end - begin : 0; }
    bool operator==(const Range&) const = default;
};

struct SplitRanges {
    Range train;
    Range val;
};

/// train = [0, floor(fraction * n)), val = the rest.
SplitRanges split_train_val(std::size_t length, double train_fraction = 0.9);

/// Start indices of windows of `window` rows on the grid range.begin + k * stride
/// that lie inside `range` and contain no missing value. When more than `cap`
/// qualify, `cap` of them are drawn uniformly without replacement (kept in order).
std::vector<std::size_t> extract_windows(const RawSeries& series, Range range, std::size_t stride, std::size_t cap,
                                         std::mt19937_64& rng, std::size_t window = kWindowLen);

/// Data channels per packed sample.
std::size_t pack_capacity(bool has_time_features);

/// Number of packed samples a series with `channels` channels produces per window.
std::size_t pack_groups(std::size_t channels, bool has_time_features);

struct PackedWindow {
    std::vector<double> values; ///< [rows x 32]
    std::array<std::uint8_t, kSampleChannels> channel_valid{};
    std::size_t data_channels = 0;
    std::size_t first_source_channel = 0; ///< index of data channel 0 in the raw window
};

/// window [rows x c_raw]; time_features [rows x 6] or empty. Data channels are
/// split into consecutive groups; each group gets the time features and zero
/// padding up to 32 channels.
std::vector<PackedWindow> pack_channels(std::span<const double> window, std::size_t rows, std::size_t c_raw,
                                        std::span<const double> time_features);

struct TrainingSample {
    std::vector<float> context; ///< [1024 x 32]
    std::vector<float> target;  ///< [64 x 32]
    std::array<std::uint8_t, kSampleChannels> channel_valid{};
    std::uint16_t context_valid_from = 0;
    std::array<float, kSampleChannels> norm_mean{};
    std::array<float, kSampleChannels> norm_std{};

    TrainingSample();
    std::uint32_t valid_mask() const;
    bool operator==(const TrainingSample&) const = default;
};

/// Per valid channel: mean and population std over context rows [valid_from, 1024),
/// values mapped to (x - mean) / (std + eps). Context rows before valid_from are
/// set to zero. Returns nullopt (discard) when any emitted |value| > 9.
std::optional<TrainingSample> normalize_sample(std::span<const double> window, // [1088 x 32]
                                               const std::array<std::uint8_t, kSampleChannels>& channel_valid,
                                               std::size_t valid_from = 0);

/// 0 with probability 1 - prob, otherwise uniform in [1, max_len].
std::size_t draw_mask_length(std::mt19937_64& rng, double prob = 0.1, std::size_t max_len = kMaxMaskLen);

/// Zeroes context rows [0, m) on every channel and sets context_valid_from = m,
/// with m drawn by draw_mask_length.
void apply_context_mask(TrainingSample& sample, std::mt19937_64& rng, double prob = 0.1);
void apply_context_mask_length(TrainingSample& sample, std::size_t m);

// ---- shards ------------------------------------------------------------------

inline constexpr std::uint32_t kShardMagic = 0x47545431;
inline constexpr std::uint16_t kShardVersion = 1;
inline constexpr std::size_t kRecordBytes =
    4 + 2 + 2 + 4 + 2 + 4 * kSampleChannels * 2 + 4 * kSampleChannels * (kContextLen + kTargetLen);

void encode_record(const TrainingSample& sample, std::vector<std::uint8_t>& out);
TrainingSample decode_record(std::span<const std::uint8_t> bytes);

/// Reads every record of a shard file.
std::vector<TrainingSample> read_shard(const std::filesystem::path& path);

// ---- corpus ------------------------------------------------------------------

struct CorpusConfig {
    std::size_t stride = 16;
    std::size_t cap = 60000; ///< samples per series and split
    double train_fraction = 0.9;
    double mask_prob = 0.1;
    /// Compute normalization statistics over the unmasked rows only.
    bool mask_before_normalize = true;
    std::size_t shard_records = 2048;

    nlohmann::json to_json() const;
    /// Rejects unknown keys with ConfigError; missing keys keep the values of `base`.
    static CorpusConfig from_json(const nlohmann::json& j, CorpusConfig base);
    static CorpusConfig from_json(const nlohmann::json& j) { return from_json(j, CorpusConfig{}); }
};

struct SeriesCounts {
    std::string id;
    std::size_t windows[2] = {0, 0}; ///< eligible windows after the cap, [train, val]
    std::size_t samples[2] = {0, 0}; ///< emitted samples
    std::size_t discarded[2] = {0, 0};
    std::size_t masked[2] = {0, 0};
};

struct ShardInfo {
    std::string path; ///< relative to the corpus directory
    std::string split;
    std::size_t records = 0;
};

struct CorpusManifest {
    std::uint64_t seed = 0;
    CorpusConfig config;
    std::vector<ShardInfo> shards;
    std::vector<SeriesCounts> series;

    std::size_t total(const std::string& split) const;
    void save(const std::filesystem::path& path) const;
    static CorpusManifest load(const std::filesystem::path& path);
};

/// Writes train-NNNNN.bin / val-NNNNN.bin shards and manifest.json into `dir`.
/// Each series draws from its own streams derived from `seed`, so the output
/// does not depend on processing order.
CorpusManifest build_corpus(const std::vector<RawSeries>& series, const CorpusConfig& config, std::uint64_t seed,
                            const std::filesystem::path& dir);

/// All samples of one split, in manifest order.
std::vector<TrainingSample> load_split(const std::filesystem::path& dir, const std::string& split);

} // namespace gtt
