#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "gtt/datapipe.hpp"

namespace gtt {

SplitRanges split_train_val(std::size_t length, double train_fraction)
{
    const auto boundary = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(length)));
    return {Range{0, boundary}, Range{boundary, length}};
}

std::vector<std::size_t> extract_windows(const RawSeries& series, Range range, std::size_t stride, std::size_t cap,
                                         std::mt19937_64& rng, std::size_t window)
{
    if (stride == 0) {
        throw std::invalid_argument("extract_windows: stride must be positive");
    }
    range.end = std::min(range.end, series.length);
    if (range.size() < window) {
        return {};
    }
    // missing[t] = number of rows before t that contain a NaN
    std::vector<std::size_t> missing(range.size() + 1, 0);
    for (std::size_t t = range.begin; t < range.end; ++t) {
        bool bad = false;
        for (std::size_t c = 0; c < series.channels && !bad; ++c) {
            bad = std::isnan(series.at(t, c));
        }
        missing[t - range.begin + 1] = missing[t - range.begin] + (bad ? 1 : 0);
    }
    std::vector<std::size_t> starts;
    for (std::size_t s = range.begin; s + window <= range.end; s += stride) {
        const std::size_t i = s - range.begin;
        if (missing[i + window] == missing[i]) {
            starts.push_back(s);
        }
    }
    if (starts.size() > cap) {
        std::vector<std::size_t> chosen;
        chosen.reserve(cap);
        std::sample(starts.begin(), starts.end(), std::back_inserter(chosen), cap, rng);
        starts = std::move(chosen);
    }
    return starts;
}

std::size_t pack_capacity(bool has_time_features)
{
    return has_time_features ? kSampleChannels - kTimeFeatures : kSampleChannels;
}

std::size_t pack_groups(std::size_t channels, bool has_time_features)
{
    const std::size_t cap = pack_capacity(has_time_features);
    return (channels + cap - 1) / cap;
}

std::vector<PackedWindow> pack_channels(std::span<const double> window, std::size_t rows, std::size_t c_raw,
                                        std::span<const double> time_features)
{
    if (window.size() != rows * c_raw) {
        throw std::invalid_argument("pack_channels: window size does not match rows x channels");
    }
    const bool tf = !time_features.empty();
    if (tf && time_features.size() != rows * kTimeFeatures) {
        throw std::invalid_argument("pack_channels: time features must be rows x 6");
    }
    const std::size_t cap = pack_capacity(tf);
    std::vector<PackedWindow> out;
    for (std::size_t first = 0; first < c_raw; first += cap) {
        const std::size_t n = std::min(cap, c_raw - first);
        PackedWindow p;
        p.values.assign(rows * kSampleChannels, 0.0);
        p.data_channels = n;
        p.first_source_channel = first;
        for (std::size_t t = 0; t < rows; ++t) {
            for (std::size_t j = 0; j < n; ++j) {
                p.values[t * kSampleChannels + j] = window[t * c_raw + first + j];
            }
            if (tf) {
                for (std::size_t k = 0; k < kTimeFeatures; ++k) {
                    p.values[t * kSampleChannels + n + k] = time_features[t * kTimeFeatures + k];
                }
            }
        }
        for (std::size_t j = 0; j < n + (tf ? kTimeFeatures : 0); ++j) {
            p.channel_valid[j] = 1;
        }
        out.push_back(std::move(p));
    }
    return out;
}

TrainingSample::TrainingSample()
    : context(kContextLen * kSampleChannels, 0.0f), target(kTargetLen * kSampleChannels, 0.0f)
{
}

std::uint32_t TrainingSample::valid_mask() const
{
    std::uint32_t mask = 0;
    for (std::size_t c = 0; c < kSampleChannels; ++c) {
        if (channel_valid[c]) {
            mask |= 1u << c;
        }
    }
    return mask;
}

std::optional<TrainingSample> normalize_sample(std::span<const double> window,
                                               const std::array<std::uint8_t, kSampleChannels>& channel_valid,
                                               std::size_t valid_from)
{
    if (window.size() != kWindowLen * kSampleChannels) {
        throw std::invalid_argument("normalize_sample expects a 1088 x 32 window");
    }
    if (valid_from >= kContextLen) {
        throw std::invalid_argument("normalize_sample: valid_from must be below 1024");
    }
    TrainingSample s;
    s.channel_valid = channel_valid;
    s.context_valid_from = static_cast<std::uint16_t>(valid_from);
    const double n = static_cast<double>(kContextLen - valid_from);
    for (std::size_t c = 0; c < kSampleChannels; ++c) {
        if (!channel_valid[c]) {
            continue;
        }
        double mean = 0.0;
        for (std::size_t t = valid_from; t < kContextLen; ++t) {
            mean += window[t * kSampleChannels + c];
        }
        mean /= n;
        double var = 0.0;
        for (std::size_t t = valid_from; t < kContextLen; ++t) {
            const double d = window[t * kSampleChannels + c] - mean;
            var += d * d;
        }
        const double stdev = std::sqrt(var / n);
        const double denom = stdev + kNormEpsilon;
        s.norm_mean[c] = static_cast<float>(mean);
        s.norm_std[c] = static_cast<float>(stdev);
        for (std::size_t t = 0; t < kWindowLen; ++t) {
            if (t < valid_from) {
                continue;
            }
            const double v = (window[t * kSampleChannels + c] - mean) / denom;
            if (!(std::fabs(v) <= kExtremeValue)) {
                return std::nullopt;
            }
            if (t < kContextLen) {
                s.context[t * kSampleChannels + c] = static_cast<float>(v);
            } else {
                s.target[(t - kContextLen) * kSampleChannels + c] = static_cast<float>(v);
            }
        }
    }
    return s;
}

std::size_t draw_mask_length(std::mt19937_64& rng, double prob, std::size_t max_len)
{
    if (!std::bernoulli_distribution(prob)(rng)) {
        return 0;
    }
    return std::uniform_int_distribution<std::size_t>(1, max_len)(rng);
}

void apply_context_mask_length(TrainingSample& sample, std::size_t m)
{
    if (m >= kContextLen) {
        throw std::invalid_argument("mask length must be below 1024");
    }
    std::fill(sample.context.begin(), sample.context.begin() + static_cast<std::ptrdiff_t>(m * kSampleChannels),
              0.0f);
    sample.context_valid_from = static_cast<std::uint16_t>(m);
}

void apply_context_mask(TrainingSample& sample, std::mt19937_64& rng, double prob)
{
    const std::size_t m = draw_mask_length(rng, prob);
    if (m > 0) {
        apply_context_mask_length(sample, m);
    }
}

// ------------------------------------------------------------------ records

namespace {

template <class U>
void put(std::vector<std::uint8_t>& out, U value)
{
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

void put_f32(std::vector<std::uint8_t>& out, float v)
{
    put(out, std::bit_cast<std::uint32_t>(v));
}

template <class U>
U get(std::span<const std::uint8_t> bytes, std::size_t& pos)
{
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        value |= static_cast<U>(static_cast<U>(bytes[pos + i]) << (8 * i));
    }
    pos += sizeof(U);
    return value;
}

float get_f32(std::span<const std::uint8_t> bytes, std::size_t& pos)
{
    return std::bit_cast<float>(get<std::uint32_t>(bytes, pos));
}

} // namespace

void encode_record(const TrainingSample& s, std::vector<std::uint8_t>& out)
{
    out.reserve(out.size() + kRecordBytes);
    put(out, kShardMagic);
    put(out, kShardVersion);
    put(out, static_cast<std::uint16_t>(kSampleChannels));
    put(out, s.valid_mask());
    put(out, s.context_valid_from);
    for (float v : s.norm_mean) put_f32(out, v);
    for (float v : s.norm_std) put_f32(out, v);
    for (float v : s.context) put_f32(out, v);
    for (float v : s.target) put_f32(out, v);
}

TrainingSample decode_record(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kRecordBytes) {
        throw std::runtime_error("truncated sample record");
    }
    std::size_t pos = 0;
    if (get<std::uint32_t>(bytes, pos) != kShardMagic) {
        throw std::runtime_error("bad sample record magic");
    }
    const auto version = get<std::uint16_t>(bytes, pos);
    const auto count = get<std::uint16_t>(bytes, pos);
    if (version != kShardVersion || count != kSampleChannels) {
        throw std::runtime_error("unsupported sample record version " + std::to_string(version) + " with " +
                                 std::to_string(count) + " channels");
    }
    TrainingSample s;
    const auto mask = get<std::uint32_t>(bytes, pos);
    for (std::size_t c = 0; c < kSampleChannels; ++c) {
        s.channel_valid[c] = (mask >> c) & 1u;
    }
    s.context_valid_from = get<std::uint16_t>(bytes, pos);
    for (float& v : s.norm_mean) v = get_f32(bytes, pos);
    for (float& v : s.norm_std) v = get_f32(bytes, pos);
    for (float& v : s.context) v = get_f32(bytes, pos);
    for (float& v : s.target) v = get_f32(bytes, pos);
    return s;
}

} // namespace gtt
