#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "acceptance.hpp"
#include "gtt/datapipe.hpp"

namespace gtt::acceptance {

namespace fs = std::filesystem;

namespace {

struct SeriesShape {
    std::size_t length = 0;
    std::size_t channels = 1;
    bool timestamps = false;
    std::size_t nan_runs = 0;
    std::size_t spikes = 0;
};

/// Noisy sines with optional missing runs and isolated spikes (which force discards).
RawSeries random_series(const SeriesShape& shape, std::mt19937_64& rng, const std::string& id)
{
    RawSeries s;
    s.id = id;
    s.length = shape.length;
    s.channels = shape.channels;
    s.values.resize(s.length * s.channels);
    std::uniform_real_distribution<double> amp(0.1, 20.0), offset(-50.0, 50.0), period(6.0, 500.0), phase(0, 6.3);
    std::normal_distribution<double> noise;
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double a = amp(rng), o = offset(rng), p = period(rng), ph = phase(rng);
        for (std::size_t t = 0; t < s.length; ++t)
            s.values[t * s.channels + c] = o + a * (std::sin(2 * std::numbers::pi * double(t) / p + ph) + 0.3 * noise(rng));
        s.names.push_back(fmt::format("c{}", c));
    }
    std::uniform_int_distribution<std::size_t> row(0, s.length - 1), chan(0, s.channels - 1), run(1, 40);
    for (std::size_t k = 0; k < shape.spikes; ++k) s.values[row(rng) * s.channels + chan(rng)] += 1e4;
    for (std::size_t k = 0; k < shape.nan_runs; ++k) {
        const std::size_t start = row(rng), c = chan(rng), n = run(rng);
        for (std::size_t t = start; t < std::min(s.length, start + n); ++t)
            s.values[t * s.channels + c] = std::numeric_limits<double>::quiet_NaN();
    }
    s.roles.assign(s.channels, ChannelRole::target);
    if (shape.timestamps) {
        for (std::size_t t = 0; t < s.length; ++t) s.timestamps.push_back(1577836800 + 3600 * std::int64_t(t));
    }
    return s;
}

/// Window starts by scanning every grid position and every cell.
std::vector<std::size_t> brute_windows(const RawSeries& s, Range r, std::size_t stride)
{
    std::vector<std::size_t> out;
    for (std::size_t start = r.begin; start + kWindowLen <= r.end; start += stride) {
        bool ok = true;
        for (std::size_t t = start; t < start + kWindowLen && ok; ++t)
            for (std::size_t c = 0; c < s.channels; ++c) ok = ok && !std::isnan(s.at(t, c));
        if (ok) out.push_back(start);
    }
    return out;
}

struct SampleStats {
    std::size_t samples = 0;
    std::size_t masked = 0;
    double worst_mean = 0.0;
    double worst_std = 0.0;
    double max_abs = 0.0;
};

/// Checks every TrainingSample invariant of one record.
void check_sample(const TrainingSample& s, SampleStats& stats, Outcome& out)
{
    ++stats.samples;
    const std::size_t vf = s.context_valid_from;
    stats.masked += vf > 0;
    bool zero_prefix = true, zero_invalid = true;
    for (std::size_t c = 0; c < kSampleChannels; ++c) {
        double sum = 0.0, sq = 0.0;
        bool all_zero = true;
        for (std::size_t t = 0; t < kContextLen; ++t) {
            const double v = s.context[t * kSampleChannels + c];
            stats.max_abs = std::max(stats.max_abs, std::fabs(v));
            if (t < vf || !s.channel_valid[c]) {
                zero_prefix = zero_prefix && (t >= vf || v == 0.0);
                zero_invalid = zero_invalid && (s.channel_valid[c] || v == 0.0);
                continue;
            }
            sum += v;
            sq += v * v;
            all_zero = all_zero && v == 0.0;
        }
        for (std::size_t t = 0; t < kTargetLen; ++t) {
            const double v = s.target[t * kSampleChannels + c];
            stats.max_abs = std::max(stats.max_abs, std::fabs(v));
            zero_invalid = zero_invalid && (s.channel_valid[c] || v == 0.0);
        }
        // A channel constant over the unmasked rows has nothing to standardize.
        const bool constant = s.norm_std[c] <= 1e-6f * std::max(1.0f, std::fabs(s.norm_mean[c]));
        if (!s.channel_valid[c] || all_zero || constant) continue;
        const double n = static_cast<double>(kContextLen - vf);
        const double mean = sum / n;
        const double std = std::sqrt(std::max(0.0, sq / n - mean * mean));
        stats.worst_mean = std::max(stats.worst_mean, std::fabs(mean));
        stats.worst_std = std::max(stats.worst_std, std::fabs(std - 1.0));
    }
    if (!zero_prefix) out.expect(false, "masked context rows are not zero");
    if (!zero_invalid) out.expect(false, "invalid channels are not zero");
}

SampleStats scan_corpus(const fs::path& dir, const CorpusManifest& manifest, Outcome& out)
{
    SampleStats stats;
    for (const ShardInfo& shard : manifest.shards) {
        for (const TrainingSample& s : read_shard(dir / shard.path)) check_sample(s, stats, out);
    }
    return stats;
}

/// Independent sample/discard count for a corpus built without masking or time features.
std::pair<std::size_t, std::size_t> oracle_counts(const RawSeries& s, Range range, std::size_t stride)
{
    std::size_t kept = 0, dropped = 0;
    for (std::size_t start : brute_windows(s, range, stride)) {
        for (std::size_t first = 0; first < s.channels; first += kSampleChannels) {
            const std::size_t last = std::min(s.channels, first + kSampleChannels);
            bool extreme = false;
            for (std::size_t c = first; c < last && !extreme; ++c) {
                double mean = 0.0, var = 0.0;
                for (std::size_t t = 0; t < kContextLen; ++t) mean += s.at(start + t, c);
                mean /= double(kContextLen);
                for (std::size_t t = 0; t < kContextLen; ++t) var += std::pow(s.at(start + t, c) - mean, 2);
                const double std = std::sqrt(var / double(kContextLen));
                for (std::size_t t = 0; t < kWindowLen && !extreme; ++t)
                    extreme = std::fabs((s.at(start + t, c) - mean) / (std + kNormEpsilon)) > kExtremeValue;
            }
            extreme ? ++dropped : ++kept;
        }
    }
    return {kept, dropped};
}

} // namespace

Outcome data_pipeline(const Context& ctx)
{
    Outcome out;
    std::mt19937_64 rng(5);

    // Randomized series through the full pipeline: every emitted sample obeys the invariants.
    {
        std::vector<RawSeries> list;
        std::uniform_int_distribution<std::size_t> len(1200, 30000), chans(1, 40);
        for (int i = 0; i < 12; ++i) {
            SeriesShape shape{len(rng), chans(rng), i % 2 == 1, 4, 2};
            list.push_back(random_series(shape, rng, fmt::format("r{}", i)));
        }
        CorpusConfig cfg;
        cfg.stride = 61;
        const fs::path dir = ctx.work_dir / "randomized";
        const auto manifest = build_corpus(list, cfg, 11, dir);
        const SampleStats st = scan_corpus(dir, manifest, out);
        out.expect(st.samples == manifest.total("train") + manifest.total("val"), "shards and manifest disagree");
        out.expect(st.worst_mean <= 1e-4, fmt::format("unmasked context mean off by {:.2e}", st.worst_mean));
        out.expect(st.worst_std <= 1e-3, fmt::format("unmasked context std off by {:.2e}", st.worst_std));
        out.expect(st.max_abs <= kExtremeValue, fmt::format("emitted |value| {:.3f} > 9", st.max_abs));
        std::size_t discarded = 0;
        for (std::size_t i = 0; i < list.size(); ++i) {
            const auto split = split_train_val(list[i].length, cfg.train_fraction);
            const SeriesCounts& sc = manifest.series[i];
            const std::size_t groups = pack_groups(list[i].channels, list[i].has_timestamps());
            const Range ranges[2] = {split.train, split.val};
            for (int k = 0; k < 2; ++k) {
                out.expect(sc.windows[k] == brute_windows(list[i], ranges[k], cfg.stride).size(),
                           fmt::format("{}: window count differs from enumeration", sc.id));
                out.expect(sc.samples[k] + sc.discarded[k] == sc.windows[k] * groups,
                           fmt::format("{}: samples + discards != windows x groups", sc.id));
                discarded += sc.discarded[k];
            }
        }
        out.expect(discarded > 0, "no window was discarded; the spike filter went unexercised");
        out.note(fmt::format("{} samples: |mean| <= {:.1e}, |std-1| <= {:.1e}, max |v| {:.2f}, {} discarded", st.samples,
                             st.worst_mean, st.worst_std, st.max_abs, discarded));
        fs::remove_all(dir);
    }

    // Discard counts against an independent normalization.
    {
        std::vector<RawSeries> list;
        std::uniform_int_distribution<std::size_t> len(3000, 8000), chans(1, 70);
        for (int i = 0; i < 6; ++i) list.push_back(random_series({len(rng), chans(rng), false, 3, 5}, rng, fmt::format("d{}", i)));
        CorpusConfig cfg;
        cfg.stride = 29;
        cfg.mask_prob = 0.0;
        const fs::path dir = ctx.work_dir / "discard";
        const auto manifest = build_corpus(list, cfg, 12, dir);
        for (std::size_t i = 0; i < list.size(); ++i) {
            const auto split = split_train_val(list[i].length, cfg.train_fraction);
            const Range ranges[2] = {split.train, split.val};
            for (int k = 0; k < 2; ++k) {
                const auto [kept, dropped] = oracle_counts(list[i], ranges[k], cfg.stride);
                const SeriesCounts& sc = manifest.series[i];
                out.expect(sc.samples[k] == kept && sc.discarded[k] == dropped,
                           fmt::format("{} split {}: {} kept / {} discarded, oracle {} / {}", sc.id, k, sc.samples[k],
                                       sc.discarded[k], kept, dropped));
            }
        }
        fs::remove_all(dir);
    }

    // Channel packing conservation.
    {
        std::uniform_int_distribution<std::size_t> chans(1, 100);
        const std::size_t rows = 4;
        std::vector<double> tf(rows * kTimeFeatures);
        for (std::size_t i = 0; i < tf.size(); ++i) tf[i] = 0.01 * double(i + 1);
        for (int trial = 0; trial < 60; ++trial) {
            const std::size_t c_raw = chans(rng);
            const bool with_tf = trial % 2;
            std::vector<double> w(rows * c_raw);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 + double(i);
            const auto packed = pack_channels(w, rows, c_raw, with_tf ? std::span<const double>(tf) : std::span<const double>());
            bool ok = packed.size() == pack_groups(c_raw, with_tf);
            std::size_t next = 0;
            for (const PackedWindow& p : packed) {
                ok = ok && p.first_source_channel == next && p.data_channels > 0 && p.data_channels <= pack_capacity(with_tf);
                const std::size_t used = p.data_channels + (with_tf ? kTimeFeatures : 0);
                for (std::size_t t = 0; t < rows; ++t)
                    for (std::size_t c = 0; c < kSampleChannels; ++c) {
                        double want = 0.0;
                        if (c < p.data_channels) want = w[t * c_raw + next + c];
                        else if (c < used) want = tf[t * kTimeFeatures + c - p.data_channels];
                        ok = ok && p.values[t * kSampleChannels + c] == want && p.channel_valid[c] == (c < used);
                    }
                next += p.data_channels;
            }
            ok = ok && next == c_raw;
            out.expect(ok, fmt::format("packing {} channels{} loses or misplaces data", c_raw, with_tf ? " with time features" : ""));
        }
    }

    // Per-series cap of 60000 windows.
    {
        out.expect(CorpusConfig{}.cap == 60000, "default cap is not 60000");
        RawSeries s;
        s.id = "long";
        s.length = 1'000'000;
        s.channels = 1;
        s.values.assign(s.length, 1.0);
        s.roles = {ChannelRole::target};
        s.names = {"v"};
        std::mt19937_64 r(6);
        const auto starts = extract_windows(s, Range{0, s.length}, 16, 60000, r);
        const std::size_t eligible = (s.length - kWindowLen) / 16 + 1;
        bool ok = starts.size() == 60000 && eligible > 60000;
        for (std::size_t i = 0; i < starts.size(); ++i)
            ok = ok && starts[i] % 16 == 0 && starts[i] + kWindowLen <= s.length && (i == 0 || starts[i] > starts[i - 1]);
        out.expect(ok, fmt::format("cap: {} of {} eligible windows kept", starts.size(), eligible));

        // Through the pipeline the cap counts samples: two channel groups halve the windows.
        RawSeries wide = random_series({6000, 40, false, 0, 0}, rng, "wide");
        CorpusConfig cfg;
        cfg.stride = 1;
        cfg.cap = 100;
        cfg.mask_prob = 0.0;
        const auto m = build_corpus({wide}, cfg, 13, ctx.work_dir / "cap");
        out.expect(m.series[0].windows[0] == 50 && m.series[0].samples[0] + m.series[0].discarded[0] == 100,
                   "corpus cap does not bound samples per series and split");
        fs::remove_all(ctx.work_dir / "cap");
    }

    // 90/10 split: no window straddles the boundary.
    {
        std::uniform_int_distribution<std::size_t> len(kWindowLen, 40000), stride(1, 64);
        bool ok = true;
        for (int trial = 0; trial < 30; ++trial) {
            const RawSeries s = random_series({len(rng), 1, false, 5, 0}, rng, "split");
            const auto split = split_train_val(s.length, 0.9);
            const std::size_t st = stride(rng);
            ok = ok && split.train == Range{0, static_cast<std::size_t>(std::floor(0.9 * double(s.length)))} &&
                 split.val == Range{split.train.end, s.length};
            std::mt19937_64 r(trial);
            const auto train = extract_windows(s, split.train, st, 1u << 30, r);
            const auto val = extract_windows(s, split.val, st, 1u << 30, r);
            for (std::size_t a : train) ok = ok && a + kWindowLen <= split.train.end;
            for (std::size_t a : val) ok = ok && a >= split.val.begin && a + kWindowLen <= split.val.end;
            ok = ok && train == brute_windows(s, split.train, st) && val == brute_windows(s, split.val, st);
        }
        out.expect(ok, "a window crosses the train/validation boundary or enumeration differs");
    }

    // Masked fraction over more than 10k samples.
    {
        std::vector<RawSeries> list;
        for (int i = 0; i < 10; ++i) list.push_back(random_series({20000, 1, false, 0, 0}, rng, fmt::format("m{}", i)));
        CorpusConfig cfg;
        cfg.stride = 16;
        const fs::path dir = ctx.work_dir / "masked";
        const auto manifest = build_corpus(list, cfg, 14, dir);
        const SampleStats st = scan_corpus(dir, manifest, out);
        const double fraction = double(st.masked) / double(st.samples);
        out.expect(st.samples >= 10000, fmt::format("only {} samples", st.samples));
        out.expect(fraction >= 0.08 && fraction <= 0.12, fmt::format("masked fraction {:.4f}", fraction));
        out.expect(st.worst_mean <= 1e-4 && st.worst_std <= 1e-3 && st.max_abs <= kExtremeValue,
                   "masked corpus violates the normalization invariants");
        out.note(fmt::format("masked {} of {} samples ({:.4f})", st.masked, st.samples, fraction));
        fs::remove_all(dir);
    }
    return out;
}

} // namespace gtt::acceptance
