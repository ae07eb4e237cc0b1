#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "gtt/datapipe.hpp"
#include "gtt/errors.hpp"
#include "gtt/synthetic.hpp"

using namespace gtt;
namespace fs = std::filesystem;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

RawSeries make_series(std::size_t length, std::size_t channels, std::uint64_t seed = 1)
{
    RawSeries s;
    s.id = "s" + std::to_string(seed);
    s.length = length;
    s.channels = channels;
    s.values.resize(length * channels);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    for (double& v : s.values) v = n(rng);
    s.roles.assign(channels, ChannelRole::target);
    for (std::size_t c = 0; c < channels; ++c) s.names.push_back("c" + std::to_string(c));
    return s;
}

/// Independent window enumeration: test every grid start, scanning every cell.
std::vector<std::size_t> brute_windows(const RawSeries& s, Range r, std::size_t stride, std::size_t w = kWindowLen)
{
    std::vector<std::size_t> out;
    for (std::size_t start = r.begin; start + w <= r.end; start += stride) {
        bool ok = true;
        for (std::size_t t = start; t < start + w; ++t)
            for (std::size_t c = 0; c < s.channels; ++c) ok = ok && !std::isnan(s.at(t, c));
        if (ok) out.push_back(start);
    }
    return out;
}

fs::path temp_dir(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("gtt_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> file_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("parse_iso8601")
{
    CHECK(parse_iso8601("2016-07-01 00:00:00") == 1467331200);
    CHECK(parse_iso8601("2016-07-01T00:00:00") == 1467331200);
    CHECK(parse_iso8601("2016-07-01") == 1467331200);
    CHECK(parse_iso8601("2016-07-01T00:00:00Z") == 1467331200);
    CHECK(parse_iso8601("2016-07-01T05:30:00+05:30") == 1467331200);
    CHECK(parse_iso8601("2024-01-01 12:30:15.250") == 1704112215);
    CHECK(parse_iso8601("1969-12-31 23:59:59") == -1);
    CHECK(parse_iso8601(" 2016-07-01 00:00 ") == 1467331200);
    CHECK_FALSE(parse_iso8601("2023-02-30"));
    CHECK_FALSE(parse_iso8601("2023-02-01 25:00"));
    CHECK_FALSE(parse_iso8601("12.5"));
    CHECK_FALSE(parse_iso8601("2023-02-01x"));
    CHECK(format_timestamp(1704112215) == "2024-01-01 12:30:15");
    CHECK(format_timestamp(-1) == "1969-12-31 23:59:59");
}

TEST_CASE("time features")
{
    const std::int64_t monday_midnight = *parse_iso8601("2024-01-01 00:00:00");
    const std::int64_t noon = *parse_iso8601("2024-01-01 12:00:00");
    const std::int64_t sunday_july = *parse_iso8601("2023-07-16 06:00:00");
    const std::vector<std::int64_t> ts{monday_midnight, noon, sunday_july};
    const auto f = encode_time_features(ts);
    CHECK(f[0] == 0.0);
    CHECK(f[1] == 1.0);
    CHECK(std::fabs(f[6 + 0]) < 1e-12);
    CHECK(f[6 + 1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(f[2] == 0.0); // Monday
    CHECK(f[3] == 1.0);
    CHECK(f[4] == 0.0); // January
    CHECK(f[5] == 1.0);
    // 06:00 -> quarter day; Sunday -> 6/7; July -> 6/12
    CHECK(f[12 + 0] == doctest::Approx(1.0));
    CHECK(f[12 + 2] == doctest::Approx(std::sin(2 * std::numbers::pi * 6 / 7)));
    CHECK(f[12 + 5] == doctest::Approx(-1.0));
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::int64_t> u(-2000000000, 4000000000);
    std::vector<std::int64_t> many(500);
    for (auto& t : many) t = u(rng);
    const auto g = encode_time_features(many);
    for (std::size_t i = 0; i < many.size(); ++i)
        for (int k = 0; k < 3; ++k) {
            const double s = g[i * 6 + 2 * k], c = g[i * 6 + 2 * k + 1];
            CHECK(std::fabs(s * s + c * c - 1.0) < 1e-12);
        }
}

TEST_CASE("split_train_val")
{
    auto s = split_train_val(1000);
    CHECK(s.train == Range{0, 900});
    CHECK(s.val == Range{900, 1000});
    s = split_train_val(1088);
    CHECK(s.train == Range{0, 979});
    std::mt19937_64 rng(1);
    CHECK(extract_windows(make_series(1088, 1), s.train, 1, 60000, rng).empty());

    const RawSeries long_series = make_series(12000, 1);
    const auto split = split_train_val(12000);
    CHECK(extract_windows(long_series, split.train, 16, 60000, rng).size() ==
          brute_windows(long_series, split.train, 16).size());
    CHECK(brute_windows(long_series, split.train, 16).size() == 608);
}

TEST_CASE("extract_windows")
{
    std::mt19937_64 rng(9);
    SUBCASE("a missing value blocks every window covering it")
    {
        RawSeries s = make_series(1588, 2);
        s.values[500 * 2 + 1] = kNaN;
        CHECK(extract_windows(s, Range{0, 1588}, 1, 60000, rng).empty());
        CHECK(brute_windows(s, Range{0, 1588}, 1).empty());
        s = make_series(3000, 2);
        s.values[500 * 2] = kNaN;
        const auto got = extract_windows(s, Range{0, 3000}, 1, 60000, rng);
        CHECK(got == brute_windows(s, Range{0, 3000}, 1));
        CHECK(got.front() == 501);
    }
    SUBCASE("randomized against brute force")
    {
        for (int trial = 0; trial < 20; ++trial) {
            RawSeries s = make_series(2000 + trial * 150, 3, trial);
            std::uniform_int_distribution<std::size_t> cell(0, s.values.size() - 1);
            for (int k = 0; k < trial % 5; ++k) s.values[cell(rng)] = kNaN;
            const std::size_t stride = 1 + trial * 7;
            const Range r{static_cast<std::size_t>(trial * 13), s.length - trial};
            CHECK(extract_windows(s, r, stride, 60000, rng) == brute_windows(s, r, stride));
        }
    }
    SUBCASE("non-overlapping stride")
    {
        const RawSeries s = make_series(5000, 1);
        CHECK(extract_windows(s, Range{0, 5000}, kWindowLen, 60000, rng).size() == 5000 / kWindowLen);
    }
    SUBCASE("cap draws distinct eligible starts")
    {
        const RawSeries s = make_series(kWindowLen + 99, 1);
        const auto all = extract_windows(s, Range{0, s.length}, 1, 60000, rng);
        REQUIRE(all.size() == 100);
        const auto some = extract_windows(s, Range{0, s.length}, 1, 10, rng);
        CHECK(some.size() == 10);
        CHECK(std::is_sorted(some.begin(), some.end()));
        CHECK(std::adjacent_find(some.begin(), some.end()) == some.end());
        for (auto st : some) CHECK(std::binary_search(all.begin(), all.end(), st));
    }
}

TEST_CASE("pack_channels")
{
    const std::size_t rows = 3;
    auto window = [&](std::size_t c) {
        std::vector<double> w(rows * c);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 + static_cast<double>(i);
        return w;
    };
    const std::vector<double> tf(rows * kTimeFeatures, 0.5);

    auto packed = pack_channels(window(7), rows, 7, tf);
    REQUIRE(packed.size() == 1);
    CHECK(std::count(packed[0].channel_valid.begin(), packed[0].channel_valid.end(), 1) == 13);
    for (std::size_t c = 0; c < 32; ++c) CHECK(packed[0].channel_valid[c] == (c < 13 ? 1 : 0));
    for (std::size_t t = 0; t < rows; ++t) {
        for (std::size_t c = 0; c < 7; ++c) CHECK(packed[0].values[t * 32 + c] == window(7)[t * 7 + c]);
        for (std::size_t c = 7; c < 13; ++c) CHECK(packed[0].values[t * 32 + c] == 0.5);
        for (std::size_t c = 13; c < 32; ++c) CHECK(packed[0].values[t * 32 + c] == 0.0);
    }

    packed = pack_channels(window(26), rows, 26, tf);
    REQUIRE(packed.size() == 1);
    CHECK(std::count(packed[0].channel_valid.begin(), packed[0].channel_valid.end(), 1) == 32);

    packed = pack_channels(window(60), rows, 60, tf);
    REQUIRE(packed.size() == 3);
    CHECK(packed[0].data_channels == 26);
    CHECK(packed[1].data_channels == 26);
    CHECK(packed[2].data_channels == 8);
    CHECK(pack_groups(60, true) == (60 + 25) / 26);

    packed = pack_channels(window(40), rows, 40, {});
    REQUIRE(packed.size() == 2);
    CHECK(packed[0].data_channels == 32);
    CHECK(std::count(packed[1].channel_valid.begin(), packed[1].channel_valid.end(), 1) == 8);

    // Conservation: every raw column appears exactly once among the packed data channels.
    for (std::size_t c_raw : {1, 25, 26, 27, 52, 77}) {
        for (bool with_tf : {false, true}) {
            const auto w = window(c_raw);
            const auto p = pack_channels(w, rows, c_raw, with_tf ? std::span<const double>(tf) : std::span<const double>());
            std::multiset<std::vector<double>> original, recovered;
            for (std::size_t c = 0; c < c_raw; ++c) {
                std::vector<double> col;
                for (std::size_t t = 0; t < rows; ++t) col.push_back(w[t * c_raw + c]);
                original.insert(col);
            }
            for (const auto& pw : p)
                for (std::size_t c = 0; c < pw.data_channels; ++c) {
                    std::vector<double> col;
                    for (std::size_t t = 0; t < rows; ++t) col.push_back(pw.values[t * 32 + c]);
                    recovered.insert(col);
                }
            CHECK(original == recovered);
        }
    }
}

TEST_CASE("normalize_sample")
{
    std::array<std::uint8_t, 32> valid{};
    valid[0] = valid[1] = 1;
    std::vector<double> w(kWindowLen * 32, 0.0);

    SUBCASE("constant and alternating channels")
    {
        for (std::size_t t = 0; t < kWindowLen; ++t) {
            w[t * 32] = 7.5;
            w[t * 32 + 1] = (t % 2) ? 2.0 : 0.0;
        }
        const auto s = normalize_sample(w, valid);
        REQUIRE(s);
        for (std::size_t t = 0; t < kContextLen; ++t) {
            CHECK(s->context[t * 32] == 0.0f);
            CHECK(std::fabs(std::fabs(s->context[t * 32 + 1]) - 1.0) < 1e-7);
        }
        CHECK(s->norm_mean[1] == 1.0f);
        CHECK(s->norm_std[1] == 1.0f);
        CHECK(s->norm_std[0] == 0.0f);
    }
    SUBCASE("extreme target discards")
    {
        std::mt19937_64 rng(4);
        std::normal_distribution<double> n;
        for (std::size_t t = 0; t < kWindowLen; ++t) w[t * 32] = n(rng);
        valid[1] = 0;
        REQUIRE(normalize_sample(w, valid));
        double mean = 0, var = 0;
        for (std::size_t t = 0; t < kContextLen; ++t) mean += w[t * 32];
        mean /= kContextLen;
        for (std::size_t t = 0; t < kContextLen; ++t) var += (w[t * 32] - mean) * (w[t * 32] - mean);
        const double sd = std::sqrt(var / kContextLen);
        w[(kContextLen + 10) * 32] = mean + 10 * sd;
        CHECK_FALSE(normalize_sample(w, valid));
        w[(kContextLen + 10) * 32] = mean + 8.9 * sd;
        CHECK(normalize_sample(w, valid));
    }
    SUBCASE("statistics over the unmasked region")
    {
        std::mt19937_64 rng(5);
        std::normal_distribution<double> n(3.0, 2.0);
        for (std::size_t t = 0; t < kWindowLen; ++t) w[t * 32] = n(rng) + (t < 500 ? 50.0 : 0.0);
        valid[1] = 0;
        const auto s = normalize_sample(w, valid, 500);
        REQUIRE(s);
        CHECK(s->context_valid_from == 500);
        double mean = 0, var = 0;
        for (std::size_t t = 500; t < kContextLen; ++t) mean += s->context[t * 32];
        mean /= (kContextLen - 500);
        for (std::size_t t = 500; t < kContextLen; ++t) var += (s->context[t * 32] - mean) * (s->context[t * 32] - mean);
        CHECK(std::fabs(mean) < 1e-5);
        CHECK(std::fabs(std::sqrt(var / (kContextLen - 500)) - 1.0) < 1e-3);
        for (std::size_t t = 0; t < 500; ++t) CHECK(s->context[t * 32] == 0.0f);
    }
}

TEST_CASE("context masking")
{
    TrainingSample s;
    std::fill(s.context.begin(), s.context.end(), 1.0f);
    std::mt19937_64 rng(7);
    TrainingSample same = s;
    apply_context_mask(same, rng, 0.0);
    CHECK(same == s);

    apply_context_mask_length(s, 960);
    CHECK(s.context_valid_from == 960);
    for (std::size_t t = 0; t < kContextLen; ++t) CHECK(s.context[t * 32 + 5] == (t < 960 ? 0.0f : 1.0f));

    std::size_t masked = 0;
    std::size_t lo = 2000, hi = 0;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t m = draw_mask_length(rng);
        if (m) {
            ++masked;
            lo = std::min(lo, m);
            hi = std::max(hi, m);
        }
    }
    CHECK(masked >= 800);
    CHECK(masked <= 1200);
    CHECK(lo >= 1);
    CHECK(hi <= 960);
}

TEST_CASE("sample records round trip")
{
    std::mt19937_64 rng(8);
    std::normal_distribution<float> n;
    TrainingSample s;
    for (float& v : s.context) v = n(rng);
    for (float& v : s.target) v = n(rng);
    s.channel_valid[0] = s.channel_valid[3] = s.channel_valid[31] = 1;
    s.context_valid_from = 123;
    s.norm_mean[3] = 2.5f;
    s.norm_std[31] = 0.25f;
    std::vector<std::uint8_t> bytes;
    encode_record(s, bytes);
    CHECK(bytes.size() == 139534);
    CHECK(kRecordBytes == 139534);
    CHECK(bytes[0] == 0x31);
    CHECK(bytes[3] == 0x47);
    CHECK(bytes[8] == 0x09); // channels 0 and 3
    CHECK(bytes[11] == 0x80); // channel 31
    CHECK(decode_record(bytes) == s);
    bytes[0] ^= 1;
    CHECK_THROWS(decode_record(bytes));
}

TEST_CASE("read_csv")
{
    const fs::path dir = temp_dir("csv");
    {
        std::ofstream f(dir / "data.csv");
        f << "date,load,temp,\"id\"\n"
          << "2020-01-01 00:00:00,1.5,3,7\n"
          << "2020-01-01 01:00:00,,4,7\n"
          << "2020-01-01 02:00:00,2.5,NA,7\r\n";
    }
    RawSeries s = read_csv(dir / "data.csv");
    CHECK(s.length == 3);
    CHECK(s.channels == 3);
    CHECK(s.names == std::vector<std::string>{"load", "temp", "id"});
    CHECK(s.timestamps[1] - s.timestamps[0] == 3600);
    CHECK(std::isnan(s.at(1, 0)));
    CHECK(std::isnan(s.at(2, 1)));
    CHECK(s.at(2, 0) == 2.5);
    CHECK(s.target_count() == 3);

    {
        std::ofstream f(dir / "roles.json");
        f << R"({"timestamp": "date", "targets": ["temp"], "ignore": ["id"]})";
    }
    s = read_csv(dir / "data.csv", ColumnRoles::load(dir / "roles.json"));
    CHECK(s.channels == 2);
    CHECK(s.roles == std::vector<ChannelRole>{ChannelRole::covariate, ChannelRole::target});
    const RawSeries ordered = s.targets_first();
    CHECK(ordered.names == std::vector<std::string>{"temp", "load"});
    CHECK(ordered.at(0, 0) == 3.0);

    {
        std::ofstream f(dir / "bad_roles.json");
        f << R"({"target": ["temp"]})";
    }
    CHECK_THROWS_AS(ColumnRoles::load(dir / "bad_roles.json"), ConfigError);
    {
        std::ofstream f(dir / "bad.csv");
        f << "a,b\n1,x\n";
    }
    CHECK_THROWS_AS(read_csv(dir / "bad.csv"), DataError);
    CHECK_THROWS_AS(read_csv(dir / "missing.csv"), DataError);
    fs::remove_all(dir);
}

TEST_CASE("build_corpus")
{
    const fs::path dir = temp_dir("corpus");
    SUBCASE("empty input")
    {
        const auto m = build_corpus({}, CorpusConfig{}, 1, dir);
        CHECK(m.total("train") == 0);
        CHECK(CorpusManifest::load(dir / "manifest.json").series.empty());
    }
    SUBCASE("counts match enumeration")
    {
        RawSeries s = make_series(10880, 1);
        CorpusConfig cfg;
        cfg.stride = kWindowLen;
        cfg.mask_prob = 0.0;
        const auto m = build_corpus({s}, cfg, 1, dir);
        const auto split = split_train_val(s.length);
        CHECK(m.series[0].windows[0] == brute_windows(s, split.train, kWindowLen).size());
        CHECK(m.series[0].windows[1] == brute_windows(s, split.val, kWindowLen).size());
        CHECK(m.series[0].windows[0] + m.series[0].windows[1] == 10);
        CHECK(m.total("train") + m.series[0].discarded[0] == 9);
        CHECK(load_split(dir, "train").size() == m.total("train"));
    }
    SUBCASE("deterministic bytes and split disjointness")
    {
        SyntheticSpec spec;
        spec.n_series = 2;
        spec.length = 6000;
        spec.channels = 30;
        spec.timestamps = true;
        spec.noise_std = 0.1;
        std::vector<RawSeries> list;
        for (auto& g : generate_synthetic(spec)) list.push_back(g.series);
        list[0].values[3000 * 30 + 4] = kNaN;
        CorpusConfig cfg;
        cfg.stride = 64;
        cfg.shard_records = 40;
        const auto a = build_corpus(list, cfg, 42, dir / "a");
        const auto b = build_corpus(list, cfg, 42, dir / "b");
        REQUIRE(a.shards.size() == b.shards.size());
        CHECK(a.shards.size() > 2);
        for (const auto& sh : a.shards) CHECK(file_bytes(dir / "a" / sh.path) == file_bytes(dir / "b" / sh.path));
        CHECK(file_bytes(dir / "a" / "manifest.json") == file_bytes(dir / "b" / "manifest.json"));
        const auto c = build_corpus(list, cfg, 43, dir / "c");
        CHECK(file_bytes(dir / "a" / a.shards[0].path) != file_bytes(dir / "c" / c.shards[0].path));
        // 30 data channels with time features pack into two samples per window.
        CHECK(a.series[0].samples[0] + a.series[0].discarded[0] == 2 * a.series[0].windows[0]);
        const auto train = load_split(dir / "a", "train");
        CHECK(train.size() == a.total("train"));
        for (const auto& smp : train) {
            const int n_valid = std::count(smp.channel_valid.begin(), smp.channel_valid.end(), 1);
            CHECK((n_valid == 32 || n_valid == 10));
        }
    }
    SUBCASE("cap applies per series and split")
    {
        RawSeries s = make_series(9000, 40);
        CorpusConfig cfg;
        cfg.stride = 1;
        cfg.cap = 100;
        cfg.mask_prob = 0.0;
        const auto m = build_corpus({s}, cfg, 3, dir);
        CHECK(m.series[0].windows[0] == 50); // two channel groups per window
        CHECK(m.series[0].samples[0] + m.series[0].discarded[0] == 100);
        CHECK(m.series[0].samples[1] + m.series[0].discarded[1] <= 100);
    }
    fs::remove_all(dir);
}

TEST_CASE("synthetic generator")
{
    SyntheticSpec spec;
    spec.components = 1;
    spec.amplitude = {1.0, 1.0};
    spec.period = {128.0, 128.0};
    spec.phase = {0.0, 0.0};
    spec.offset = {0.0, 0.0};
    spec.length = 1000;
    const auto g = generate_synthetic(spec);
    REQUIRE(g.size() == 1);
    const auto& v = g[0].series.values;
    CHECK(std::fabs(*std::max_element(v.begin(), v.end()) - 1.0) < 1e-6);
    CHECK(g[0].truth["channels"][0]["terms"][0]["period"] == 128.0);

    SyntheticSpec other;
    other.n_series = 3;
    other.seed = 9;
    other.generator = "random-walk";
    CHECK(generate_synthetic(other)[2].series.values == generate_synthetic(other)[2].series.values);
    other.n_series = 0;
    CHECK(generate_synthetic(other).empty());
    CHECK_THROWS_AS(SyntheticSpec::from_json(nlohmann::json{{"lenght", 5}}), ConfigError);
    CHECK_THROWS_AS(SyntheticSpec::from_json(nlohmann::json{{"generator", "chaos"}}), ConfigError);
    CHECK(SyntheticSpec::from_json(spec.to_json()).to_json() == spec.to_json());

    const fs::path dir = temp_dir("synth");
    spec.timestamps = true;
    const auto series = generate_synthetic(spec)[0].series;
    write_csv(series, dir / "s.csv");
    const RawSeries back = read_csv(dir / "s.csv");
    CHECK(back.timestamps == series.timestamps);
    CHECK(back.values == series.values);
    fs::remove_all(dir);
}
