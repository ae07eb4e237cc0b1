#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "gtt/datapipe.hpp"
#include "gtt/errors.hpp"
#include "gtt/rng.hpp"

namespace gtt {

namespace fs = std::filesystem;

namespace {

const char* const kSplitNames[2] = {"train", "val"};

class ShardWriter {
public:
    ShardWriter(fs::path dir, std::string split, std::size_t records_per_shard, std::vector<ShardInfo>& index)
        : dir_(std::move(dir)), split_(std::move(split)), per_shard_(records_per_shard), index_(index)
    {
    }
    ShardWriter(const ShardWriter&) = delete;
    ShardWriter& operator=(const ShardWriter&) = delete;
    ~ShardWriter() { close(); }

    void write(const TrainingSample& sample)
    {
        if (!out_.is_open() || current_ == per_shard_) {
            open_next();
        }
        buffer_.clear();
        encode_record(sample, buffer_);
        out_.write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
        if (!out_) {
            throw DataError("write failed: " + (dir_ / index_[slot_].path).string());
        }
        ++current_;
        index_[slot_].records = current_;
    }

    void close()
    {
        if (out_.is_open()) {
            out_.close();
        }
    }

private:
    void open_next()
    {
        close();
        std::ostringstream name;
        name << split_ << '-' << std::setw(5) << std::setfill('0') << shards_++ << ".bin";
        index_.push_back(ShardInfo{name.str(), split_, 0});
        slot_ = index_.size() - 1;
        out_.open(dir_ / name.str(), std::ios::binary | std::ios::trunc);
        if (!out_) {
            throw DataError("cannot create shard " + (dir_ / name.str()).string());
        }
        current_ = 0;
    }

    fs::path dir_;
    std::string split_;
    std::size_t per_shard_;
    std::vector<ShardInfo>& index_;
    std::ofstream out_;
    std::size_t slot_ = 0;
    std::size_t shards_ = 0;
    std::size_t current_ = 0;
    std::vector<std::uint8_t> buffer_;
};

} // namespace

CorpusManifest build_corpus(const std::vector<RawSeries>& series_list, const CorpusConfig& config,
                            std::uint64_t seed, const fs::path& dir)
{
    if (config.stride == 0 || config.shard_records == 0 || config.mask_prob < 0.0 || config.mask_prob > 1.0 ||
        config.train_fraction <= 0.0 || config.train_fraction >= 1.0) {
        throw ConfigError("invalid corpus config (stride, shard_records, mask_prob or train_fraction)");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw DataError("cannot create corpus directory " + dir.string() + ": " + ec.message());
    }
    CorpusManifest manifest;
    manifest.seed = seed;
    manifest.config = config;
    std::vector<ShardInfo> train_index, val_index;
    {
        ShardWriter writers[2] = {{dir, "train", config.shard_records, train_index},
                                  {dir, "val", config.shard_records, val_index}};
        const std::uint64_t corpus_seed = substream_seed(seed, "corpus");
        const std::uint64_t mask_seed = substream_seed(seed, "mask");

        for (std::size_t i = 0; i < series_list.size(); ++i) {
            series_list[i].validate();
            const RawSeries s = series_list[i].targets_first();
            const std::vector<double> tf =
                s.has_timestamps() ? encode_time_features(s.timestamps) : std::vector<double>{};
            const std::size_t groups = pack_groups(s.channels, s.has_timestamps());
            const std::size_t window_cap = config.cap / groups;
            if (window_cap == 0) {
                spdlog::warn("series '{}': {} channel groups exceed the per-series cap {}; skipped", s.id, groups,
                             config.cap);
            }
            std::mt19937_64 window_rng(indexed_seed(corpus_seed, i));
            std::mt19937_64 mask_rng(indexed_seed(mask_seed, i));
            const SplitRanges split = split_train_val(s.length, config.train_fraction);
            SeriesCounts counts;
            counts.id = s.id;
            std::vector<double> window(kWindowLen * s.channels);
            for (int k = 0; k < 2; ++k) {
                const Range range = k == 0 ? split.train : split.val;
                const auto starts = extract_windows(s, range, config.stride, window_cap, window_rng);
                counts.windows[k] = starts.size();
                for (std::size_t start : starts) {
                    std::copy(s.values.begin() + static_cast<std::ptrdiff_t>(start * s.channels),
                              s.values.begin() + static_cast<std::ptrdiff_t>((start + kWindowLen) * s.channels),
                              window.begin());
                    std::span<const double> tf_window;
                    if (!tf.empty()) {
                        tf_window = std::span<const double>(tf).subspan(start * kTimeFeatures,
                                                                        kWindowLen * kTimeFeatures);
                    }
                    for (const PackedWindow& packed : pack_channels(window, kWindowLen, s.channels, tf_window)) {
                        const std::size_t m = draw_mask_length(mask_rng, config.mask_prob);
                        std::optional<TrainingSample> sample =
                            normalize_sample(packed.values, packed.channel_valid,
                                             config.mask_before_normalize ? m : 0);
                        if (!sample) {
                            ++counts.discarded[k];
                            continue;
                        }
                        if (m > 0) {
                            apply_context_mask_length(*sample, m);
                            ++counts.masked[k];
                        }
                        writers[k].write(*sample);
                        ++counts.samples[k];
                    }
                }
            }
            spdlog::debug("series '{}': train {} samples ({} discarded), val {} samples ({} discarded)", s.id,
                          counts.samples[0], counts.discarded[0], counts.samples[1], counts.discarded[1]);
            manifest.series.push_back(std::move(counts));
        }
    }
    manifest.shards = train_index;
    manifest.shards.insert(manifest.shards.end(), val_index.begin(), val_index.end());
    manifest.save(dir / "manifest.json");
    return manifest;
}

std::size_t CorpusManifest::total(const std::string& split) const
{
    std::size_t n = 0;
    for (const auto& s : shards) {
        if (s.split == split) {
            n += s.records;
        }
    }
    return n;
}

nlohmann::json CorpusConfig::to_json() const
{
    return {{"stride", stride},
            {"cap", cap},
            {"train_fraction", train_fraction},
            {"mask_prob", mask_prob},
            {"mask_before_normalize", mask_before_normalize},
            {"shard_records", shard_records}};
}

CorpusConfig CorpusConfig::from_json(const nlohmann::json& j, CorpusConfig base)
{
    if (!j.is_object()) {
        throw ConfigError("corpus config must be a JSON object");
    }
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "stride") base.stride = value;
            else if (key == "cap") base.cap = value;
            else if (key == "train_fraction") base.train_fraction = value;
            else if (key == "mask_prob") base.mask_prob = value;
            else if (key == "mask_before_normalize") base.mask_before_normalize = value;
            else if (key == "shard_records") base.shard_records = value;
            else throw ConfigError("unknown corpus key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("corpus config: ") + e.what());
    }
    return base;
}

void CorpusManifest::save(const fs::path& path) const
{
    nlohmann::json j;
    j["format"] = "gtt-corpus";
    j["version"] = 1;
    j["seed"] = seed;
    j["record_bytes"] = kRecordBytes;
    j["config"] = config.to_json();
    j["shards"] = nlohmann::json::array();
    for (const auto& s : shards) {
        j["shards"].push_back({{"path", s.path}, {"split", s.split}, {"records", s.records}});
    }
    j["series"] = nlohmann::json::array();
    for (const auto& s : series) {
        nlohmann::json entry{{"id", s.id}};
        for (int k = 0; k < 2; ++k) {
            entry[kSplitNames[k]] = {{"windows", s.windows[k]},
                                     {"samples", s.samples[k]},
                                     {"discarded", s.discarded[k]},
                                     {"masked", s.masked[k]}};
        }
        j["series"].push_back(entry);
    }
    j["totals"] = {{"train", total("train")}, {"val", total("val")}};
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) {
        throw DataError("cannot write manifest " + path.string());
    }
}

CorpusManifest CorpusManifest::load(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest " + path.string());
    }
    CorpusManifest m;
    try {
        const nlohmann::json j = nlohmann::json::parse(in);
        if (j.at("format") != "gtt-corpus" || j.at("version") != 1) {
            throw DataError("unsupported manifest format in " + path.string());
        }
        m.seed = j.at("seed").get<std::uint64_t>();
        try {
            m.config = CorpusConfig::from_json(j.at("config"));
        } catch (const ConfigError& e) {
            throw DataError(path.string() + ": " + e.what());
        }
        for (const auto& s : j.at("shards")) {
            m.shards.push_back({s.at("path"), s.at("split"), s.at("records")});
        }
        for (const auto& s : j.at("series")) {
            SeriesCounts sc;
            sc.id = s.at("id");
            for (int k = 0; k < 2; ++k) {
                const auto& e = s.at(kSplitNames[k]);
                sc.windows[k] = e.at("windows");
                sc.samples[k] = e.at("samples");
                sc.discarded[k] = e.at("discarded");
                sc.masked[k] = e.at("masked");
            }
            m.series.push_back(std::move(sc));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
}

std::vector<TrainingSample> read_shard(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open shard " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % kRecordBytes != 0) {
        throw DataError("shard " + path.string() + " size " + std::to_string(bytes.size()) +
                        " is not a multiple of the record size " + std::to_string(kRecordBytes));
    }
    std::vector<TrainingSample> out;
    out.reserve(bytes.size() / kRecordBytes);
    for (std::size_t pos = 0; pos < bytes.size(); pos += kRecordBytes) {
        try {
            out.push_back(decode_record(std::span<const std::uint8_t>(bytes).subspan(pos, kRecordBytes)));
        } catch (const std::runtime_error& e) {
            throw DataError(path.string() + " record " + std::to_string(pos / kRecordBytes) + ": " + e.what());
        }
    }
    return out;
}

std::vector<TrainingSample> load_split(const fs::path& dir, const std::string& split)
{
    const CorpusManifest manifest = CorpusManifest::load(dir / "manifest.json");
    std::vector<TrainingSample> out;
    for (const auto& shard : manifest.shards) {
        if (shard.split != split) {
            continue;
        }
        auto records = read_shard(dir / shard.path);
        if (records.size() != shard.records) {
            throw DataError("shard " + shard.path + " holds " + std::to_string(records.size()) +
                            " records, manifest says " + std::to_string(shard.records));
        }
        std::move(records.begin(), records.end(), std::back_inserter(out));
    }
    return out;
}

} // namespace gtt
