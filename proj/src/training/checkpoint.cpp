#include <algorithm>
#include <bit>
#include <fstream>
#include <map>

#include <zlib.h>

#include "gtt/errors.hpp"
#include "gtt/training.hpp"

namespace gtt {

namespace fs = std::filesystem;

Checkpoint Checkpoint::clone() const
{
    Checkpoint c = *this;
    c.params = params.clone();
    return c;
}

namespace {

class Writer {
public:
    template <class U>
    void put(U value)
    {
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            bytes.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
        }
    }
    void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
    void put_bytes(std::string_view s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    template <class U>
    U get()
    {
        need(sizeof(U));
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            value |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(U);
        return value;
    }
    float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    std::string get_string(std::size_t n)
    {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const
    {
        if (data_.size() - pos_ < n) {
            throw CheckpointError("corrupt checkpoint: payload ends early");
        }
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> data)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for very large payloads.
    for (std::size_t pos = 0; pos < data.size(); pos += (1u << 30)) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(1u << 30, data.size() - pos));
        crc = crc32(crc, data.data() + pos, n);
    }
    return static_cast<std::uint32_t>(crc);
}

std::map<std::string, Tensor<float>> tensor_map(const Checkpoint& c)
{
    std::map<std::string, Tensor<float>> out;
    const auto named = c.params.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
        out.emplace(named[i].name, named[i].tensor);
        if (i < c.optimizer.m.size()) {
            const Shape& shape = named[i].tensor.shape();
            out.emplace("optimizer.m." + named[i].name, Tensor<float>(shape, c.optimizer.m[i]));
            out.emplace("optimizer.v." + named[i].name, Tensor<float>(shape, c.optimizer.v[i]));
        }
    }
    return out;
}

} // namespace

void save_checkpoint(const Checkpoint& c, const fs::path& path)
{
    nlohmann::json meta;
    meta["format"] = "gtt-checkpoint";
    meta["kind"] = c.kind;
    meta["model"] = to_json(c.model);
    meta["train"] = to_json(c.train);
    meta["step"] = c.step;
    meta["epoch"] = c.epoch;
    meta["batch_in_epoch"] = c.batch_in_epoch;
    meta["optimizer_step"] = c.optimizer.step;
    meta["has_optimizer"] = !c.optimizer.m.empty();
    meta["stopper"] = c.stopper.to_json();
    meta["val_history"] = c.val_history;
    meta["rng"] = {{"shuffle_seed", c.shuffle_seed}};
    const std::string text = meta.dump();

    Writer payload;
    payload.put(static_cast<std::uint32_t>(text.size()));
    payload.put_bytes(text);
    const auto tensors = tensor_map(c); // std::map: sorted by name
    payload.put(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        payload.put(static_cast<std::uint16_t>(name.size()));
        payload.put_bytes(name);
        payload.put(static_cast<std::uint16_t>(t.rank()));
        for (std::size_t d : t.shape()) {
            payload.put(static_cast<std::uint64_t>(d));
        }
        for (float v : t.values()) {
            payload.put_f32(v);
        }
    }

    Writer header;
    header.put(kCheckpointMagic);
    header.put(kCheckpointVersion);
    header.put(static_cast<std::uint64_t>(payload.bytes.size()));
    header.put(crc_of(payload.bytes));

    // Write to a sibling temp file and rename, so an interrupted save never
    // leaves a half-written checkpoint under the final name.
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw CheckpointError("cannot write checkpoint " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(header.bytes.data()), static_cast<std::streamsize>(header.bytes.size()));
        out.write(reinterpret_cast<const char*>(payload.bytes.data()),
                  static_cast<std::streamsize>(payload.bytes.size()));
        if (!out) {
            throw CheckpointError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
    }
}

Checkpoint load_checkpoint(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    constexpr std::size_t kHeader = 4 + 2 + 8 + 4;
    if (bytes.size() < kHeader) {
        throw CheckpointError("corrupt checkpoint " + path.string() + ": file too short");
    }
    Reader header(std::span<const std::uint8_t>(bytes).first(kHeader));
    if (header.get<std::uint32_t>() != kCheckpointMagic) {
        throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
    }
    const auto version = header.get<std::uint16_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto size = header.get<std::uint64_t>();
    const auto crc = header.get<std::uint32_t>();
    if (bytes.size() - kHeader != size) {
        throw CheckpointError("corrupt checkpoint " + path.string() + ": payload is " +
                              std::to_string(bytes.size() - kHeader) + " bytes, header says " + std::to_string(size));
    }
    const auto payload = std::span<const std::uint8_t>(bytes).subspan(kHeader);
    if (crc_of(payload) != crc) {
        throw CheckpointError("corrupt checkpoint " + path.string() + ": checksum mismatch");
    }

    Reader r(payload);
    Checkpoint c;
    std::map<std::string, Tensor<float>> tensors;
    bool has_optimizer = false;
    try {
        const nlohmann::json meta = nlohmann::json::parse(r.get_string(r.get<std::uint32_t>()));
        if (meta.at("format") != "gtt-checkpoint") {
            throw CheckpointError(path.string() + ": unexpected metadata format");
        }
        c.kind = meta.at("kind");
        c.model = model_config_from_json(meta.at("model"));
        c.train = train_config_from_json(meta.at("train"));
        c.step = meta.at("step");
        c.epoch = meta.at("epoch");
        c.batch_in_epoch = meta.at("batch_in_epoch");
        c.optimizer.step = meta.at("optimizer_step");
        has_optimizer = meta.at("has_optimizer");
        c.stopper = EarlyStopper::from_json(meta.at("stopper"));
        c.val_history = meta.at("val_history").get<std::vector<double>>();
        c.shuffle_seed = meta.at("rng").at("shuffle_seed");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + ": bad metadata: " + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(path.string() + ": bad configuration: " + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_string(r.get<std::uint16_t>());
        Shape shape(r.get<std::uint16_t>());
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.get<std::uint64_t>());
        }
        const std::size_t n = shape_numel(shape);
        if (n == 0 || n > bytes.size()) {
            throw CheckpointError(path.string() + ": tensor '" + name + "' has an invalid shape");
        }
        std::vector<float> values(n);
        for (float& v : values) {
            v = r.get_f32();
        }
        tensors.emplace(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
    }
    if (!r.done()) {
        throw CheckpointError(path.string() + ": trailing bytes after the tensor table");
    }

    c.params = init_params<float>(c.model, 0);
    const auto named = c.params.named();
    for (const auto& p : named) {
        const auto it = tensors.find(p.name);
        if (it == tensors.end()) {
            throw CheckpointError(path.string() + ": missing tensor '" + p.name + "'");
        }
        if (it->second.shape() != p.tensor.shape()) {
            throw CheckpointError(path.string() + ": tensor '" + p.name + "' has shape " +
                                  shape_string(it->second.shape()) + ", model expects " +
                                  shape_string(p.tensor.shape()));
        }
        Tensor<float> dst = p.tensor;
        std::copy(it->second.values().begin(), it->second.values().end(), dst.mutable_values().begin());
    }
    if (has_optimizer) {
        for (const auto& p : named) {
            const auto m = tensors.find("optimizer.m." + p.name);
            const auto v = tensors.find("optimizer.v." + p.name);
            if (m == tensors.end() || v == tensors.end()) {
                throw CheckpointError(path.string() + ": missing optimizer state for '" + p.name + "'");
            }
            c.optimizer.m.emplace_back(m->second.values().begin(), m->second.values().end());
            c.optimizer.v.emplace_back(v->second.values().begin(), v->second.values().end());
        }
    }
    const std::size_t expected = named.size() * (has_optimizer ? 3 : 1);
    if (tensors.size() != expected) {
        throw CheckpointError(path.string() + ": " + std::to_string(tensors.size()) + " tensors, expected " +
                              std::to_string(expected));
    }
    return c;
}

} // namespace gtt
