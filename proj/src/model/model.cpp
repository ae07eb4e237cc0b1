#include "gtt/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

#include "gtt/errors.hpp"

namespace gtt {

namespace {

void require(bool ok, const std::string& message)
{
    if (!ok) {
        throw ConfigError(message);
    }
}

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

} // namespace

void ModelConfig::validate() const
{
    require(n_layers > 0 && embed_dim > 0 && n_heads > 0 && mlp_dim > 0 && patch_size > 0 && context_len > 0 &&
                max_channels > 0,
            "model config extents must be positive");
    require(embed_dim % n_heads == 0, "embed_dim " + std::to_string(embed_dim) + " is not divisible by n_heads " +
                                          std::to_string(n_heads));
    require(context_len % patch_size == 0, "context_len " + std::to_string(context_len) +
                                               " is not divisible by patch_size " + std::to_string(patch_size));
    require(embed_dim % 2 == 0, "embed_dim must be even for the sinusoidal positional encoding");
}

ModelConfig ModelConfig::preset(std::string_view name)
{
    ModelConfig c;
    const std::string key = lower(name);
    c.name = key;
    if (key == "tiny") {
        c.n_layers = 4, c.embed_dim = 384, c.n_heads = 6, c.mlp_dim = 1536;
    } else if (key == "small") {
        c.n_layers = 6, c.embed_dim = 512, c.n_heads = 8, c.mlp_dim = 2048;
    } else if (key == "large") {
        c.n_layers = 8, c.embed_dim = 768, c.n_heads = 12, c.mlp_dim = 3072;
    } else if (key == "micro") {
        c.n_layers = 2, c.embed_dim = 64, c.n_heads = 4, c.mlp_dim = 256;
    } else {
        throw ConfigError("unknown model preset '" + std::string(name) + "' (expected tiny, small, large or micro)");
    }
    return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b)
{
    return a.n_layers == b.n_layers && a.embed_dim == b.embed_dim && a.n_heads == b.n_heads &&
           a.mlp_dim == b.mlp_dim && a.patch_size == b.patch_size && a.context_len == b.context_len &&
           a.max_channels == b.max_channels;
}

std::size_t param_count(const ModelConfig& c)
{
    c.validate();
    const std::size_t d = c.embed_dim, p = c.patch_size, f = c.mlp_dim;
    const std::size_t attention = 4 * (d * d + d);
    const std::size_t norms = 3 * 2 * d;
    const std::size_t mlp = d * f + f + f * d + d;
    return (p * d + d) + c.n_layers * (attention + norms + mlp) + (d * p + p);
}

// ---------------------------------------------------------------- parameters

template <class T>
std::vector<NamedParam<T>> ModelParams<T>::named() const
{
    std::vector<NamedParam<T>> out;
    auto weight = [&](std::string name, const Tensor<T>& t) { out.push_back({std::move(name), t, true, false}); };
    auto plain = [&](std::string name, const Tensor<T>& t) { out.push_back({std::move(name), t, false, false}); };
    weight("patch_embed.weight", patch_w);
    plain("patch_embed.bias", patch_b);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        const std::string pre = "layers." + std::to_string(l) + ".";
        weight(pre + "attn.q.weight", L.attn.w_q);
        plain(pre + "attn.q.bias", L.attn.b_q);
        weight(pre + "attn.k.weight", L.attn.w_k);
        plain(pre + "attn.k.bias", L.attn.b_k);
        weight(pre + "attn.v.weight", L.attn.w_v);
        plain(pre + "attn.v.bias", L.attn.b_v);
        weight(pre + "attn.o.weight", L.attn.w_o);
        plain(pre + "attn.o.bias", L.attn.b_o);
        plain(pre + "ln_t.gamma", L.ln_t.gamma);
        plain(pre + "ln_t.beta", L.ln_t.beta);
        plain(pre + "ln_c.gamma", L.ln_c.gamma);
        plain(pre + "ln_c.beta", L.ln_c.beta);
        plain(pre + "ln_mlp.gamma", L.ln_mlp.gamma);
        plain(pre + "ln_mlp.beta", L.ln_mlp.beta);
        weight(pre + "mlp.fc1.weight", L.w1);
        plain(pre + "mlp.fc1.bias", L.b1);
        weight(pre + "mlp.fc2.weight", L.w2);
        plain(pre + "mlp.fc2.bias", L.b2);
    }
    out.push_back({"head.weight", head_w, true, true});
    out.push_back({"head.bias", head_b, false, true});
    return out;
}

template <class T>
std::size_t ModelParams<T>::count() const
{
    std::size_t n = 0;
    for (const auto& p : named()) {
        n += p.tensor.numel();
    }
    return n;
}

namespace {

template <class To, class From, class Fn>
AttentionParams<To> map_attention(const AttentionParams<From>& a, Fn&& f)
{
    return {f(a.w_q), f(a.b_q), f(a.w_k), f(a.b_k), f(a.w_v), f(a.b_v), f(a.w_o), f(a.b_o)};
}

template <class To, class From, class Fn>
ModelParams<To> map_params(const ModelParams<From>& src, Fn&& f)
{
    ModelParams<To> out;
    out.patch_w = f(src.patch_w);
    out.patch_b = f(src.patch_b);
    for (const auto& L : src.layers) {
        EncoderLayerParams<To> m;
        m.attn = map_attention<To>(L.attn, f);
        m.ln_t = {f(L.ln_t.gamma), f(L.ln_t.beta)};
        m.ln_c = {f(L.ln_c.gamma), f(L.ln_c.beta)};
        m.ln_mlp = {f(L.ln_mlp.gamma), f(L.ln_mlp.beta)};
        m.w1 = f(L.w1);
        m.b1 = f(L.b1);
        m.w2 = f(L.w2);
        m.b2 = f(L.b2);
        out.layers.push_back(std::move(m));
    }
    out.head_w = f(src.head_w);
    out.head_b = f(src.head_b);
    return out;
}

} // namespace

template <class T>
ModelParams<T> ModelParams<T>::clone() const
{
    return map_params<T>(*this, [](const Tensor<T>& t) {
        Tensor<T> c = t.clone();
        c.set_requires_grad(t.requires_grad());
        return c;
    });
}

template <class T>
void ModelParams<T>::set_requires_grad(bool flag)
{
    for (auto& p : named()) {
        p.tensor.set_requires_grad(flag);
    }
}

template <class T>
void ModelParams<T>::zero_grad()
{
    for (auto& p : named()) {
        if (p.tensor.requires_grad()) {
            p.tensor.zero_grad();
        }
    }
}

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& params)
{
    return map_params<To>(params, [](const Tensor<From>& t) {
        std::vector<To> v(t.values().begin(), t.values().end());
        return Tensor<To>(t.shape(), std::move(v), t.requires_grad());
    });
}

template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed)
{
    config.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    constexpr double kStd = 0.02;
    auto weight = [&](Shape shape) {
        std::vector<T> v(shape_numel(shape));
        for (T& x : v) {
            double z;
            do {
                z = normal(rng);
            } while (std::fabs(z) > 2.0);
            x = static_cast<T>(kStd * z);
        }
        return Tensor<T>(std::move(shape), std::move(v), true);
    };
    auto zeros = [](std::size_t n) { return Tensor<T>::zeros({n}, true); };
    auto ones = [](std::size_t n) { return Tensor<T>::full({n}, T(1), true); };

    const std::size_t d = config.embed_dim, p = config.patch_size, f = config.mlp_dim;
    ModelParams<T> out;
    out.patch_w = weight({p, d});
    out.patch_b = zeros(d);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        EncoderLayerParams<T> L;
        L.attn.w_q = weight({d, d});
        L.attn.b_q = zeros(d);
        L.attn.w_k = weight({d, d});
        L.attn.b_k = zeros(d);
        L.attn.w_v = weight({d, d});
        L.attn.b_v = zeros(d);
        L.attn.w_o = weight({d, d});
        L.attn.b_o = zeros(d);
        L.ln_t = {ones(d), zeros(d)};
        L.ln_c = {ones(d), zeros(d)};
        L.ln_mlp = {ones(d), zeros(d)};
        L.w1 = weight({d, f});
        L.b1 = zeros(f);
        L.w2 = weight({f, d});
        L.b2 = zeros(d);
        out.layers.push_back(std::move(L));
    }
    out.head_w = weight({d, p});
    out.head_b = zeros(p);
    return out;
}

// ------------------------------------------------------------------- network

template <class T>
Tensor<T> positional_encoding(std::size_t m, std::size_t d)
{
    if (d == 0 || d % 2 != 0) {
        throw ConfigError("positional encoding width must be even and positive, got " + std::to_string(d));
    }
    std::vector<T> v(m * d);
    for (std::size_t pos = 0; pos < m; ++pos) {
        for (std::size_t i = 0; i < d / 2; ++i) {
            const double angle =
                static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
            v[pos * d + 2 * i] = static_cast<T>(std::sin(angle));
            v[pos * d + 2 * i + 1] = static_cast<T>(std::cos(angle));
        }
    }
    return Tensor<T>({m, d}, std::move(v));
}

template <class T>
Tensor<T> patch_embed(Tape<T>& tape, const Tensor<T>& x, const ModelParams<T>& params, const ModelConfig& config,
                      bool add_position)
{
    if (x.rank() != 3 || x.extent(1) != config.context_len) {
        throw DimensionError("patch_embed expects [B x " + std::to_string(config.context_len) + " x C], got " +
                             shape_string(x.shape()));
    }
    const std::size_t b = x.extent(0), c = x.extent(2), m = config.n_patches(), p = config.patch_size;
    Tensor<T> series = transpose(tape, x, {0, 2, 1});
    Tensor<T> patches = reshape(tape, series, {b * c, m, p});
    Tensor<T> tokens = linear(tape, patches, params.patch_w, params.patch_b);
    if (!add_position) {
        return tokens;
    }
    return add(tape, tokens, positional_encoding<T>(m, config.embed_dim));
}

template <class T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& xq, const Tensor<T>& xkv, const AttentionParams<T>& p,
                    std::size_t heads)
{
    if (xq.rank() != 3 || xkv.rank() != 3 || xq.extent(0) != xkv.extent(0) || xq.extent(2) != xkv.extent(2)) {
        throw DimensionError("attention expects [G x S x D] inputs, got " + shape_string(xq.shape()) + " and " +
                             shape_string(xkv.shape()));
    }
    const std::size_t g = xq.extent(0), sq = xq.extent(1), skv = xkv.extent(1), d = xq.extent(2);
    if (heads == 0 || d % heads != 0) {
        throw DimensionError("width " + std::to_string(d) + " is not divisible into " + std::to_string(heads) +
                             " heads");
    }
    const std::size_t dh = d / heads;
    auto split = [&](const Tensor<T>& t, std::size_t s, std::vector<std::size_t> perm) {
        return transpose(tape, reshape(tape, t, {g, s, heads, dh}), std::move(perm));
    };
    Tensor<T> q = split(linear(tape, xq, p.w_q, p.b_q), sq, {0, 2, 1, 3});   // [G,h,Sq,dh]
    Tensor<T> k = split(linear(tape, xkv, p.w_k, p.b_k), skv, {0, 2, 3, 1}); // [G,h,dh,Skv]
    Tensor<T> v = split(linear(tape, xkv, p.w_v, p.b_v), skv, {0, 2, 1, 3}); // [G,h,Skv,dh]
    Tensor<T> scores = scale(tape, matmul(tape, q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor<T> weights = softmax(tape, scores, -1);
    Tensor<T> ctx = transpose(tape, matmul(tape, weights, v), {0, 2, 1, 3}); // [G,Sq,h,dh]
    return linear(tape, reshape(tape, ctx, {g, sq, d}), p.w_o, p.b_o);
}

template <class T>
Tensor<T> mha(Tape<T>& tape, const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads)
{
    return attention(tape, x, x, p, heads);
}

namespace {

template <class T>
Tensor<T> mlp_block(Tape<T>& tape, const Tensor<T>& z, const EncoderLayerParams<T>& p)
{
    Tensor<T> h = gelu(tape, linear(tape, layer_norm(tape, z, p.ln_mlp.gamma, p.ln_mlp.beta), p.w1, p.b1));
    return add(tape, z, linear(tape, h, p.w2, p.b2));
}

void check_groups(const Shape& s, std::size_t batch, std::size_t channels)
{
    if (s.size() != 3 || batch == 0 || channels == 0 || s[0] != batch * channels) {
        throw DimensionError("encoder layer expects [B*C x M x D] with B=" + std::to_string(batch) +
                             ", C=" + std::to_string(channels) + ", got " + shape_string(s));
    }
}

} // namespace

template <class T>
Tensor<T> encoder_layer(Tape<T>& tape, const Tensor<T>& z, const EncoderLayerParams<T>& p, std::size_t batch,
                        std::size_t channels, std::size_t heads, EncoderTrace<T>* trace)
{
    check_groups(z.shape(), batch, channels);
    const std::size_t m = z.extent(1), d = z.extent(2);

    Tensor<T> t_att = mha(tape, layer_norm(tape, z, p.ln_t.gamma, p.ln_t.beta), p.attn, heads);
    Tensor<T> z1 = add(tape, z, t_att);

    Tensor<T> zc = reshape(tape, transpose(tape, reshape(tape, z1, {batch, channels, m, d}), {0, 2, 1, 3}),
                           {batch * m, channels, d});
    Tensor<T> c_att = mha(tape, layer_norm(tape, zc, p.ln_c.gamma, p.ln_c.beta), p.attn, heads);
    Tensor<T> z2c = add(tape, zc, c_att);
    Tensor<T> z2 = reshape(tape, transpose(tape, reshape(tape, z2c, {batch, m, channels, d}), {0, 2, 1, 3}),
                           {batch * channels, m, d});
    if (trace) {
        trace->temporal_attention = t_att;
        trace->channel_attention = c_att;
    }
    return mlp_block(tape, z2, p);
}

template <class T>
Tensor<T> encoder_layer_last_token(Tape<T>& tape, const Tensor<T>& z, const EncoderLayerParams<T>& p,
                                   std::size_t batch, std::size_t channels, std::size_t heads)
{
    check_groups(z.shape(), batch, channels);
    const std::size_t m = z.extent(1), d = z.extent(2);

    Tensor<T> normed = layer_norm(tape, z, p.ln_t.gamma, p.ln_t.beta);
    Tensor<T> query = slice(tape, normed, 1, m - 1, m);
    Tensor<T> z1 = add(tape, slice(tape, z, 1, m - 1, m), attention(tape, query, normed, p.attn, heads));

    // With a single token per series, the channel stage groups are just the batch.
    Tensor<T> zc = reshape(tape, z1, {batch, channels, d});
    Tensor<T> z2c = add(tape, zc, mha(tape, layer_norm(tape, zc, p.ln_c.gamma, p.ln_c.beta), p.attn, heads));
    return mlp_block(tape, reshape(tape, z2c, {batch * channels, d}), p);
}

template <class T>
ForwardOutput<T> forward(Tape<T>& tape, const Tensor<T>& inputs, std::size_t n_targets, const ModelParams<T>& params,
                         const ModelConfig& config, const ForwardOptions& options)
{
    if (inputs.rank() != 3) {
        throw DimensionError("forward expects inputs [B x T x C], got " + shape_string(inputs.shape()));
    }
    const std::size_t b = inputs.extent(0), c = inputs.extent(2), m = config.n_patches(),
                      d = config.embed_dim, p = config.patch_size;
    if (n_targets == 0 || n_targets > c) {
        throw DimensionError("n_targets " + std::to_string(n_targets) + " outside [1, " + std::to_string(c) + "]");
    }
    if (params.layers.size() != config.n_layers) {
        throw DimensionError("parameters hold " + std::to_string(params.layers.size()) + " layers, config expects " +
                             std::to_string(config.n_layers));
    }

    Tensor<T> z = patch_embed(tape, inputs, params, config);
    Tensor<T> last;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        if (l + 1 == config.n_layers && options.prune_last_layer) {
            last = encoder_layer_last_token(tape, z, params.layers[l], b, c, config.n_heads);
        } else {
            z = encoder_layer(tape, z, params.layers[l], b, c, config.n_heads);
        }
    }
    if (!last.defined()) {
        last = reshape(tape, slice(tape, z, 1, m - 1, m), {b * c, d});
    }
    Tensor<T> head = linear(tape, last, params.head_w, params.head_b); // [B*C, P]
    ForwardOutput<T> out;
    out.all = transpose(tape, reshape(tape, head, {b, c, p}), {0, 2, 1});
    out.targets = n_targets == c ? out.all : slice(tape, out.all, 2, 0, n_targets);
    return out;
}

template <class T>
Tensor<T> masked_mae_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target,
                          std::span<const std::uint8_t> channel_valid)
{
    if (pred.shape() != target.shape() || pred.rank() != 3) {
        throw DimensionError("masked_mae_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                             shape_string(target.shape()));
    }
    const std::size_t b = pred.extent(0), h = pred.extent(1), c = pred.extent(2);
    if (channel_valid.size() != b * c) {
        throw DimensionError("masked_mae_loss: channel_valid has " + std::to_string(channel_valid.size()) +
                             " entries, expected " + std::to_string(b * c));
    }
    std::size_t n_valid = 0;
    for (auto v : channel_valid) {
        n_valid += v ? 1 : 0;
    }
    const auto yp = pred.values();
    const auto yt = target.values();
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < h; ++t) {
            for (std::size_t j = 0; j < c; ++j) {
                if (channel_valid[i * c + j]) {
                    const std::size_t k = (i * h + t) * c + j;
                    total += std::fabs(static_cast<double>(yp[k]) - static_cast<double>(yt[k]));
                }
            }
        }
    }
    const double count = static_cast<double>(n_valid * h);
    if (n_valid == 0) {
        spdlog::warn("masked_mae_loss: batch has no valid channel; loss defined as 0");
    }
    Tensor<T> out = Tensor<T>::scalar(n_valid ? static_cast<T>(total / count) : T(0));
    std::vector<std::uint8_t> mask(channel_valid.begin(), channel_valid.end());
    return tape.record("masked_mae", out, pred.requires_grad(), [pred, target, out, mask, b, h, c, count]() {
        if (count == 0.0) {
            return;
        }
        const T g = static_cast<T>(static_cast<double>(out.grad()[0]) / count);
        const auto yp = pred.values();
        const auto yt = target.values();
        auto dp = pred.grad();
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t t = 0; t < h; ++t) {
                for (std::size_t j = 0; j < c; ++j) {
                    if (mask[i * c + j]) {
                        const std::size_t k = (i * h + t) * c + j;
                        const T diff = yp[k] - yt[k];
                        dp[k] += diff > 0 ? g : (diff < 0 ? -g : T(0));
                    }
                }
            }
        }
    });
}

#define GTT_INSTANTIATE_MODEL(T)                                                                                     \
    template struct ModelParams<T>;                                                                                  \
    template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                       \
    template Tensor<T> positional_encoding<T>(std::size_t, std::size_t);                                             \
    template Tensor<T> patch_embed<T>(Tape<T>&, const Tensor<T>&, const ModelParams<T>&, const ModelConfig&, bool); \
    template Tensor<T> attention<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionParams<T>&,         \
                                    std::size_t);                                                                    \
    template Tensor<T> mha<T>(Tape<T>&, const Tensor<T>&, const AttentionParams<T>&, std::size_t);                   \
    template Tensor<T> encoder_layer<T>(Tape<T>&, const Tensor<T>&, const EncoderLayerParams<T>&, std::size_t,      \
                                        std::size_t, std::size_t, EncoderTrace<T>*);                                 \
    template Tensor<T> encoder_layer_last_token<T>(Tape<T>&, const Tensor<T>&, const EncoderLayerParams<T>&,        \
                                                   std::size_t, std::size_t, std::size_t);                           \
    template ForwardOutput<T> forward<T>(Tape<T>&, const Tensor<T>&, std::size_t, const ModelParams<T>&,            \
                                         const ModelConfig&, const ForwardOptions&);                                 \
    template Tensor<T> masked_mae_loss<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&,                              \
                                          std::span<const std::uint8_t>);

GTT_INSTANTIATE_MODEL(float)
GTT_INSTANTIATE_MODEL(double)

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);

} // namespace gtt
