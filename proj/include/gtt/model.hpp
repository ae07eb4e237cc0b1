#pragma once

// GTT network: channel-wise patch embedding, encoder layers whose temporal and
// channel attention stages share one set of projections, and a linear head
// shared across channels.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gtt/ops.hpp"

namespace gtt {

struct ModelConfig {
    std::string name = "micro";
    std::size_t n_layers = 2;
    std::size_t embed_dim = 64;
    std::size_t n_heads = 4;
    std::size_t mlp_dim = 256;
    std::size_t patch_size = 64;
    std::size_t context_len = 1024;
    std::size_t max_channels = 32;

    std::size_t n_patches() const { return context_len / patch_size; }
    std::size_t head_dim() const { return embed_dim / n_heads; }

    /// Throws ConfigError on non-divisible or zero extents.
    void validate() const;

    /// "tiny", "small", "large" or "micro" (case-insensitive).
    static ModelConfig preset(std::string_view name);
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

/// Exact number of learnable scalars in ModelParams for `config`.
std::size_t param_count(const ModelConfig& config);

template <class T>
struct AttentionParams {
    Tensor<T> w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
};

template <class T>
struct NormParams {
    Tensor<T> gamma, beta;
};

template <class T>
struct EncoderLayerParams {
    /// One projection set, used by both the temporal and the channel stage.
    AttentionParams<T> attn;
    NormParams<T> ln_t, ln_c, ln_mlp;
    Tensor<T> w1, b1, w2, b2;
};

template <class T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
    bool decay = false; ///< weight matrices only; biases and LN parameters are exempt
    bool head = false;
};

template <class T>
struct ModelParams {
    Tensor<T> patch_w, patch_b;
    std::vector<EncoderLayerParams<T>> layers;
    Tensor<T> head_w, head_b;

    /// Shallow handles in a fixed order ("patch_embed.weight", "layers.0.attn.q.weight", ...).
    std::vector<NamedParam<T>> named() const;
    std::size_t count() const;
    ModelParams clone() const;
    void set_requires_grad(bool flag);
    void zero_grad();
};

/// Truncated normal (std 0.02, cut at two std) weights, zero biases, LN gamma 1 and beta 0.
template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Parameters of the same structure with values converted to `To`.
template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& params);

/// Sinusoidal table [m x d]; d must be even.
template <class T>
Tensor<T> positional_encoding(std::size_t m, std::size_t d);

/// x [B x T x C] -> [B*C x M x D] patch tokens plus positional encoding.
template <class T>
Tensor<T> patch_embed(Tape<T>& tape, const Tensor<T>& x, const ModelParams<T>& params, const ModelConfig& config,
                      bool add_position = true);

/// Unmasked multi-head attention of queries from `xq` [G x Sq x D] over keys and
/// values from `xkv` [G x Skv x D].
template <class T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& xq, const Tensor<T>& xkv, const AttentionParams<T>& p,
                    std::size_t heads);

/// Self-attention, attention(x, x).
template <class T>
Tensor<T> mha(Tape<T>& tape, const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads);

/// Intermediate results of one encoder layer, for inspection in tests.
template <class T>
struct EncoderTrace {
    Tensor<T> temporal_attention; ///< mha output of the temporal stage [B*C x M x D]
    Tensor<T> channel_attention;  ///< mha output of the channel stage [B*M x C x D]
};

/// z [B*C x M x D] -> [B*C x M x D].
template <class T>
Tensor<T> encoder_layer(Tape<T>& tape, const Tensor<T>& z, const EncoderLayerParams<T>& p, std::size_t batch,
                        std::size_t channels, std::size_t heads, EncoderTrace<T>* trace = nullptr);

/// Same layer, computing only the last token: z [B*C x M x D] -> [B*C x D].
/// The head reads nothing else, so this is exact for the final layer.
template <class T>
Tensor<T> encoder_layer_last_token(Tape<T>& tape, const Tensor<T>& z, const EncoderLayerParams<T>& p,
                                   std::size_t batch, std::size_t channels, std::size_t heads);

struct ForwardOptions {
    /// Run the final layer with encoder_layer_last_token.
    bool prune_last_layer = true;
};

template <class T>
struct ForwardOutput {
    Tensor<T> all;     ///< [B x P x C]
    Tensor<T> targets; ///< [B x P x O], the first O channels
};

/// inputs [B x T x C]; n_targets = O with 1 <= O <= C.
template <class T>
ForwardOutput<T> forward(Tape<T>& tape, const Tensor<T>& inputs, std::size_t n_targets, const ModelParams<T>& params,
                         const ModelConfig& config, const ForwardOptions& options = {});

/// Mean |pred - target| over channels flagged in channel_valid [B*C, row-major].
/// An all-invalid batch yields 0 with zero gradients.
template <class T>
Tensor<T> masked_mae_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target,
                          std::span<const std::uint8_t> channel_valid);

} // namespace gtt
