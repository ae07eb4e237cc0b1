#pragma once

// Differentiable tensor operations recorded on a gradient tape.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "gtt/tensor.hpp"

namespace gtt {

/// Ordered record of executed differentiable operations.
///
/// An op output requires grad when any input does and the tape is enabled.
/// backward() replays the record in reverse, adding into every gradient it
/// reaches; leaf gradients therefore accumulate across calls until zeroed.
template <class T>
class Tape {
public:
    explicit Tape(bool enabled = true) : enabled_(enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool enabled() const noexcept { return enabled_; }
    std::size_t size() const noexcept { return entries_.size(); }

    /// Registers `output` as produced by this tape. `backward_fn` reads
    /// output.grad() and adds into the grads of inputs that require them.
    /// When `track` is false the op is not differentiable from here and the
    /// output is returned detached.
    Tensor<T> record(std::string_view op, Tensor<T> output, bool track, std::function<void()> backward_fn);

    void backward(const Tensor<T>& loss);
    void clear() noexcept { entries_.clear(); }

private:
    struct Entry {
        std::string_view op;
        Tensor<T> output;
        std::function<void()> backward_fn;
    };

    std::vector<Entry> entries_;
    bool enabled_;
};

/// Batched matrix product. Leading extents are batch axes; either operand may
/// be a plain matrix or have all-1 batch extents, in which case it is broadcast.
template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// x[.. x k] * w[k x n] + bias[n]; `bias` may be undefined.
template <class T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// Elementwise sum. `b` may have a shape equal to a suffix of a's shape and is
/// then broadcast over the leading axes.
template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor);

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);

template <class T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x);

/// Max-subtracted softmax along `axis` (negative counts from the end).
template <class T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis = -1);

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = static_cast<T>(kLayerNormEps));

/// Exact GELU, x * Phi(x).
template <class T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x);

template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape);

/// Output axis i takes input axis perm[i].
template <class T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x, std::vector<std::size_t> perm);

/// Half-open range [begin, end) along `axis`.
template <class T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

template <class T>
Tensor<T> concat(Tape<T>& tape, std::span<const Tensor<T>> parts, std::size_t axis);

} // namespace gtt
