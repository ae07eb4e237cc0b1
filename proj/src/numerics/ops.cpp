#include "gtt/ops.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>

#include "gtt/kernels.hpp"

namespace gtt {

template <class T>
Tensor<T> Tape<T>::record(std::string_view op, Tensor<T> output, bool track, std::function<void()> backward_fn)
{
    if (!enabled_ || !track) {
        return output;
    }
    output.set_requires_grad(true);
    output.storage().producer = this;
    entries_.push_back(Entry{op, output, std::move(backward_fn)});
    return output;
}

template <class T>
void Tape<T>::backward(const Tensor<T>& loss)
{
    if (!loss.defined() || loss.numel() != 1) {
        throw DimensionError("backward() needs a scalar loss, got " +
                             (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    }
    if (loss.storage().producer != this) {
        throw std::logic_error("backward(): loss tensor was not produced on this tape");
    }
    // Intermediate grads restart from zero on every pass so that only leaves accumulate.
    for (Entry& e : entries_) {
        e.output.zero_grad();
    }
    Tensor<T> seed = loss;
    seed.grad()[0] = T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->backward_fn();
    }
}

namespace {

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs)
{
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor<T>* t) { return t->defined() && t->requires_grad(); });
}

template <class T>
bool wants_grad(const Tensor<T>& t)
{
    return t.defined() && t.requires_grad();
}

std::string pair_message(std::string_view op, const Shape& a, const Shape& b)
{
    return std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b);
}

std::size_t normalize_axis(int axis, std::size_t rank)
{
    const int r = static_cast<int>(rank);
    const int resolved = axis < 0 ? axis + r : axis;
    if (resolved < 0 || resolved >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(resolved);
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis)
{
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

} // namespace

template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b)
{
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
        throw DimensionError(pair_message("matmul", sa, sb));
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa[sa.size() - 1];
    const std::size_t n = sb[sb.size() - 1];
    const Shape batch_a(sa.begin(), sa.end() - 2);
    const Shape batch_b(sb.begin(), sb.end() - 2);
    const std::size_t count_a = shape_numel(batch_a);
    const std::size_t count_b = shape_numel(batch_b);
    Shape out_shape;
    if (batch_a == batch_b || count_b == 1) {
        out_shape = batch_a;
    } else if (count_a == 1) {
        out_shape = batch_b;
    } else {
        throw DimensionError(pair_message("matmul", sa, sb));
    }
    const std::size_t batch = std::max(count_a, count_b);
    out_shape.push_back(m);
    out_shape.push_back(n);

    Tensor<T> out = Tensor<T>::zeros(out_shape);
    kernels::GemmShape gs{batch, m, n, k, count_a == 1 ? 0 : m * k, count_b == 1 ? 0 : k * n, m * n};
    kernels::gemm<T>(gs, {a.values().data()}, {b.values().data()}, out.mutable_values().data(), false);

    return tape.record("matmul", out, any_requires_grad({&a, &b}), [a, b, out, gs]() mutable {
        const T* dc = out.grad().data();
        if (wants_grad(a)) {
            // dA = dC * B^T
            T* da = a.grad().data();
            if (gs.stride_a == 0 && gs.batch > 1) {
                for (std::size_t g = 0; g < gs.batch; ++g) {
                    kernels::GemmShape one{1, gs.m, gs.k, gs.n};
                    kernels::gemm<T>(one, {dc + g * gs.stride_c}, {b.values().data() + g * gs.stride_b, true}, da, true);
                }
            } else {
                kernels::GemmShape s{gs.batch, gs.m, gs.k, gs.n, gs.stride_c, gs.stride_b, gs.stride_a};
                kernels::gemm<T>(s, {dc}, {b.values().data(), true}, da, true);
            }
        }
        if (wants_grad(b)) {
            // dB = A^T * dC
            T* db = b.grad().data();
            if (gs.stride_b == 0 && gs.batch > 1) {
                if (gs.stride_a != 0) {
                    // Stacked rows of A and dC are contiguous: one product over all of them.
                    kernels::GemmShape one{1, gs.k, gs.n, gs.batch * gs.m};
                    kernels::gemm<T>(one, {a.values().data(), true}, {dc}, db, true);
                } else {
                    for (std::size_t g = 0; g < gs.batch; ++g) {
                        kernels::GemmShape one{1, gs.k, gs.n, gs.m};
                        kernels::gemm<T>(one, {a.values().data(), true}, {dc + g * gs.stride_c}, db, true);
                    }
                }
            } else {
                kernels::GemmShape s{gs.batch, gs.k, gs.n, gs.m, gs.stride_a, gs.stride_c, gs.stride_b};
                kernels::gemm<T>(s, {a.values().data(), true}, {dc}, db, true);
            }
        }
    });
}

template <class T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias)
{
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sw.size() != 2 || sx.back() != sw[0]) {
        throw DimensionError(pair_message("linear", sx, sw));
    }
    const std::size_t k = sw[0];
    const std::size_t n = sw[1];
    if (bias.defined() && (bias.numel() != n)) {
        throw DimensionError(pair_message("linear bias", sw, bias.shape()));
    }
    const std::size_t rows = x.numel() / k;
    Shape out_shape = sx;
    out_shape.back() = n;
    std::vector<T> values(rows * n);
    if (bias.defined()) {
        const auto bv = bias.values();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(bv.begin(), bv.end(), values.begin() + static_cast<std::ptrdiff_t>(r * n));
        }
    }
    kernels::gemm<T>({1, rows, n, k}, {x.values().data()}, {w.values().data()}, values.data(), bias.defined());
    Tensor<T> out(std::move(out_shape), std::move(values));

    return tape.record("linear", out, any_requires_grad({&x, &w, &bias}), [x, w, bias, out, rows, n, k]() mutable {
        const T* dy = out.grad().data();
        if (wants_grad(x)) {
            kernels::gemm<T>({1, rows, k, n}, {dy}, {w.values().data(), true}, x.grad().data(), true);
        }
        if (wants_grad(w)) {
            kernels::gemm<T>({1, k, n, rows}, {x.values().data(), true}, {dy}, w.grad().data(), true);
        }
        if (wants_grad(bias)) {
            kernels::column_sums<T>(out.grad(), bias.grad(), rows, n);
        }
    });
}

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b)
{
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool suffix = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
    if (!suffix) {
        throw DimensionError(pair_message("add", sa, sb));
    }
    const std::size_t cols = b.numel();
    const std::size_t rows = a.numel() / cols;
    std::vector<T> values(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t r = 0; r < rows; ++r) {
        T* row = values.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            row[c] += bv[c];
        }
    }
    Tensor<T> out(sa, std::move(values));
    return tape.record("add", out, any_requires_grad({&a, &b}), [a, b, out, rows, cols]() mutable {
        const auto dy = out.grad();
        if (wants_grad(a)) {
            auto da = a.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i];
            }
        }
        if (wants_grad(b)) {
            kernels::column_sums<T>(dy, b.grad(), rows, cols);
        }
    });
}

template <class T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(pair_message("sub", a.shape(), b.shape()));
    }
    std::vector<T> values(a.numel());
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = a.values()[i] - b.values()[i];
    }
    Tensor<T> out(a.shape(), std::move(values));
    return tape.record("sub", out, any_requires_grad({&a, &b}), [a, b, out]() mutable {
        const auto dy = out.grad();
        if (wants_grad(a)) {
            auto da = a.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i];
            }
        }
        if (wants_grad(b)) {
            auto db = b.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) {
                db[i] -= dy[i];
            }
        }
    });
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(pair_message("mul", a.shape(), b.shape()));
    }
    std::vector<T> values(a.numel());
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = a.values()[i] * b.values()[i];
    }
    Tensor<T> out(a.shape(), std::move(values));
    return tape.record("mul", out, any_requires_grad({&a, &b}), [a, b, out]() mutable {
        const auto dy = out.grad();
        if (wants_grad(a)) {
            auto da = a.grad();
            const auto bv = b.values();
            for (std::size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i] * bv[i];
            }
        }
        if (wants_grad(b)) {
            auto db = b.grad();
            const auto av = a.values();
            for (std::size_t i = 0; i < dy.size(); ++i) {
                db[i] += dy[i] * av[i];
            }
        }
    });
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor)
{
    std::vector<T> values(x.values().begin(), x.values().end());
    for (T& v : values) {
        v *= factor;
    }
    Tensor<T> out(x.shape(), std::move(values));
    return tape.record("scale", out, any_requires_grad({&x}), [x, out, factor]() mutable {
        const auto dy = out.grad();
        auto dx = x.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) {
            dx[i] += factor * dy[i];
        }
    });
}

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x)
{
    double total = 0.0;
    for (T v : x.values()) {
        total += static_cast<double>(v);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
    return tape.record("sum", out, any_requires_grad({&x}), [x, out]() mutable {
        const T g = out.grad()[0];
        for (T& d : x.grad()) {
            d += g;
        }
    });
}

template <class T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x)
{
    double total = 0.0;
    for (T v : x.values()) {
        total += static_cast<double>(v);
    }
    const std::size_t n = x.numel();
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
    return tape.record("mean", out, any_requires_grad({&x}), [x, out, n]() mutable {
        const T g = out.grad()[0] / static_cast<T>(n);
        for (T& d : x.grad()) {
            d += g;
        }
    });
}

template <class T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis)
{
    const std::size_t ax = normalize_axis(axis, x.rank());
    const AxisSplit s = split_at(x.shape(), ax);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    kernels::softmax_forward<T>(x.values(), out.mutable_values(), s.outer, s.n, s.inner);
    return tape.record("softmax", out, any_requires_grad({&x}), [x, out, s]() mutable {
        kernels::softmax_backward<T>(out.values(), out.grad(), x.grad(), s.outer, s.n, s.inner);
    });
}

template <class T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps)
{
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimensionError(pair_message("layer_norm", x.shape(), gamma.shape()));
    }
    const std::size_t rows = x.numel() / d;
    auto stats = std::make_shared<std::vector<T>>(2 * rows);
    std::span<T> mu(stats->data(), rows);
    std::span<T> rstd(stats->data() + rows, rows);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    kernels::layer_norm_forward<T>(x.values(), gamma.values(), beta.values(), out.mutable_values(), mu, rstd, rows, d,
                                   eps);
    return tape.record("layer_norm", out, any_requires_grad({&x, &gamma, &beta}),
                       [x, gamma, beta, out, stats, rows, d]() mutable {
                           std::span<const T> mu_s(stats->data(), rows);
                           std::span<const T> rstd_s(stats->data() + rows, rows);
                           kernels::layer_norm_backward<T>(
                               x.values(), gamma.values(), mu_s, rstd_s, out.grad(),
                               wants_grad(x) ? x.grad() : std::span<T>{},
                               wants_grad(gamma) ? gamma.grad() : std::span<T>{},
                               wants_grad(beta) ? beta.grad() : std::span<T>{}, rows, d);
                       });
}

template <class T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x)
{
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    kernels::gelu_forward<T>(x.values(), out.mutable_values());
    return tape.record("gelu", out, any_requires_grad({&x}),
                       [x, out]() mutable { kernels::gelu_backward<T>(x.values(), out.grad(), x.grad()); });
}

template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape)
{
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError(pair_message("reshape", x.shape(), shape));
    }
    Tensor<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
    return tape.record("reshape", out, any_requires_grad({&x}), [x, out]() mutable {
        const auto dy = out.grad();
        auto dx = x.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) {
            dx[i] += dy[i];
        }
    });
}

template <class T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x, std::vector<std::size_t> perm)
{
    const std::size_t rank = x.rank();
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> identity(rank);
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    if (sorted != identity) {
        throw DimensionError("transpose: invalid permutation for shape " + shape_string(x.shape()));
    }
    Shape out_shape(rank);
    std::vector<std::size_t> inverse(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = x.shape()[perm[i]];
        inverse[perm[i]] = i;
    }
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    kernels::permute<T>(x.values(), out.mutable_values(), x.shape(), perm, false);
    return tape.record("transpose", out, any_requires_grad({&x}), [x, out, out_shape, inverse]() mutable {
        kernels::permute<T>(out.grad(), x.grad(), out_shape, inverse, true);
    });
}

template <class T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end)
{
    if (axis >= x.rank() || begin >= end || end > x.shape()[axis]) {
        throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                             std::to_string(axis) + " out of bounds for " + shape_string(x.shape()));
    }
    const AxisSplit s = split_at(x.shape(), axis);
    const std::size_t width = end - begin;
    Shape out_shape = x.shape();
    out_shape[axis] = width;
    std::vector<T> values(s.outer * width * s.inner);
    const auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s.n + begin) * s.inner), width * s.inner,
                    values.begin() + static_cast<std::ptrdiff_t>(o * width * s.inner));
    }
    Tensor<T> out(std::move(out_shape), std::move(values));
    return tape.record("slice", out, any_requires_grad({&x}), [x, out, s, begin, width]() mutable {
        const auto dy = out.grad();
        auto dx = x.grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < width * s.inner; ++i) {
                dx[(o * s.n + begin) * s.inner + i] += dy[o * width * s.inner + i];
            }
        }
    });
}

template <class T>
Tensor<T> concat(Tape<T>& tape, std::span<const Tensor<T>> parts, std::size_t axis)
{
    if (parts.empty()) {
        throw DimensionError("concat of zero tensors");
    }
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) {
        throw DimensionError("concat axis out of range for " + shape_string(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Tensor<T>& p : parts) {
        Shape probe = p.shape();
        if (probe.size() != first.size()) {
            throw DimensionError(pair_message("concat", first, probe));
        }
        probe[axis] = first[axis];
        if (probe != first) {
            throw DimensionError(pair_message("concat", first, p.shape()));
        }
        out_shape[axis] += p.shape()[axis];
    }
    const AxisSplit s = split_at(out_shape, axis);
    std::vector<T> values(shape_numel(out_shape));
    std::size_t offset = 0;
    for (const Tensor<T>& p : parts) {
        const std::size_t w = p.shape()[axis];
        const auto pv = p.values();
        for (std::size_t o = 0; o < s.outer; ++o) {
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * w * s.inner), w * s.inner,
                        values.begin() + static_cast<std::ptrdiff_t>((o * s.n + offset) * s.inner));
        }
        offset += w;
    }
    Tensor<T> out(out_shape, std::move(values));
    std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
    const bool track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
    return tape.record("concat", out, track, [inputs, out, s, axis]() mutable {
        const auto dy = out.grad();
        std::size_t off = 0;
        for (Tensor<T>& p : inputs) {
            const std::size_t w = p.shape()[axis];
            if (p.requires_grad()) {
                auto dp = p.grad();
                for (std::size_t o = 0; o < s.outer; ++o) {
                    for (std::size_t i = 0; i < w * s.inner; ++i) {
                        dp[o * w * s.inner + i] += dy[(o * s.n + off) * s.inner + i];
                    }
                }
            }
            off += w;
        }
    });
}

#define GTT_INSTANTIATE_OPS(T)                                                                                         \
    template class Tape<T>;                                                                                          \
    template Tensor<T> matmul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> linear<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> add<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> sub<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> mul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> scale<T>(Tape<T>&, const Tensor<T>&, T);                                                      \
    template Tensor<T> sum<T>(Tape<T>&, const Tensor<T>&);                                                           \
    template Tensor<T> mean<T>(Tape<T>&, const Tensor<T>&);                                                          \
    template Tensor<T> softmax<T>(Tape<T>&, const Tensor<T>&, int);                                                  \
    template Tensor<T> layer_norm<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
    template Tensor<T> gelu<T>(Tape<T>&, const Tensor<T>&);                                                          \
    template Tensor<T> reshape<T>(Tape<T>&, const Tensor<T>&, Shape);                                                \
    template Tensor<T> transpose<T>(Tape<T>&, const Tensor<T>&, std::vector<std::size_t>);                           \
    template Tensor<T> slice<T>(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t, std::size_t);                  \
    template Tensor<T> concat<T>(Tape<T>&, std::span<const Tensor<T>>, std::size_t);

GTT_INSTANTIATE_OPS(float)
GTT_INSTANTIATE_OPS(double)

#undef GTT_INSTANTIATE_OPS

} // namespace gtt
