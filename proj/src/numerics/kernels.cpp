#include "gtt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <omp.h>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif
#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

namespace gtt::kernels {

namespace {

constexpr std::size_t kColBlock = 64;
// Below this many multiply-adds a product runs on the calling thread.
constexpr std::size_t kParallelWork = 1u << 15;
constexpr std::size_t kParallelElems = 1u << 14;

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c[m x n] (+)= op(a) * op(b) for one matrix; Eigen handles the transposes
// without packing.
template <class T>
void product(std::size_t m, std::size_t n, std::size_t k, const T* a, bool ta, const T* b, bool tb, T* c,
             bool accumulate)
{
    using Map = Eigen::Map<const RowMajor<T>>;
    const auto em = static_cast<Eigen::Index>(m);
    const auto en = static_cast<Eigen::Index>(n);
    const auto ek = static_cast<Eigen::Index>(k);
    Eigen::Map<RowMajor<T>> out(c, em, en);
    const Map stored_a(a, ta ? ek : em, ta ? em : ek);
    const Map stored_b(b, tb ? en : ek, tb ? ek : en);
    auto assign = [&](const auto& lhs, const auto& rhs) {
        if (accumulate) {
            out.noalias() += lhs * rhs;
        } else {
            out.noalias() = lhs * rhs;
        }
    };
    if (ta && tb) {
        assign(stored_a.transpose(), stored_b.transpose());
    } else if (ta) {
        assign(stored_a.transpose(), stored_b);
    } else if (tb) {
        assign(stored_a, stored_b.transpose());
    } else {
        assign(stored_a, stored_b);
    }
}

} // namespace

void set_num_threads(int threads)
{
    omp_set_num_threads(std::max(1, threads));
}

int num_threads()
{
    return omp_get_max_threads();
}

void tune_allocator()
{
#if defined(__GLIBC__)
    // Tensors of a training step are a few MB each; with the default dynamic
    // threshold every step pays for fresh mmap pages.
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

void flush_denormals()
{
#if defined(__SSE__)
    constexpr unsigned kFtzDaz = 0x8040;
    _mm_setcsr(_mm_getcsr() | kFtzDaz);
#pragma omp parallel
    _mm_setcsr(_mm_getcsr() | kFtzDaz);
#endif
}

template <class T>
void gemm(const GemmShape& s, MatrixArg<T> a, MatrixArg<T> b, T* c, bool accumulate)
{
    if (s.batch == 1) {
        // Eigen splits a single large product across the OpenMP threads itself.
        product(s.m, s.n, s.k, a.data, a.transposed, b.data, b.transposed, c, accumulate);
        return;
    }
    const std::size_t work = s.batch * s.m * s.n * s.k;
    const auto batch = static_cast<std::ptrdiff_t>(s.batch);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::ptrdiff_t g = 0; g < batch; ++g) {
        const auto gi = static_cast<std::size_t>(g);
        product(s.m, s.n, s.k, a.data + gi * s.stride_a, a.transposed, b.data + gi * s.stride_b, b.transposed,
                c + gi * s.stride_c, accumulate);
    }
}

template <class T>
void softmax_forward(std::span<const T> x, std::span<T> y, std::size_t outer, std::size_t n, std::size_t inner)
{
    const auto lanes = static_cast<std::ptrdiff_t>(outer * inner);
#pragma omp parallel for schedule(static) if (x.size() > kParallelElems)
    for (std::ptrdiff_t lane = 0; lane < lanes; ++lane) {
        const std::size_t o = static_cast<std::size_t>(lane) / inner;
        const std::size_t i = static_cast<std::size_t>(lane) % inner;
        const T* xs = x.data() + o * n * inner + i;
        T* ys = y.data() + o * n * inner + i;
        T peak = xs[0];
        for (std::size_t j = 1; j < n; ++j) {
            peak = std::max(peak, xs[j * inner]);
        }
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const T e = std::exp(xs[j * inner] - peak);
            ys[j * inner] = e;
            total += e;
        }
        const T inv = T(1) / total;
        for (std::size_t j = 0; j < n; ++j) {
            ys[j * inner] *= inv;
        }
    }
}

template <class T>
void softmax_backward(std::span<const T> y, std::span<const T> dy, std::span<T> dx, std::size_t outer, std::size_t n,
                      std::size_t inner)
{
    const auto lanes = static_cast<std::ptrdiff_t>(outer * inner);
#pragma omp parallel for schedule(static) if (y.size() > kParallelElems)
    for (std::ptrdiff_t lane = 0; lane < lanes; ++lane) {
        const std::size_t o = static_cast<std::size_t>(lane) / inner;
        const std::size_t i = static_cast<std::size_t>(lane) % inner;
        const std::size_t base = o * n * inner + i;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) {
            dot += dy[base + j * inner] * y[base + j * inner];
        }
        for (std::size_t j = 0; j < n; ++j) {
            dx[base + j * inner] += y[base + j * inner] * (dy[base + j * inner] - dot);
        }
    }
}

template <class T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta, std::span<T> y,
                        std::span<T> mean, std::span<T> rstd, std::size_t rows, std::size_t d, T eps)
{
    const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (x.size() > kParallelElems)
    for (std::ptrdiff_t r = 0; r < nrows; ++r) {
        const T* xr = x.data() + static_cast<std::size_t>(r) * d;
        T* yr = y.data() + static_cast<std::size_t>(r) * d;
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            sum += xr[j];
        }
        const double mu = sum / static_cast<double>(d);
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xr[j] - mu;
            sq += c * c;
        }
        const double inv = 1.0 / std::sqrt(sq / static_cast<double>(d) + static_cast<double>(eps));
        mean[static_cast<std::size_t>(r)] = static_cast<T>(mu);
        rstd[static_cast<std::size_t>(r)] = static_cast<T>(inv);
        const T mu_t = static_cast<T>(mu);
        const T inv_t = static_cast<T>(inv);
#pragma omp simd
        for (std::size_t j = 0; j < d; ++j) {
            yr[j] = (xr[j] - mu_t) * inv_t * gamma[j] + beta[j];
        }
    }
}

template <class T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gamma, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx, std::span<T> dgamma,
                         std::span<T> dbeta, std::size_t rows, std::size_t d)
{
    const auto nrows = static_cast<std::ptrdiff_t>(rows);
    const T inv_d = T(1) / static_cast<T>(d);
    if (!dx.empty()) {
#pragma omp parallel for schedule(static) if (x.size() > kParallelElems)
        for (std::ptrdiff_t r = 0; r < nrows; ++r) {
            const std::size_t off = static_cast<std::size_t>(r) * d;
            const T mu = mean[static_cast<std::size_t>(r)];
            const T inv = rstd[static_cast<std::size_t>(r)];
            T sum_g = 0;
            T sum_gx = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const T g = dy[off + j] * gamma[j];
                sum_g += g;
                sum_gx += g * (x[off + j] - mu) * inv;
            }
            const T mean_g = sum_g * inv_d;
            const T mean_gx = sum_gx * inv_d;
#pragma omp simd
            for (std::size_t j = 0; j < d; ++j) {
                const T xhat = (x[off + j] - mu) * inv;
                dx[off + j] += inv * (dy[off + j] * gamma[j] - mean_g - xhat * mean_gx);
            }
        }
    }
    if (!dgamma.empty() || !dbeta.empty()) {
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t off = r * d;
            const T mu = mean[r];
            const T inv = rstd[r];
            if (!dgamma.empty()) {
#pragma omp simd
                for (std::size_t j = 0; j < d; ++j) {
                    dgamma[j] += dy[off + j] * (x[off + j] - mu) * inv;
                }
            }
            if (!dbeta.empty()) {
#pragma omp simd
                for (std::size_t j = 0; j < d; ++j) {
                    dbeta[j] += dy[off + j];
                }
            }
        }
    }
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Standard normal CDF; the float path uses Eigen's vectorized erf.
void normal_cdf(std::span<const float> x, std::span<float> out)
{
    Eigen::Map<const Eigen::ArrayXf> xs(x.data(), static_cast<Eigen::Index>(x.size()));
    Eigen::Map<Eigen::ArrayXf> os(out.data(), static_cast<Eigen::Index>(out.size()));
    os = 0.5f * (1.0f + (xs * static_cast<float>(kInvSqrt2)).erf());
}

void normal_cdf(std::span<const double> x, std::span<double> out)
{
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = 0.5 * std::erfc(-x[i] * kInvSqrt2);
    }
}

template <class T>
void for_chunks(std::size_t n, auto&& body)
{
    constexpr std::size_t chunk = 4096;
    const auto chunks = static_cast<std::ptrdiff_t>((n + chunk - 1) / chunk);
#pragma omp parallel for schedule(static) if (n > kParallelElems)
    for (std::ptrdiff_t c = 0; c < chunks; ++c) {
        const std::size_t begin = static_cast<std::size_t>(c) * chunk;
        body(begin, std::min(n, begin + chunk));
    }
}

} // namespace

template <class T>
void gelu_forward(std::span<const T> x, std::span<T> y)
{
    for_chunks<T>(x.size(), [&](std::size_t begin, std::size_t end) {
        normal_cdf(x.subspan(begin, end - begin), y.subspan(begin, end - begin));
        for (std::size_t i = begin; i < end; ++i) {
            y[i] *= x[i];
        }
    });
}

template <class T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx)
{
    for_chunks<T>(x.size(), [&](std::size_t begin, std::size_t end) {
        std::vector<T> cdf(end - begin);
        normal_cdf(x.subspan(begin, end - begin), cdf);
        for (std::size_t i = begin; i < end; ++i) {
            const T pdf = static_cast<T>(kInvSqrt2Pi) * std::exp(T(-0.5) * x[i] * x[i]);
            dx[i] += dy[i] * (cdf[i - begin] + x[i] * pdf);
        }
    });
}

template <class T>
void permute(std::span<const T> x, std::span<T> y, std::span<const std::size_t> in_shape,
             std::span<const std::size_t> perm, bool accumulate)
{
    const std::size_t rank = in_shape.size();
    if (rank == 0 || x.empty()) {
        if (!x.empty()) {
            y[0] = accumulate ? y[0] + x[0] : x[0];
        }
        return;
    }
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t i = rank - 1; i > 0; --i) {
        in_stride[i - 1] = in_stride[i] * in_shape[i];
    }
    std::vector<std::size_t> out_shape(rank);
    std::vector<std::size_t> src_stride(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[perm[i]];
        src_stride[i] = in_stride[perm[i]];
    }
    const std::size_t row_len = out_shape[rank - 1];
    const std::size_t inner_stride = src_stride[rank - 1];
    const auto nrows = static_cast<std::ptrdiff_t>(x.size() / row_len);
#pragma omp parallel for schedule(static) if (x.size() > kParallelElems)
    for (std::ptrdiff_t row = 0; row < nrows; ++row) {
        std::size_t rem = static_cast<std::size_t>(row);
        std::size_t src = 0;
        for (std::size_t ax = rank - 1; ax > 0; --ax) {
            const std::size_t idx = rem % out_shape[ax - 1];
            rem /= out_shape[ax - 1];
            src += idx * src_stride[ax - 1];
        }
        T* dst = y.data() + static_cast<std::size_t>(row) * row_len;
        if (accumulate) {
            for (std::size_t j = 0; j < row_len; ++j) {
                dst[j] += x[src + j * inner_stride];
            }
        } else {
            for (std::size_t j = 0; j < row_len; ++j) {
                dst[j] = x[src + j * inner_stride];
            }
        }
    }
}

template <class T>
void column_sums(std::span<const T> x, std::span<T> out, std::size_t rows, std::size_t cols)
{
    const auto blocks = static_cast<std::ptrdiff_t>((cols + kColBlock - 1) / kColBlock);
#pragma omp parallel for schedule(static) if (x.size() > kParallelElems && blocks > 1)
    for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
        const std::size_t c0 = static_cast<std::size_t>(blk) * kColBlock;
        const std::size_t c1 = std::min(cols, c0 + kColBlock);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = x.data() + r * cols;
#pragma omp simd
            for (std::size_t c = c0; c < c1; ++c) {
                out[c] += xr[c];
            }
        }
    }
}

#define GTT_INSTANTIATE_KERNELS(T)                                                                                     \
    template void gemm<T>(const GemmShape&, MatrixArg<T>, MatrixArg<T>, T*, bool);                                   \
    template void softmax_forward<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t, std::size_t);       \
    template void softmax_backward<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,             \
                                      std::size_t, std::size_t);                                                     \
    template void layer_norm_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>,    \
                                        std::span<T>, std::span<T>, std::size_t, std::size_t, T);                    \
    template void layer_norm_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>,                 \
                                         std::span<const T>, std::span<const T>, std::span<T>, std::span<T>,         \
                                         std::span<T>, std::size_t, std::size_t);                                    \
    template void gelu_forward<T>(std::span<const T>, std::span<T>);                                                 \
    template void gelu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);                            \
    template void permute<T>(std::span<const T>, std::span<T>, std::span<const std::size_t>,                         \
                             std::span<const std::size_t>, bool);                                                    \
    template void column_sums<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t);

GTT_INSTANTIATE_KERNELS(float)
GTT_INSTANTIATE_KERNELS(double)

#undef GTT_INSTANTIATE_KERNELS

} // namespace gtt::kernels
