#pragma once

// Data-parallel compute kernels behind the differentiable ops.
//
// Every kernel in gtt::kernels has a naive serial twin in gtt::kernels::reference
// with the same signature. The parallel kernels assign each output element to
// exactly one thread and accumulate in a fixed order, so results do not depend
// on the thread count.

#include <cstddef>
#include <span>

namespace gtt::kernels {

void set_num_threads(int threads);
int num_threads();

/// Keeps freed tensor buffers in the heap instead of returning them to the OS
/// (glibc only; a no-op elsewhere). Call once at program start.
void tune_allocator();

/// Flushes subnormal floats to zero on the calling thread and every OpenMP
/// worker (x86 only). Long training runs otherwise slow down as softmax and
/// optimizer values drift into the subnormal range.
void flush_denormals();

/// Row-major operand of a matrix product. `transposed` means the stored
/// matrix is the transpose of the logical operand.
template <class T>
struct MatrixArg {
    const T* data;
    bool transposed = false;
};

/// c[m x n] (+)= op(a)[m x k] * op(b)[k x n] for `batch` contiguous matrices.
/// A stride of 0 broadcasts that operand across the batch.
struct GemmShape {
    std::size_t batch = 1;
    std::size_t m = 0;
    std::size_t n = 0;
    std::size_t k = 0;
    std::size_t stride_a = 0;
    std::size_t stride_b = 0;
    std::size_t stride_c = 0;
};

template <class T>
void gemm(const GemmShape& shape, MatrixArg<T> a, MatrixArg<T> b, T* c, bool accumulate);

/// Softmax over the middle axis of an [outer x n x inner] block.
template <class T>
void softmax_forward(std::span<const T> x, std::span<T> y, std::size_t outer, std::size_t n, std::size_t inner);

/// dx += y * (dy - sum(dy * y)) along the softmax axis.
template <class T>
void softmax_backward(std::span<const T> y, std::span<const T> dy, std::span<T> dx, std::size_t outer, std::size_t n,
                      std::size_t inner);

/// Normalizes each length-d row; writes per-row mean and reciprocal std.
template <class T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta, std::span<T> y,
                        std::span<T> mean, std::span<T> rstd, std::size_t rows, std::size_t d, T eps);

template <class T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gamma, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx, std::span<T> dgamma,
                         std::span<T> dbeta, std::size_t rows, std::size_t d);

template <class T>
void gelu_forward(std::span<const T> x, std::span<T> y);

/// dx += dy * gelu'(x)
template <class T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx);

/// y[permuted index] = x[index]; `perm[i]` is the source axis of output axis i.
/// With `accumulate`, adds into y instead of overwriting.
template <class T>
void permute(std::span<const T> x, std::span<T> y, std::span<const std::size_t> in_shape,
             std::span<const std::size_t> perm, bool accumulate);

/// out[c] += sum over rows of x[r, c]
template <class T>
void column_sums(std::span<const T> x, std::span<T> out, std::size_t rows, std::size_t cols);

} // namespace gtt::kernels

namespace gtt::kernels::reference {

template <class T>
void gemm(const GemmShape& shape, MatrixArg<T> a, MatrixArg<T> b, T* c, bool accumulate);

template <class T>
void softmax_forward(std::span<const T> x, std::span<T> y, std::size_t outer, std::size_t n, std::size_t inner);

template <class T>
void softmax_backward(std::span<const T> y, std::span<const T> dy, std::span<T> dx, std::size_t outer, std::size_t n,
                      std::size_t inner);

template <class T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta, std::span<T> y,
                        std::span<T> mean, std::span<T> rstd, std::size_t rows, std::size_t d, T eps);

template <class T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gamma, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx, std::span<T> dgamma,
                         std::span<T> dbeta, std::size_t rows, std::size_t d);

template <class T>
void gelu_forward(std::span<const T> x, std::span<T> y);

template <class T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx);

template <class T>
void permute(std::span<const T> x, std::span<T> y, std::span<const std::size_t> in_shape,
             std::span<const std::size_t> perm, bool accumulate);

template <class T>
void column_sums(std::span<const T> x, std::span<T> out, std::size_t rows, std::size_t cols);

} // namespace gtt::kernels::reference
