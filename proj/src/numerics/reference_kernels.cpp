// Serial textbook versions of the kernels. Kept deliberately naive: they are the
// oracle for the parallel kernels and the baseline in the benchmark.

#include <cmath>
#include <vector>

#include "gtt/kernels.hpp"

namespace gtt::kernels::reference {

template <class T>
void gemm(const GemmShape& s, MatrixArg<T> a, MatrixArg<T> b, T* c, bool accumulate)
{
    for (std::size_t g = 0; g < s.batch; ++g) {
        const T* ag = a.data + g * s.stride_a;
        const T* bg = b.data + g * s.stride_b;
        T* cg = c + g * s.stride_c;
        for (std::size_t i = 0; i < s.m; ++i) {
            for (std::size_t j = 0; j < s.n; ++j) {
                T acc = 0;
                for (std::size_t p = 0; p < s.k; ++p) {
                    const T av = a.transposed ? ag[p * s.m + i] : ag[i * s.k + p];
                    const T bv = b.transposed ? bg[j * s.k + p] : bg[p * s.n + j];
                    acc += av * bv;
                }
                cg[i * s.n + j] = accumulate ? cg[i * s.n + j] + acc : acc;
            }
        }
    }
}

template <class T>
void softmax_forward(std::span<const T> x, std::span<T> y, std::size_t outer, std::size_t n, std::size_t inner)
{
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            auto at = [&](std::size_t j) { return o * n * inner + j * inner + i; };
            T peak = x[at(0)];
            for (std::size_t j = 1; j < n; ++j) {
                peak = std::max(peak, x[at(j)]);
            }
            T total = 0;
            for (std::size_t j = 0; j < n; ++j) {
                total += std::exp(x[at(j)] - peak);
            }
            for (std::size_t j = 0; j < n; ++j) {
                y[at(j)] = std::exp(x[at(j)] - peak) / total;
            }
        }
    }
}

template <class T>
void softmax_backward(std::span<const T> y, std::span<const T> dy, std::span<T> dx, std::size_t outer, std::size_t n,
                      std::size_t inner)
{
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            auto at = [&](std::size_t j) { return o * n * inner + j * inner + i; };
            // Full Jacobian-vector product: J[j][l] = y_j (delta_jl - y_l)
            for (std::size_t j = 0; j < n; ++j) {
                T acc = 0;
                for (std::size_t l = 0; l < n; ++l) {
                    const T jac = y[at(l)] * ((j == l ? T(1) : T(0)) - y[at(j)]);
                    acc += jac * dy[at(l)];
                }
                dx[at(j)] += acc;
            }
        }
    }
}

template <class T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta, std::span<T> y,
                        std::span<T> mean, std::span<T> rstd, std::size_t rows, std::size_t d, T eps)
{
    for (std::size_t r = 0; r < rows; ++r) {
        long double mu = 0;
        for (std::size_t j = 0; j < d; ++j) {
            mu += x[r * d + j];
        }
        mu /= static_cast<long double>(d);
        long double var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
        }
        var /= static_cast<long double>(d);
        const long double inv = 1.0L / std::sqrt(var + eps);
        mean[r] = static_cast<T>(mu);
        rstd[r] = static_cast<T>(inv);
        for (std::size_t j = 0; j < d; ++j) {
            y[r * d + j] = static_cast<T>((x[r * d + j] - mu) * inv * gamma[j] + beta[j]);
        }
    }
}

template <class T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gamma, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx, std::span<T> dgamma,
                         std::span<T> dbeta, std::size_t rows, std::size_t d)
{
    // Explicit Jacobian of the standardization for each row.
    for (std::size_t r = 0; r < rows; ++r) {
        const T mu = mean[r];
        const T inv = rstd[r];
        std::vector<T> xhat(d);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (x[r * d + j] - mu) * inv;
        }
        if (!dx.empty()) {
            for (std::size_t i = 0; i < d; ++i) {
                T acc = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const T delta = i == j ? T(1) : T(0);
                    const T dxhat_j_dx_i = inv * (delta - T(1) / static_cast<T>(d) - xhat[j] * xhat[i] / static_cast<T>(d));
                    acc += dy[r * d + j] * gamma[j] * dxhat_j_dx_i;
                }
                dx[r * d + i] += acc;
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            if (!dgamma.empty()) {
                dgamma[j] += dy[r * d + j] * xhat[j];
            }
            if (!dbeta.empty()) {
                dbeta[j] += dy[r * d + j];
            }
        }
    }
}

template <class T>
void gelu_forward(std::span<const T> x, std::span<T> y)
{
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        y[i] = static_cast<T>(v * 0.5 * std::erfc(-v / std::sqrt(2.0)));
    }
}

template <class T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx)
{
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * std::erfc(-v / std::sqrt(2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * 3.14159265358979323846);
        dx[i] += static_cast<T>(dy[i] * (cdf + v * pdf));
    }
}

template <class T>
void permute(std::span<const T> x, std::span<T> y, std::span<const std::size_t> in_shape,
             std::span<const std::size_t> perm, bool accumulate)
{
    const std::size_t rank = in_shape.size();
    std::vector<std::size_t> out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[perm[i]];
    }
    std::vector<std::size_t> in_index(rank);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
        std::size_t rem = flat;
        for (std::size_t ax = rank; ax-- > 0;) {
            in_index[ax] = rem % in_shape[ax];
            rem /= in_shape[ax];
        }
        std::size_t out_flat = 0;
        for (std::size_t ax = 0; ax < rank; ++ax) {
            out_flat = out_flat * out_shape[ax] + in_index[perm[ax]];
        }
        y[out_flat] = accumulate ? y[out_flat] + x[flat] : x[flat];
    }
}

template <class T>
void column_sums(std::span<const T> x, std::span<T> out, std::size_t rows, std::size_t cols)
{
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t r = 0; r < rows; ++r) {
            out[c] += x[r * cols + c];
        }
    }
}

#define GTT_INSTANTIATE_REFERENCE(T)                                                                                   \
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

GTT_INSTANTIATE_REFERENCE(float)
GTT_INSTANTIATE_REFERENCE(double)

#undef GTT_INSTANTIATE_REFERENCE

} // namespace gtt::kernels::reference
