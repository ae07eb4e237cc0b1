#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gtt/ops.hpp"

namespace gtt {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-5;
    /// Denominator floor for the per-coordinate relative error
    /// |g - fd| / max(|g|, |fd|, floor).
    double floor = 1e-8;
    /// When nonzero, only this many coordinates are probed (chosen by `seed`,
    /// always including the coordinate with the largest tape gradient).
    std::size_t max_coordinates = 0;
    /// Random-direction probes: compare g . v with the central difference of
    /// the loss along v. These cover every coordinate at once.
    std::size_t directions = 0;
    std::uint64_t seed = 1;
    /// Pass on the normwise error instead of the worst coordinate. Suited to
    /// 32-bit checks, where single tiny gradient entries drown in rounding noise.
    bool normwise = false;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_tape = 0.0; ///< tape gradient at worst_index
    double worst_fd = 0.0;   ///< finite difference at worst_index
    std::size_t coordinates_checked = 0;
    /// Normwise ||g - fd|| / max(||g||, ||fd||) over the probed coordinates.
    double normwise_rel_error = 0.0;
    double max_directional_rel_error = 0.0;
    bool passed = false;

    std::string summary() const;
};

/// Checks the tape gradient of a scalar loss w.r.t. `x` by central differences.
/// `loss_fn` must read the current values of `x`; the checker perturbs them in
/// place and restores them afterwards. Existing gradients of `x` are cleared.
template <class T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>&)>& loss_fn, Tensor<T> x,
                           const GradCheckOptions& options);

/// Compares a gradient computed elsewhere (for example by a 32-bit tape)
/// against central differences of `loss_fn` w.r.t. `x`.
template <class T>
GradCheckReport check_against_finite_differences(std::span<const double> gradient,
                                                 const std::function<Tensor<T>(Tape<T>&)>& loss_fn, Tensor<T> x,
                                                 const GradCheckOptions& options);

/// Convenience form for a function of a single input tensor.
template <class T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>&, const Tensor<T>&)>& f, const Tensor<T>& x,
                           const GradCheckOptions& options);

} // namespace gtt
