#include "gtt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace gtt {

std::string GradCheckReport::summary() const
{
    std::ostringstream out;
    out << "coords=" << coordinates_checked << " max_rel=" << max_rel_error << " (index " << worst_index << ": tape "
        << worst_tape << " fd " << worst_fd << ") normwise=" << normwise_rel_error << " directional=" << max_directional_rel_error
        << (passed ? " PASS" : " FAIL");
    return out.str();
}

namespace {

double relative_error(double a, double b, double floor)
{
    const double denom = std::max({std::fabs(a), std::fabs(b), floor});
    return std::fabs(a - b) / denom;
}

} // namespace

template <class T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>&)>& loss_fn, Tensor<T> x,
                           const GradCheckOptions& options)
{
    if (!x.requires_grad()) {
        x.set_requires_grad(true);
    }
    x.zero_grad();
    std::vector<double> tape_grad(x.numel());
    {
        Tape<T> tape;
        Tensor<T> loss = loss_fn(tape);
        tape.backward(loss);
        std::copy(x.grad().begin(), x.grad().end(), tape_grad.begin());
    }
    x.zero_grad();
    return check_against_finite_differences<T>(tape_grad, loss_fn, x, options);
}

template <class T>
GradCheckReport check_against_finite_differences(std::span<const double> tape_grad,
                                                 const std::function<Tensor<T>(Tape<T>&)>& loss_fn, Tensor<T> x,
                                                 const GradCheckOptions& options)
{
    if (tape_grad.size() != x.numel()) {
        throw DimensionError("gradient has " + std::to_string(tape_grad.size()) + " entries, tensor " +
                             shape_string(x.shape()));
    }
    auto evaluate = [&]() {
        Tape<T> quiet(false);
        return static_cast<double>(loss_fn(quiet).item());
    };

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    std::mt19937_64 rng(options.seed);
    if (options.max_coordinates != 0 && options.max_coordinates < coords.size()) {
        const auto largest = static_cast<std::size_t>(std::distance(
            tape_grad.begin(), std::max_element(tape_grad.begin(), tape_grad.end(),
                                                [](double a, double b) { return std::fabs(a) < std::fabs(b); })));
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(options.max_coordinates);
        if (std::find(coords.begin(), coords.end(), largest) == coords.end()) {
            coords.back() = largest;
        }
        std::sort(coords.begin(), coords.end());
    }

    GradCheckReport report;
    double diff_sq = 0.0;
    double tape_sq = 0.0;
    double fd_sq = 0.0;
    auto values = x.mutable_values();
    for (std::size_t i : coords) {
        const T original = values[i];
        const T plus = static_cast<T>(original + static_cast<T>(options.step));
        const T minus = static_cast<T>(original - static_cast<T>(options.step));
        values[i] = plus;
        const double f_plus = evaluate();
        values[i] = minus;
        const double f_minus = evaluate();
        values[i] = original;
        const double fd = (f_plus - f_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
        const double err = relative_error(tape_grad[i], fd, options.floor);
        if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = i;
            report.worst_tape = tape_grad[i];
            report.worst_fd = fd;
        }
        diff_sq += (tape_grad[i] - fd) * (tape_grad[i] - fd);
        tape_sq += tape_grad[i] * tape_grad[i];
        fd_sq += fd * fd;
        ++report.coordinates_checked;
    }
    const double norm_denom = std::max({std::sqrt(tape_sq), std::sqrt(fd_sq), options.floor});
    report.normwise_rel_error = std::sqrt(diff_sq) / norm_denom;

    std::normal_distribution<double> normal(0.0, 1.0);
    const std::vector<T> saved(values.begin(), values.end());
    for (std::size_t d = 0; d < options.directions; ++d) {
        std::vector<double> dir(values.size());
        for (double& v : dir) {
            v = normal(rng);
        }
        double projected = 0.0;
        for (std::size_t i = 0; i < dir.size(); ++i) {
            projected += tape_grad[i] * dir[i];
        }
        for (std::size_t i = 0; i < dir.size(); ++i) {
            values[i] = static_cast<T>(saved[i] + options.step * dir[i]);
        }
        const double f_plus = evaluate();
        for (std::size_t i = 0; i < dir.size(); ++i) {
            values[i] = static_cast<T>(saved[i] - options.step * dir[i]);
        }
        const double f_minus = evaluate();
        std::copy(saved.begin(), saved.end(), values.begin());
        const double fd = (f_plus - f_minus) / (2.0 * options.step);
        report.max_directional_rel_error =
            std::max(report.max_directional_rel_error, relative_error(projected, fd, options.floor));
    }

    const double primary = options.normwise ? report.normwise_rel_error : report.max_rel_error;
    report.passed = primary < options.tolerance && report.max_directional_rel_error < options.tolerance;
    return report;
}

template <class T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>&, const Tensor<T>&)>& f, const Tensor<T>& x,
                           const GradCheckOptions& options)
{
    Tensor<T> input = x;
    return grad_check<T>(std::function<Tensor<T>(Tape<T>&)>([&](Tape<T>& tape) { return f(tape, input); }), input,
                         options);
}

template GradCheckReport grad_check<float>(const std::function<Tensor<float>(Tape<float>&)>&, Tensor<float>,
                                           const GradCheckOptions&);
template GradCheckReport grad_check<double>(const std::function<Tensor<double>(Tape<double>&)>&, Tensor<double>,
                                            const GradCheckOptions&);
template GradCheckReport check_against_finite_differences<float>(
    std::span<const double>, const std::function<Tensor<float>(Tape<float>&)>&, Tensor<float>, const GradCheckOptions&);
template GradCheckReport check_against_finite_differences<double>(
    std::span<const double>, const std::function<Tensor<double>(Tape<double>&)>&, Tensor<double>,
    const GradCheckOptions&);
template GradCheckReport grad_check<float>(const std::function<Tensor<float>(Tape<float>&, const Tensor<float>&)>&,
                                           const Tensor<float>&, const GradCheckOptions&);
template GradCheckReport grad_check<double>(
    const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>&, const Tensor<double>&,
    const GradCheckOptions&);

} // namespace gtt
