#include "gtt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace gtt {

std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
{
    for (std::size_t extent : shape) {
        if (extent == 0) {
            throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
        }
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                             " values, got " + std::to_string(values.size()));
    }
    storage_ = std::make_shared<Storage>();
    storage_->shape = std::move(shape);
    storage_->values = std::move(values);
    set_requires_grad(requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), T(0), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad)
{
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad)
{
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <class T>
typename Tensor<T>::Storage& Tensor<T>::storage() const
{
    if (!storage_) {
        throw std::logic_error("use of an undefined tensor");
    }
    return *storage_;
}

template <class T>
const Shape& Tensor<T>::shape() const
{
    return storage().shape;
}

template <class T>
std::size_t Tensor<T>::extent(std::size_t axis) const
{
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    }
    return s[axis];
}

template <class T>
std::size_t Tensor<T>::numel() const
{
    return storage().values.size();
}

template <class T>
std::span<const T> Tensor<T>::values() const
{
    return storage().values;
}

template <class T>
std::span<T> Tensor<T>::mutable_values()
{
    return storage().values;
}

template <class T>
T Tensor<T>::item() const
{
    if (numel() != 1) {
        throw DimensionError("item() on non-scalar tensor " + shape_string(shape()));
    }
    return storage().values[0];
}

template <class T>
bool Tensor<T>::requires_grad() const
{
    return storage().requires_grad;
}

template <class T>
void Tensor<T>::set_requires_grad(bool flag)
{
    Storage& s = storage();
    s.requires_grad = flag;
    if (flag) {
        s.grad.assign(s.values.size(), T(0));
    } else {
        s.grad.clear();
        s.grad.shrink_to_fit();
    }
}

template <class T>
std::span<T> Tensor<T>::grad() const
{
    Storage& s = storage();
    if (!s.requires_grad) {
        throw std::logic_error("grad() on a tensor that does not require grad");
    }
    return s.grad;
}

template <class T>
void Tensor<T>::zero_grad()
{
    Storage& s = storage();
    std::fill(s.grad.begin(), s.grad.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::clone() const
{
    return Tensor(shape(), storage().values, false);
}

template <class T>
bool Tensor<T>::all_finite() const
{
    const auto& v = storage().values;
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <class T>
void Tensor<T>::check_finite(std::string_view what) const
{
    if (!all_finite()) {
        throw NonFiniteError("non-finite value in " + std::string(what) + " " + shape_string(shape()));
    }
}

template class Tensor<float>;
template class Tensor<double>;

} // namespace gtt
