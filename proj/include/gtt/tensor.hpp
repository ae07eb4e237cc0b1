#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gtt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when operand extents are incompatible; the message names both shapes.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class T>
class Tape;

/// Dense row-major array with an optional gradient buffer.
///
/// Copies are shallow handles onto the same storage. Op outputs are treated as
/// immutable; only leaves (parameters, inputs) are written through
/// mutable_values(), and only the optimizer or a gradient checker should do so.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(storage_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const T> values() const;
    std::span<T> mutable_values();
    T item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    /// Gradient buffer; handles share it, so this is writable through a const handle.
    std::span<T> grad() const;
    void zero_grad();

    /// Deep copy with no gradient and no tape association.
    Tensor clone() const;

    bool all_finite() const;
    /// Throws NonFiniteError naming `what` when any value is NaN or infinite.
    void check_finite(std::string_view what) const;

    bool same_storage(const Tensor& other) const noexcept { return storage_ == other.storage_; }

private:
    friend class Tape<T>;

    struct Storage {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;
        bool requires_grad = false;
        const Tape<T>* producer = nullptr;
    };

    Storage& storage() const;

    std::shared_ptr<Storage> storage_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace gtt
