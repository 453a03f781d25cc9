#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace psta {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

/// Raised when a forward op produces NaN/Inf. Training treats this as
/// divergence and aborts the run with the last good checkpoint.
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major n-d array of float or double. Copies are shallow: they
/// share storage, which is how tape closures keep the values they need for
/// the backward pass alive. The gradient buffer is allocated lazily on
/// first accumulation and always matches the data shape.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor is float/double only");

    struct Storage {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // empty until backward touches this tensor
        bool requires_grad = false;
    };

public:
    Tensor() : s_(std::make_shared<Storage>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<Storage>()) {
        s_->shape = std::move(shape);
        s_->data.assign(shape_numel(s_->shape), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
        s_->shape = std::move(shape);
        s_->data = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return s_->shape; }
    std::size_t ndim() const { return s_->shape.size(); }
    std::size_t size() const { return s_->data.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
    std::size_t rows() const { return s_->shape.at(0); }
    std::size_t cols() const { return s_->shape.at(1); }

    T* data() { return s_->data.data(); }
    const T* data() const { return s_->data.data(); }
    std::vector<T>& vec() { return s_->data; }
    const std::vector<T>& vec() const { return s_->data; }

    T& at(std::size_t i) { return s_->data[i]; }
    T at(std::size_t i) const { return s_->data[i]; }
    T& at(std::size_t i, std::size_t j) { return s_->data[i * s_->shape[1] + j]; }
    T at(std::size_t i, std::size_t j) const { return s_->data[i * s_->shape[1] + j]; }
    T item() const {
        if (size() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape()));
        return s_->data[0];
    }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool v) { s_->requires_grad = v; }

    bool has_grad() const { return !s_->grad.empty(); }

    /// gradient buffer, allocated (zeroed) on first use
    T* grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
        return s_->grad.data();
    }
    const T* grad_if() const { return s_->grad.empty() ? nullptr : s_->grad.data(); }

    void zero_grad() {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }
    void drop_grad() { s_->grad.clear(); }

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

    /// deep copy of the values; no grad, no requires_grad
    Tensor clone_values() const {
        Tensor out;
        out.s_->shape = s_->shape;
        out.s_->data = s_->data;
        return out;
    }

private:
    std::shared_ptr<Storage> s_;
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t.data()[i]))
            throw NonFiniteError(std::string(op) + ": non-finite value at flat index " +
                                 std::to_string(i));
    }
}

}  // namespace psta
