#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wellqc/errors.hpp"

namespace wellqc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    if (shape.size() == 1) os << ',';
    os << ')';
    return os.str();
}

/// Dense row-major n-dimensional array. Images and activations use HWC order.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
        check_dims();
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (shape_size(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // HWC accessors for rank-3 tensors.
    T& at(std::size_t y, std::size_t x, std::size_t c) {
        return data_[(y * shape_[1] + x) * shape_[2] + c];
    }
    const T& at(std::size_t y, std::size_t x, std::size_t c) const {
        return data_[(y * shape_[1] + x) * shape_[2] + c];
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size())
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    Tensor& operator*=(T scale) {
        for (auto& v : data_) v *= scale;
        return *this;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    void require_same_shape(const Tensor& other, const char* op) const {
        if (shape_ != other.shape_)
            throw ShapeError(std::string("shape mismatch in ") + op + ": " + shape_string(shape_) +
                             " vs " + shape_string(other.shape_));
    }

private:
    void check_dims() const {
        for (auto d : shape_)
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

} // namespace wellqc
