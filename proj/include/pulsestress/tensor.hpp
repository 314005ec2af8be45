#pragma once

#include "pulsestress/error.hpp"

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace pulsestress::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Row-major dense array tagged with its extents.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_size(shape_)) {
            throw Error(Errc::Shape, "tensor data of " + std::to_string(data_.size()) +
                                         " elements does not match shape " + shape_string(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Row `i` along the leading axis.
    std::span<T> row(std::size_t i) {
        const std::size_t stride = data_.size() / shape_.front();
        return {data_.data() + i * stride, stride};
    }
    std::span<const T> row(std::size_t i) const {
        const std::size_t stride = data_.size() / shape_.front();
        return {data_.data() + i * stride, stride};
    }

    void require_shape(const Shape& expected, const char* what) const {
        if (shape_ != expected) {
            throw Error(Errc::Shape, std::string(what) + ": expected shape " +
                                         shape_string(expected) + ", got " + shape_string(shape_));
        }
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

}  // namespace pulsestress::nn
