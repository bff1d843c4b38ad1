#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mscred/errors.hpp"

namespace mscred::nd {

/// std::allocator variant that leaves trivially constructible elements
/// uninitialized on default construction; buffers that are fully
/// overwritten skip a wasted pass over memory.
template <typename T>
struct default_init_allocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = default_init_allocator<U>;
    };
    using std::allocator<T>::allocator;

    template <typename U>
    void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(ptr)) U;
    }
    template <typename U, typename... Args>
    void construct(U* ptr, Args&&... args) {
        ::new (static_cast<void*>(ptr)) U(std::forward<Args>(args)...);
    }
};

using buffer = std::vector<double, default_init_allocator<double>>;

/// Dense row-major array of 64-bit reals, rank 1 to 4.
///
/// This is the value carrier for everything numeric in the project:
/// time series matrices, signature tensors, feature maps, kernels.
/// Hot loops work on raw data() pointers; at() is for cold paths and tests.
/// The (shape) constructor zero-fills; uninitialized() skips the fill for
/// buffers whose every element is about to be written.
class Array {
public:
    Array() = default;

    explicit Array(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.resize(static_cast<std::size_t>(count(shape_)));
        fill(0.0);
    }

    static Array uninitialized(std::vector<int> shape) {
        Array a;
        a.shape_ = std::move(shape);
        a.data_.resize(static_cast<std::size_t>(count(a.shape_)));
        return a;
    }

    Array(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)) {
        if (count(shape_) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("array data length does not match shape");
        data_.assign(data.begin(), data.end());
    }

    static Array full(std::vector<int> shape, double value) {
        Array a = uninitialized(std::move(shape));
        a.fill(value);
        return a;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    bool same_shape(const Array& other) const { return shape_ == other.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(int i, int j) { return data_[idx2(i, j)]; }
    double at(int i, int j) const { return data_[idx2(i, j)]; }
    double& at(int i, int j, int k) { return data_[idx3(i, j, k)]; }
    double at(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
    double& at(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
    double at(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

    void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::int64_t count(const std::vector<int>& shape) {
        std::int64_t c = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("negative dimension");
            c *= d;
        }
        return c;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    std::size_t idx2(int i, int j) const {
        return static_cast<std::size_t>(i) * shape_[1] + j;
    }
    std::size_t idx3(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
    }
    std::size_t idx4(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    std::vector<int> shape_;
    buffer data_;
};

}  // namespace mscred::nd
