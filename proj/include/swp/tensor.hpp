#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "swp/error.hpp"

namespace swp {

/// Dense n-dimensional array, row-major, NCHW for 4-d image tensors.
/// Element type is a template parameter so the same operation code can
/// run in 32-bit for production and 64-bit for gradient checking.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int64_t> dims) : dims_(std::move(dims)) {
        data_.assign(static_cast<size_t>(check_dims(dims_)), T(0));
    }

    TensorT(std::vector<int64_t> dims, std::vector<T> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        if (check_dims(dims_) != static_cast<int64_t>(data_.size()))
            throw ShapeError("tensor data length does not match extents");
    }

    static TensorT full(std::vector<int64_t> dims, T value) {
        TensorT t(std::move(dims));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<int64_t>& dims() const { return dims_; }
    int64_t dim(size_t i) const { return dims_.at(i); }
    size_t rank() const { return dims_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T& at2(int64_t a, int64_t b) { return data_[static_cast<size_t>(a * dims_[1] + b)]; }
    const T& at2(int64_t a, int64_t b) const { return data_[static_cast<size_t>(a * dims_[1] + b)]; }

    T& at3(int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>((c * dims_[1] + h) * dims_[2] + w)];
    }
    const T& at3(int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>((c * dims_[1] + h) * dims_[2] + w)];
    }

    T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }
    const T& at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }

    /// Same storage, new extents; element count must be unchanged.
    TensorT reshaped(std::vector<int64_t> new_dims) const {
        TensorT t;
        int64_t n = check_dims(new_dims);
        if (n != numel())
            throw ShapeError("reshape changes element count");
        t.dims_ = std::move(new_dims);
        t.data_ = data_;
        return t;
    }

    bool same_dims(const TensorT& other) const { return dims_ == other.dims_; }

    std::string dims_str() const {
        std::string s = "(";
        for (size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[i]);
        }
        return s + ")";
    }

private:
    static int64_t check_dims(const std::vector<int64_t>& dims) {
        int64_t n = 1;
        for (int64_t d : dims) {
            if (d < 1)
                throw ShapeError("tensor extents must be >= 1");
            n *= d;
        }
        return n;
    }

    std::vector<int64_t> dims_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T, typename U>
TensorT<T> tensor_cast(const TensorT<U>& src) {
    std::vector<T> data(src.storage().begin(), src.storage().end());
    return TensorT<T>(src.dims(), std::move(data));
}

} // namespace swp
