#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "slpt/diffcore/errors.hpp"

namespace slpt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// Every buffer starts on a cache line. Eigen's vectorized reductions peel a
// different prefix depending on the start address, so without this the
// summation order (and the last bits of results) would follow the heap layout.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

template <class T>
using Storage = std::vector<T, AlignedAllocator<T>>;

template <class T>
using MatrixMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Dense row-major array. Rank-2 tensors are the common case (rows = points or
// pixels, cols = channels); a scalar is stored as shape {1, 1}.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Storage<T>(data.begin(), data.end())) {}
    Tensor(Shape shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        require(data_.size() == shape_numel(shape_),
                "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) { return Tensor({rows, cols}, fill); }
    static Tensor scalar(T v) { return Tensor({1, 1}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const
    {
        require(rank() == 2, "rows() on rank-" + std::to_string(rank()) + " tensor");
        return shape_[0];
    }
    std::size_t cols() const
    {
        require(rank() == 2, "cols() on rank-" + std::to_string(rank()) + " tensor");
        return shape_[1];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    Storage<T>& vec() { return data_; }
    const Storage<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    T* row(std::size_t r) { return data_.data() + r * shape_[1]; }
    const T* row(std::size_t r) const { return data_.data() + r * shape_[1]; }

    T item() const
    {
        require(data_.size() == 1, "item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    MatrixMap<T> mat() { return MatrixMap<T>(data_.data(), rows(), cols()); }
    ConstMatrixMap<T> mat() const { return ConstMatrixMap<T>(data_.data(), rows(), cols()); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const
    {
        Storage<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    Tensor& operator+=(const Tensor& other)
    {
        require(shape_ == other.shape_, "shape mismatch in += " + shape_str(shape_) + " vs " + shape_str(other.shape_));
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    Storage<T> data_;
};

template <class T>
Tensor<T> rows_gather(const Tensor<T>& src, std::span<const int> idx)
{
    const std::size_t c = src.cols();
    Tensor<T> out = Tensor<T>::matrix(idx.size(), c);
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(src.row(static_cast<std::size_t>(idx[i])), c, out.row(i));
    return out;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b)
{
    require(a.shape() == b.shape(), "max_abs_diff shape mismatch");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace slpt
