#ifndef ILKD_TENSOR_HPP
#define ILKD_TENSOR_HPP

#include <Eigen/Core>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilkd {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

#define ILKD_CHECK(cond, msg)                                  \
    do {                                                       \
        if (!(cond)) ::ilkd::fail(std::string("check failed: ") + (msg)); \
    } while (0)

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<MatX<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const MatX<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Dense row-major tensor. Rank is dynamic; NCHW for images, (N, D) for
/// embedding matrices.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}
    Tensor(Shape shape, T value) : shape_(std::move(shape)), data_(checked_numel(shape_), value) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape& shape() const { return shape_; }
    int ndims() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T& operator()(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    const T& operator()(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

    T& operator()(int n, int c, int h, int w) {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& operator()(int n, int c, int h, int w) const {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// In-place shape change; element count must match.
    void reshape(Shape s) {
        ILKD_CHECK(checked_numel(s) == numel(), "reshape changes element count " + shape_str(shape_) + " -> " + shape_str(s));
        shape_ = std::move(s);
    }

    /// 2-D Eigen view with explicit dimensions (rows*cols must equal numel).
    MatMap<T> mat(int rows, int cols) {
        ILKD_CHECK(static_cast<int64_t>(rows) * cols == numel(), "mat() view size mismatch");
        return MatMap<T>(data(), rows, cols);
    }
    ConstMatMap<T> mat(int rows, int cols) const {
        ILKD_CHECK(static_cast<int64_t>(rows) * cols == numel(), "mat() view size mismatch");
        return ConstMatMap<T>(data(), rows, cols);
    }

    /// (N, D) view of a rank-2 tensor.
    MatMap<T> mat2d() { ILKD_CHECK(ndims() == 2, "mat2d() on rank " + std::to_string(ndims())); return mat(shape_[0], shape_[1]); }
    ConstMatMap<T> mat2d() const { ILKD_CHECK(ndims() == 2, "mat2d() on rank " + std::to_string(ndims())); return mat(shape_[0], shape_[1]); }

    VecMap<T> vec() { return VecMap<T>(data(), numel()); }
    ConstVecMap<T> vec() const { return ConstVecMap<T>(data(), numel()); }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

private:
    static int64_t checked_numel(const Shape& s) {
        int64_t n = 1;
        for (int d : s) {
            ILKD_CHECK(d >= 0, "negative dimension in " + shape_str(s));
            n *= d;
        }
        return n;
    }

    Shape shape_;
    std::vector<T> data_;
};

}  // namespace ilkd

#endif
