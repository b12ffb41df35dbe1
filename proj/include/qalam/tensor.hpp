#pragma once

#include "qalam/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qalam {

/// Dimensions of a dense row-major array. Images are [height, width, channels];
/// batches prepend a leading dimension.
class shape {
  public:
    shape() = default;

    shape(std::initializer_list<std::size_t> dims) :
        shape{ std::vector<std::size_t>(dims) } {}

    explicit shape(std::vector<std::size_t> dims) :
        dims_{ std::move(dims) } {
        if (dims_.empty()) {
            throw shape_error{ "shape must have at least one dimension" };
        }
        for (const std::size_t d : dims_) {
            if (d == 0) {
                throw shape_error{ "zero-element shape " + to_string() };
            }
        }
    }

    [[nodiscard]] std::size_t rank() const noexcept { return dims_.size(); }

    [[nodiscard]] std::size_t operator[](const std::size_t i) const { return dims_.at(i); }

    [[nodiscard]] const std::vector<std::size_t> &dims() const noexcept { return dims_; }

    [[nodiscard]] std::size_t elements() const noexcept {
        if (dims_.empty()) {
            return 0;
        }
        return std::accumulate(dims_.begin(), dims_.end(), std::size_t{ 1 }, std::multiplies<>{});
    }

    [[nodiscard]] std::string to_string() const {
        std::ostringstream out;
        out << '[';
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            out << (i == 0 ? "" : ",") << dims_[i];
        }
        out << ']';
        return out.str();
    }

    friend bool operator==(const shape &, const shape &) = default;

  private:
    std::vector<std::size_t> dims_;
};

/// Dense n-dimensional array. A default-constructed tensor is empty and is
/// used by layers to mean "nothing cached".
template <typename T>
class tensor {
  public:
    using value_type = T;

    tensor() = default;

    explicit tensor(class shape s) :
        shape_{ std::move(s) },
        data_(shape_.elements(), T{ 0 }) {}

    tensor(class shape s, std::vector<T> data) :
        shape_{ std::move(s) },
        data_{ std::move(data) } {
        if (data_.size() != shape_.elements()) {
            throw shape_error{ "data length " + std::to_string(data_.size()) + " does not match shape " + shape_.to_string() };
        }
    }

    [[nodiscard]] static tensor zeros(class shape s) { return tensor{ std::move(s) }; }

    [[nodiscard]] static tensor full(class shape s, const T value) {
        tensor t{ std::move(s) };
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    [[nodiscard]] const class shape &shape() const noexcept { return shape_; }

    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }

    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }

    [[nodiscard]] T &operator[](const std::size_t i) noexcept { return data_[i]; }

    [[nodiscard]] const T &operator[](const std::size_t i) const noexcept { return data_[i]; }

    // Row-major element access for rank-2 tensors.
    [[nodiscard]] T &operator()(const std::size_t row, const std::size_t col) noexcept { return data_[row * shape_[1] + col]; }

    [[nodiscard]] const T &operator()(const std::size_t row, const std::size_t col) const noexcept { return data_[row * shape_[1] + col]; }

    /// Same data under a new shape with an equal element count.
    [[nodiscard]] tensor reshaped(class shape s) const & {
        tensor out{ *this };
        out.reshape_in_place(std::move(s));
        return out;
    }

    [[nodiscard]] tensor reshaped(class shape s) && {
        reshape_in_place(std::move(s));
        return std::move(*this);
    }

    void fill(const T value) { std::fill(data_.begin(), data_.end(), value); }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](const T v) { return std::isfinite(v); });
    }

    template <typename U>
    [[nodiscard]] tensor<U> cast() const {
        return tensor<U>{ shape_, std::vector<U>(data_.begin(), data_.end()) };
    }

    friend bool operator==(const tensor &, const tensor &) = default;

  private:
    void reshape_in_place(class shape s) {
        if (s.elements() != data_.size()) {
            throw shape_error{ "cannot reshape " + shape_.to_string() + " to " + s.to_string() };
        }
        shape_ = std::move(s);
    }

    class shape shape_;
    std::vector<T> data_;
};

namespace detail {

template <typename T>
void require_finite(const tensor<T> &t, const char *op) {
    if (!t.all_finite()) {
        throw numeric_error{ std::string{ op } + " produced a non-finite value" };
    }
}

template <typename T>
void require_same_shape(const tensor<T> &a, const tensor<T> &b, const char *op) {
    if (a.shape() != b.shape()) {
        throw shape_error{ std::string{ op } + ": shape mismatch " + a.shape().to_string() + " vs " + b.shape().to_string() };
    }
}

template <typename T, typename Op>
tensor<T> zip(const tensor<T> &a, const tensor<T> &b, const char *name, Op op) {
    require_same_shape(a, b, name);
    tensor<T> out{ a.shape() };
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = op(a[i], b[i]);
    }
    require_finite(out, name);
    return out;
}

template <typename T, typename Op>
tensor<T> map(const tensor<T> &a, const char *name, Op op) {
    tensor<T> out{ a.shape() };
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = op(a[i]);
    }
    require_finite(out, name);
    return out;
}

// Row-major GEMM kernels on raw buffers. The innermost loop always walks a
// contiguous row so the compiler can vectorize it; loop order is fixed, so
// results are bit-deterministic for a given input.

// C[m x n] (+)= A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const std::size_t m, const std::size_t n, const std::size_t k, const T *a, const T *b, T *c, const bool accumulate) {
    if (!accumulate) {
        std::fill(c, c + m * n, T{ 0 });
    }
    for (std::size_t i = 0; i < m; ++i) {
        T *c_row = c + i * n;
        const T *a_row = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T a_ip = a_row[p];
            if (a_ip == T{ 0 }) {
                continue;
            }
            const T *b_row = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
}

// C[k x n] (+)= A[m x k]^T * B[m x n]
template <typename T>
void gemm_tn(const std::size_t m, const std::size_t n, const std::size_t k, const T *a, const T *b, T *c, const bool accumulate) {
    if (!accumulate) {
        std::fill(c, c + k * n, T{ 0 });
    }
    for (std::size_t i = 0; i < m; ++i) {
        const T *a_row = a + i * k;
        const T *b_row = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T a_ip = a_row[p];
            if (a_ip == T{ 0 }) {
                continue;
            }
            T *c_row = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
}

// C[m x k] (+)= A[m x n] * B[k x n]^T
template <typename T>
void gemm_nt(const std::size_t m, const std::size_t n, const std::size_t k, const T *a, const T *b, T *c, const bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const T *a_row = a + i * n;
        T *c_row = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T *b_row = b + p * n;
            T acc{ 0 };
            for (std::size_t j = 0; j < n; ++j) {
                acc += a_row[j] * b_row[j];
            }
            c_row[p] = accumulate ? c_row[p] + acc : acc;
        }
    }
}

}  // namespace detail

template <typename T>
[[nodiscard]] tensor<T> zeros(shape s) {
    return tensor<T>::zeros(std::move(s));
}

template <typename T>
[[nodiscard]] tensor<T> full(shape s, const T value) {
    return tensor<T>::full(std::move(s), value);
}

template <typename T>
[[nodiscard]] tensor<T> add(const tensor<T> &a, const tensor<T> &b) {
    return detail::zip(a, b, "add", [](T x, T y) { return x + y; });
}

template <typename T>
[[nodiscard]] tensor<T> sub(const tensor<T> &a, const tensor<T> &b) {
    return detail::zip(a, b, "sub", [](T x, T y) { return x - y; });
}

template <typename T>
[[nodiscard]] tensor<T> mul(const tensor<T> &a, const tensor<T> &b) {
    return detail::zip(a, b, "mul", [](T x, T y) { return x * y; });
}

template <typename T>
[[nodiscard]] tensor<T> add(const tensor<T> &a, const T b) {
    return detail::map(a, "add", [b](T x) { return x + b; });
}

template <typename T>
[[nodiscard]] tensor<T> sub(const tensor<T> &a, const T b) {
    return detail::map(a, "sub", [b](T x) { return x - b; });
}

template <typename T>
[[nodiscard]] tensor<T> scale(const tensor<T> &a, const T factor) {
    return detail::map(a, "scale", [factor](T x) { return x * factor; });
}

template <typename T>
[[nodiscard]] tensor<T> mul(const tensor<T> &a, const T b) {
    return scale(a, b);
}

template <typename T>
[[nodiscard]] tensor<T> matmul(const tensor<T> &a, const tensor<T> &b) {
    if (a.shape().rank() != 2 || b.shape().rank() != 2) {
        throw shape_error{ "matmul expects rank-2 operands, got " + a.shape().to_string() + " and " + b.shape().to_string() };
    }
    const std::size_t m = a.shape()[0];
    const std::size_t k = a.shape()[1];
    const std::size_t n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw shape_error{ "matmul inner dimension mismatch " + a.shape().to_string() + " x " + b.shape().to_string() };
    }
    tensor<T> out{ shape{ m, n } };
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data(), false);
    detail::require_finite(out, "matmul");
    return out;
}

template <typename T>
[[nodiscard]] tensor<T> transpose2d(const tensor<T> &a) {
    if (a.shape().rank() != 2) {
        throw shape_error{ "transpose2d expects a rank-2 tensor, got " + a.shape().to_string() };
    }
    const std::size_t rows = a.shape()[0];
    const std::size_t cols = a.shape()[1];
    tensor<T> out{ shape{ cols, rows } };
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

template <typename T>
[[nodiscard]] tensor<T> reshape(const tensor<T> &a, shape s) {
    return a.reshaped(std::move(s));
}

template <typename T>
[[nodiscard]] tensor<T> flatten(const tensor<T> &a) {
    return a.reshaped(shape{ a.size() });
}

}  // namespace qalam
