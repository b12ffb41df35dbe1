#pragma once

#include "qalam/error.hpp"
#include "qalam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace qalam {

/// A trainable tensor paired with the gradient buffer its layer fills.
template <typename T>
struct parameter {
    std::string name;
    tensor<T> *value;
    tensor<T> *grad;
};

[[nodiscard]] inline double he_uniform_bound(const std::size_t fan_in) {
    return std::sqrt(6.0 / static_cast<double>(fan_in));
}

/// He-uniform initialisation: i.i.d. samples from U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <typename T, typename Rng>
[[nodiscard]] tensor<T> he_uniform_init(const std::size_t fan_in, shape s, Rng &rng) {
    if (fan_in == 0) {
        throw error{ "he_uniform_init: fan_in must be positive" };
    }
    const double bound = he_uniform_bound(fan_in);
    std::uniform_real_distribution<double> dist{ -bound, bound };
    tensor<T> out{ std::move(s) };
    for (T &v : out.data()) {
        v = static_cast<T>(dist(rng));
    }
    return out;
}

namespace detail {

inline void require_rank(const shape &s, const std::size_t rank, const char *layer) {
    if (s.rank() != rank) {
        throw shape_error{ std::string{ layer } + ": expected rank " + std::to_string(rank) + " input, got " + s.to_string() };
    }
}

template <typename T>
void require_cache(const tensor<T> &cache, const char *layer) {
    if (cache.empty()) {
        throw state_error{ std::string{ layer } + ": backward called without a training-mode forward" };
    }
}

}  // namespace detail

enum class padding { same,
                     valid };

/// 2-D cross-correlation over [batch, height, width, channels] with stride 1.
/// Kernels are stored [kh, kw, c_in, c_out], which is also the row-major
/// [kh*kw*c_in, c_out] matrix used by the im2col product.
template <typename T>
class conv2d {
  public:
    conv2d(const std::size_t in_channels, const std::size_t out_channels, const std::size_t kernel_size = 3, const padding pad = padding::same) :
        in_channels_{ in_channels },
        out_channels_{ out_channels },
        kernel_size_{ kernel_size },
        padding_{ pad },
        kernels_{ shape{ kernel_size, kernel_size, in_channels, out_channels } },
        bias_{ shape{ out_channels } },
        grad_kernels_{ kernels_.shape() },
        grad_bias_{ bias_.shape() } {
        if (pad == padding::same && kernel_size % 2 == 0) {
            throw shape_error{ "conv2d: same padding requires an odd kernel size" };
        }
    }

    template <typename Rng>
    void initialize(Rng &rng) {
        kernels_ = he_uniform_init<T>(fan_in(), kernels_.shape(), rng);
        bias_.fill(T{ 0 });
    }

    [[nodiscard]] std::size_t fan_in() const noexcept { return kernel_size_ * kernel_size_ * in_channels_; }

    [[nodiscard]] std::size_t in_channels() const noexcept { return in_channels_; }

    [[nodiscard]] std::size_t out_channels() const noexcept { return out_channels_; }

    [[nodiscard]] shape output_shape(const shape &in) const {
        detail::require_rank(in, 4, "conv2d");
        if (in[3] != in_channels_) {
            throw shape_error{ "conv2d: expected " + std::to_string(in_channels_) + " input channels, got " + in.to_string() };
        }
        if (in[1] < kernel_size_ || in[2] < kernel_size_) {
            throw shape_error{ "conv2d: spatial dims of " + in.to_string() + " smaller than kernel" };
        }
        if (padding_ == padding::same) {
            return shape{ in[0], in[1], in[2], out_channels_ };
        }
        return shape{ in[0], in[1] - kernel_size_ + 1, in[2] - kernel_size_ + 1, out_channels_ };
    }

    [[nodiscard]] tensor<T> infer(const tensor<T> &x) const {
        const shape out_shape = output_shape(x.shape());
        tensor<T> out{ out_shape };
        const std::size_t batch = x.shape()[0];
        const std::size_t out_pixels = out_shape[1] * out_shape[2];
        const std::size_t in_stride = x.shape()[1] * x.shape()[2] * in_channels_;
        const std::size_t out_stride = out_pixels * out_channels_;
        std::vector<T> cols(out_pixels * fan_in());
        for (std::size_t b = 0; b < batch; ++b) {
            im2col(x.data().data() + b * in_stride, x.shape()[1], x.shape()[2], cols.data());
            T *dst = out.data().data() + b * out_stride;
            for (std::size_t p = 0; p < out_pixels; ++p) {
                std::copy(bias_.data().begin(), bias_.data().end(), dst + p * out_channels_);
            }
            detail::gemm_nn(out_pixels, out_channels_, fan_in(), cols.data(), kernels_.data().data(), dst, true);
        }
        return out;
    }

    [[nodiscard]] tensor<T> forward(const tensor<T> &x) {
        tensor<T> out = infer(x);
        input_ = x;
        return out;
    }

    /// Accumulates kernel and bias gradients; returns the input gradient.
    [[nodiscard]] tensor<T> backward(const tensor<T> &grad_out) {
        detail::require_cache(input_, "conv2d");
        const shape out_shape = output_shape(input_.shape());
        if (grad_out.shape() != out_shape) {
            throw shape_error{ "conv2d backward: gradient shape " + grad_out.shape().to_string() + " != " + out_shape.to_string() };
        }
        const std::size_t batch = input_.shape()[0];
        const std::size_t height = input_.shape()[1];
        const std::size_t width = input_.shape()[2];
        const std::size_t out_pixels = out_shape[1] * out_shape[2];
        const std::size_t in_stride = height * width * in_channels_;
        const std::size_t out_stride = out_pixels * out_channels_;
        tensor<T> grad_x{ input_.shape() };
        std::vector<T> cols(out_pixels * fan_in());
        std::vector<T> grad_cols(out_pixels * fan_in());
        for (std::size_t b = 0; b < batch; ++b) {
            const T *g = grad_out.data().data() + b * out_stride;
            im2col(input_.data().data() + b * in_stride, height, width, cols.data());
            detail::gemm_tn(out_pixels, out_channels_, fan_in(), cols.data(), g, grad_kernels_.data().data(), true);
            for (std::size_t p = 0; p < out_pixels; ++p) {
                for (std::size_t c = 0; c < out_channels_; ++c) {
                    grad_bias_[c] += g[p * out_channels_ + c];
                }
            }
            detail::gemm_nt(out_pixels, out_channels_, fan_in(), g, kernels_.data().data(), grad_cols.data(), false);
            col2im(grad_cols.data(), height, width, grad_x.data().data() + b * in_stride);
        }
        return grad_x;
    }

    void zero_grad() {
        grad_kernels_.fill(T{ 0 });
        grad_bias_.fill(T{ 0 });
    }

    void clear_cache() { input_ = {}; }

    [[nodiscard]] std::vector<parameter<T>> parameters() {
        return { { "kernels", &kernels_, &grad_kernels_ }, { "bias", &bias_, &grad_bias_ } };
    }

    [[nodiscard]] tensor<T> &kernels() noexcept { return kernels_; }
    [[nodiscard]] tensor<T> &bias() noexcept { return bias_; }
    [[nodiscard]] const tensor<T> &grad_kernels() const noexcept { return grad_kernels_; }
    [[nodiscard]] const tensor<T> &grad_bias() const noexcept { return grad_bias_; }

  private:
    [[nodiscard]] std::size_t pad() const noexcept { return padding_ == padding::same ? (kernel_size_ - 1) / 2 : 0; }

    // One row per output pixel, columns ordered (ky, kx, c_in); out-of-range taps are zero.
    void im2col(const T *image, const std::size_t height, const std::size_t width, T *cols) const {
        const std::size_t p = pad();
        const std::size_t out_h = padding_ == padding::same ? height : height - kernel_size_ + 1;
        const std::size_t out_w = padding_ == padding::same ? width : width - kernel_size_ + 1;
        const std::size_t row_len = fan_in();
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                T *row = cols + (oy * out_w + ox) * row_len;
                for (std::size_t ky = 0; ky < kernel_size_; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(p);
                    for (std::size_t kx = 0; kx < kernel_size_; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(p);
                        T *dst = row + (ky * kernel_size_ + kx) * in_channels_;
                        if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(height) || ix >= static_cast<std::ptrdiff_t>(width)) {
                            std::fill(dst, dst + in_channels_, T{ 0 });
                        } else {
                            const T *src = image + (static_cast<std::size_t>(iy) * width + static_cast<std::size_t>(ix)) * in_channels_;
                            std::copy(src, src + in_channels_, dst);
                        }
                    }
                }
            }
        }
    }

    void col2im(const T *cols, const std::size_t height, const std::size_t width, T *image) const {
        const std::size_t p = pad();
        const std::size_t out_h = padding_ == padding::same ? height : height - kernel_size_ + 1;
        const std::size_t out_w = padding_ == padding::same ? width : width - kernel_size_ + 1;
        const std::size_t row_len = fan_in();
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const T *row = cols + (oy * out_w + ox) * row_len;
                for (std::size_t ky = 0; ky < kernel_size_; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(p);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        continue;
                    }
                    for (std::size_t kx = 0; kx < kernel_size_; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(p);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) {
                            continue;
                        }
                        const T *src = row + (ky * kernel_size_ + kx) * in_channels_;
                        T *dst = image + (static_cast<std::size_t>(iy) * width + static_cast<std::size_t>(ix)) * in_channels_;
                        for (std::size_t c = 0; c < in_channels_; ++c) {
                            dst[c] += src[c];
                        }
                    }
                }
            }
        }
    }

    std::size_t in_channels_;
    std::size_t out_channels_;
    std::size_t kernel_size_;
    padding padding_;
    tensor<T> kernels_;
    tensor<T> bias_;
    tensor<T> grad_kernels_;
    tensor<T> grad_bias_;
    tensor<T> input_;
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
class max_pool2 {
  public:
    [[nodiscard]] static shape output_shape(const shape &in) {
        detail::require_rank(in, 4, "max_pool2");
        if (in[1] < 2 || in[2] < 2) {
            throw shape_error{ "max_pool2: input " + in.to_string() + " too small to pool" };
        }
        return shape{ in[0], in[1] / 2, in[2] / 2, in[3] };
    }

    [[nodiscard]] tensor<T> infer(const tensor<T> &x) const {
        std::vector<std::size_t> unused;
        return pool(x, unused);
    }

    [[nodiscard]] tensor<T> forward(const tensor<T> &x) {
        tensor<T> out = pool(x, argmax_);
        input_shape_ = x.shape();
        return out;
    }

    [[nodiscard]] tensor<T> backward(const tensor<T> &grad_out) {
        if (argmax_.empty()) {
            throw state_error{ "max_pool2: backward called without a training-mode forward" };
        }
        if (grad_out.size() != argmax_.size()) {
            throw shape_error{ "max_pool2 backward: gradient shape " + grad_out.shape().to_string() + " does not match forward output" };
        }
        tensor<T> grad_x{ input_shape_ };
        for (std::size_t i = 0; i < argmax_.size(); ++i) {
            grad_x[argmax_[i]] += grad_out[i];
        }
        return grad_x;
    }

    void clear_cache() { argmax_.clear(); }

  private:
    // Ties resolve to the first maximum in row-major window order.
    tensor<T> pool(const tensor<T> &x, std::vector<std::size_t> &argmax) const {
        const shape out_shape = output_shape(x.shape());
        const std::size_t height = x.shape()[1];
        const std::size_t width = x.shape()[2];
        const std::size_t channels = x.shape()[3];
        tensor<T> out{ out_shape };
        argmax.assign(out.size(), 0);
        std::size_t o = 0;
        for (std::size_t b = 0; b < out_shape[0]; ++b) {
            for (std::size_t oy = 0; oy < out_shape[1]; ++oy) {
                for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
                    for (std::size_t c = 0; c < channels; ++c, ++o) {
                        std::size_t best = ((b * height + 2 * oy) * width + 2 * ox) * channels + c;
                        for (std::size_t dy = 0; dy < 2; ++dy) {
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                const std::size_t idx = ((b * height + 2 * oy + dy) * width + 2 * ox + dx) * channels + c;
                                if (x[idx] > x[best]) {
                                    best = idx;
                                }
                            }
                        }
                        out[o] = x[best];
                        argmax[o] = best;
                    }
                }
            }
        }
        return out;
    }

    std::vector<std::size_t> argmax_;
    shape input_shape_;
};

/// Per-channel batch normalisation over every axis but the last.
template <typename T>
class batch_norm {
  public:
    explicit batch_norm(const std::size_t channels, const double momentum = 0.99, const double epsilon = 1e-3) :
        channels_{ channels },
        momentum_{ momentum },
        epsilon_{ epsilon },
        gamma_{ tensor<T>::full(shape{ channels }, T{ 1 }) },
        beta_{ shape{ channels } },
        running_mean_{ shape{ channels } },
        running_var_{ tensor<T>::full(shape{ channels }, T{ 1 }) },
        grad_gamma_{ shape{ channels } },
        grad_beta_{ shape{ channels } } {
        if (!(momentum > 0.0 && momentum < 1.0) || !(epsilon > 0.0)) {
            throw error{ "batch_norm: momentum must lie in (0,1) and epsilon must be positive" };
        }
    }

    [[nodiscard]] std::size_t channels() const noexcept { return channels_; }

    [[nodiscard]] tensor<T> infer(const tensor<T> &x) const {
        check_input(x);
        tensor<T> out{ x.shape() };
        std::vector<T> scale_c(channels_);
        std::vector<T> shift_c(channels_);
        for (std::size_t c = 0; c < channels_; ++c) {
            const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var_[c]) + epsilon_);
            scale_c[c] = static_cast<T>(gamma_[c] * inv_std);
            shift_c[c] = static_cast<T>(beta_[c] - running_mean_[c] * gamma_[c] * inv_std);
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            const std::size_t c = i % channels_;
            out[i] = x[i] * scale_c[c] + shift_c[c];
        }
        return out;
    }

    /// Normalises with batch statistics and updates the running averages.
    [[nodiscard]] tensor<T> forward(const tensor<T> &x) {
        check_input(x);
        const std::size_t n = x.size() / channels_;
        std::vector<double> mean(channels_, 0.0);
        std::vector<double> var(channels_, 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            mean[i % channels_] += x[i];
        }
        for (double &m : mean) {
            m /= static_cast<double>(n);
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - mean[i % channels_];
            var[i % channels_] += d * d;
        }
        inv_std_.assign(channels_, T{ 0 });
        for (std::size_t c = 0; c < channels_; ++c) {
            var[c] /= static_cast<double>(n);
            inv_std_[c] = static_cast<T>(1.0 / std::sqrt(var[c] + epsilon_));
            running_mean_[c] = static_cast<T>(momentum_ * running_mean_[c] + (1.0 - momentum_) * mean[c]);
            running_var_[c] = static_cast<T>(momentum_ * running_var_[c] + (1.0 - momentum_) * var[c]);
        }
        normalized_ = tensor<T>{ x.shape() };
        tensor<T> out{ x.shape() };
        for (std::size_t i = 0; i < x.size(); ++i) {
            const std::size_t c = i % channels_;
            normalized_[i] = static_cast<T>((x[i] - mean[c]) * inv_std_[c]);
            out[i] = gamma_[c] * normalized_[i] + beta_[c];
        }
        return out;
    }

    [[nodiscard]] tensor<T> backward(const tensor<T> &grad_out) {
        detail::require_cache(normalized_, "batch_norm");
        detail::require_same_shape(grad_out, normalized_, "batch_norm backward");
        const std::size_t n = grad_out.size() / channels_;
        std::vector<double> sum_dy(channels_, 0.0);
        std::vector<double> sum_dy_xhat(channels_, 0.0);
        for (std::size_t i = 0; i < grad_out.size(); ++i) {
            const std::size_t c = i % channels_;
            sum_dy[c] += grad_out[i];
            sum_dy_xhat[c] += grad_out[i] * normalized_[i];
        }
        for (std::size_t c = 0; c < channels_; ++c) {
            grad_beta_[c] += static_cast<T>(sum_dy[c]);
            grad_gamma_[c] += static_cast<T>(sum_dy_xhat[c]);
        }
        tensor<T> grad_x{ grad_out.shape() };
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < grad_out.size(); ++i) {
            const std::size_t c = i % channels_;
            const double k = static_cast<double>(gamma_[c]) * inv_std_[c];
            grad_x[i] = static_cast<T>(k * (grad_out[i] - inv_n * sum_dy[c] - normalized_[i] * inv_n * sum_dy_xhat[c]));
        }
        return grad_x;
    }

    void zero_grad() {
        grad_gamma_.fill(T{ 0 });
        grad_beta_.fill(T{ 0 });
    }

    void clear_cache() { normalized_ = {}; }

    [[nodiscard]] std::vector<parameter<T>> parameters() {
        return { { "gamma", &gamma_, &grad_gamma_ }, { "beta", &beta_, &grad_beta_ } };
    }

    /// Non-trainable state saved alongside the parameters.
    [[nodiscard]] std::vector<tensor<T> *> buffers() { return { &running_mean_, &running_var_ }; }

    [[nodiscard]] tensor<T> &gamma() noexcept { return gamma_; }
    [[nodiscard]] tensor<T> &beta() noexcept { return beta_; }
    [[nodiscard]] tensor<T> &running_mean() noexcept { return running_mean_; }
    [[nodiscard]] tensor<T> &running_var() noexcept { return running_var_; }

  private:
    void check_input(const tensor<T> &x) const {
        const shape &s = x.shape();
        if (s.rank() < 2 || s[s.rank() - 1] != channels_) {
            throw shape_error{ "batch_norm: expected trailing dimension " + std::to_string(channels_) + ", got " + s.to_string() };
        }
    }

    std::size_t channels_;
    double momentum_;
    double epsilon_;
    tensor<T> gamma_;
    tensor<T> beta_;
    tensor<T> running_mean_;
    tensor<T> running_var_;
    tensor<T> grad_gamma_;
    tensor<T> grad_beta_;
    tensor<T> normalized_;
    std::vector<T> inv_std_;
};

/// Fully connected layer: out = x W + b with x of shape [batch, in].
template <typename T>
class dense {
  public:
    dense(const std::size_t in_features, const std::size_t out_features) :
        weights_{ shape{ in_features, out_features } },
        bias_{ shape{ out_features } },
        grad_weights_{ weights_.shape() },
        grad_bias_{ bias_.shape() } {}

    template <typename Rng>
    void initialize(Rng &rng) {
        weights_ = he_uniform_init<T>(in_features(), weights_.shape(), rng);
        bias_.fill(T{ 0 });
    }

    [[nodiscard]] std::size_t in_features() const noexcept { return weights_.shape()[0]; }

    [[nodiscard]] std::size_t out_features() const noexcept { return weights_.shape()[1]; }

    [[nodiscard]] tensor<T> infer(const tensor<T> &x) const {
        detail::require_rank(x.shape(), 2, "dense");
        if (x.shape()[1] != in_features()) {
            throw shape_error{ "dense: expected " + std::to_string(in_features()) + " features, got " + x.shape().to_string() };
        }
        const std::size_t batch = x.shape()[0];
        tensor<T> out{ shape{ batch, out_features() } };
        for (std::size_t b = 0; b < batch; ++b) {
            std::copy(bias_.data().begin(), bias_.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * out_features()));
        }
        detail::gemm_nn(batch, out_features(), in_features(), x.data().data(), weights_.data().data(), out.data().data(), true);
        return out;
    }

    [[nodiscard]] tensor<T> forward(const tensor<T> &x) {
        tensor<T> out = infer(x);
        input_ = x;
        return out;
    }

    [[nodiscard]] tensor<T> backward(const tensor<T> &grad_out) {
        detail::require_cache(input_, "dense");
        const std::size_t batch = input_.shape()[0];
        if (grad_out.shape() != shape{ batch, out_features() }) {
            throw shape_error{ "dense backward: unexpected gradient shape " + grad_out.shape().to_string() };
        }
        detail::gemm_tn(batch, out_features(), in_features(), input_.data().data(), grad_out.data().data(), grad_weights_.data().data(), true);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t j = 0; j < out_features(); ++j) {
                grad_bias_[j] += grad_out(b, j);
            }
        }
        tensor<T> grad_x{ input_.shape() };
        detail::gemm_nt(batch, out_features(), in_features(), grad_out.data().data(), weights_.data().data(), grad_x.data().data(), false);
        return grad_x;
    }

    void zero_grad() {
        grad_weights_.fill(T{ 0 });
        grad_bias_.fill(T{ 0 });
    }

    void clear_cache() { input_ = {}; }

    [[nodiscard]] std::vector<parameter<T>> parameters() {
        return { { "weights", &weights_, &grad_weights_ }, { "bias", &bias_, &grad_bias_ } };
    }

    [[nodiscard]] tensor<T> &weights() noexcept { return weights_; }
    [[nodiscard]] tensor<T> &bias() noexcept { return bias_; }
    [[nodiscard]] const tensor<T> &grad_weights() const noexcept { return grad_weights_; }
    [[nodiscard]] const tensor<T> &grad_bias() const noexcept { return grad_bias_; }

  private:
    tensor<T> weights_;
    tensor<T> bias_;
    tensor<T> grad_weights_;
    tensor<T> grad_bias_;
    tensor<T> input_;
};

template <typename T>
class leaky_relu {
  public:
    explicit leaky_relu(const double slope = 0.3) :
        slope_{ static_cast<T>(slope) } {}

    [[nodiscard]] T slope() const noexcept { return slope_; }

    [[nodiscard]] T apply(const T v) const noexcept { return v >= T{ 0 } ? v : slope_ * v; }

    [[nodiscard]] tensor<T> infer(const tensor<T> &x) const {
        tensor<T> out{ x.shape() };
        for (std::size_t i = 0; i < x.size(); ++i) {
            out[i] = apply(x[i]);
        }
        return out;
    }

    [[nodiscard]] tensor<T> forward(const tensor<T> &x) {
        input_ = x;
        return infer(x);
    }

    [[nodiscard]] tensor<T> backward(const tensor<T> &grad_out) {
        detail::require_cache(input_, "leaky_relu");
        detail::require_same_shape(grad_out, input_, "leaky_relu backward");
        tensor<T> grad_x{ grad_out.shape() };
        for (std::size_t i = 0; i < grad_out.size(); ++i) {
            grad_x[i] = input_[i] >= T{ 0 } ? grad_out[i] : slope_ * grad_out[i];
        }
        return grad_x;
    }

    void clear_cache() { input_ = {}; }

  private:
    T slope_;
    tensor<T> input_;
};

/// Inverted dropout: in training each element survives with probability
/// 1 - rate and survivors are scaled by 1 / (1 - rate). Inference is identity.
template <typename T>
class dropout {
  public:
    explicit dropout(const double rate = 0.3, const std::uint64_t seed = 0) :
        rate_{ rate },
        rng_{ seed } {
        if (!(rate >= 0.0 && rate < 1.0)) {
            throw error{ "dropout: rate must lie in [0, 1)" };
        }
    }

    [[nodiscard]] double rate() const noexcept { return rate_; }

    void reseed(const std::uint64_t seed) { rng_.seed(seed); }

    [[nodiscard]] tensor<T> infer(const tensor<T> &x) const { return x; }

    [[nodiscard]] tensor<T> forward(const tensor<T> &x) {
        mask_ = tensor<T>{ x.shape() };
        const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
        std::bernoulli_distribution keep{ 1.0 - rate_ };
        for (T &m : mask_.data()) {
            m = (rate_ == 0.0 || keep(rng_)) ? keep_scale : T{ 0 };
        }
        return replay(x);
    }

    /// Applies the mask drawn by the last training-mode forward.
    [[nodiscard]] tensor<T> replay(const tensor<T> &x) const {
        detail::require_cache(mask_, "dropout");
        detail::require_same_shape(x, mask_, "dropout");
        tensor<T> out{ x.shape() };
        for (std::size_t i = 0; i < x.size(); ++i) {
            out[i] = x[i] * mask_[i];
        }
        return out;
    }

    [[nodiscard]] tensor<T> backward(const tensor<T> &grad_out) const { return replay(grad_out); }

    void clear_cache() { mask_ = {}; }

  private:
    double rate_;
    std::mt19937_64 rng_;
    tensor<T> mask_;
};

/// [batch, ...] -> [batch, prod(...)]
template <typename T>
class flatten_layer {
  public:
    [[nodiscard]] tensor<T> infer(const tensor<T> &x) const {
        return x.reshaped(shape{ x.shape()[0], x.size() / x.shape()[0] });
    }

    [[nodiscard]] tensor<T> forward(const tensor<T> &x) {
        input_shape_ = x.shape();
        return infer(x);
    }

    [[nodiscard]] tensor<T> backward(const tensor<T> &grad_out) {
        if (input_shape_.rank() == 0) {
            throw state_error{ "flatten: backward called without a training-mode forward" };
        }
        return grad_out.reshaped(input_shape_);
    }

    void clear_cache() { input_shape_ = shape{}; }

  private:
    shape input_shape_;
};

}  // namespace qalam
