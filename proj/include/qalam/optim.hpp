#pragma once

#include "qalam/error.hpp"
#include "qalam/layers.hpp"
#include "qalam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace qalam {

/// Row-wise softmax of [batch, K] logits, stabilised by subtracting the row max.
template <typename T>
[[nodiscard]] tensor<T> softmax(const tensor<T> &logits) {
    detail::require_rank(logits.shape(), 2, "softmax");
    const std::size_t rows = logits.shape()[0];
    const std::size_t k = logits.shape()[1];
    tensor<T> probs{ logits.shape() };
    for (std::size_t r = 0; r < rows; ++r) {
        const T *in = logits.data().data() + r * k;
        T *out = probs.data().data() + r * k;
        const T row_max = *std::max_element(in, in + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double e = std::exp(static_cast<double>(in[j] - row_max));
            out[j] = static_cast<T>(e);
            sum += e;
        }
        for (std::size_t j = 0; j < k; ++j) {
            out[j] = static_cast<T>(out[j] / sum);
        }
    }
    return probs;
}

template <typename T>
struct loss_result {
    double loss;
    tensor<T> probabilities;
};

/// Categorical cross-entropy on softmax outputs, averaged over the batch.
template <typename T>
class softmax_cross_entropy {
  public:
    explicit softmax_cross_entropy(const std::size_t classes) :
        classes_{ classes } {
        if (classes < 2) {
            throw error{ "softmax_cross_entropy: need at least two classes" };
        }
    }

    [[nodiscard]] std::size_t classes() const noexcept { return classes_; }

    [[nodiscard]] loss_result<T> forward(const tensor<T> &logits, const tensor<T> &onehot) const {
        check(logits, onehot);
        const std::size_t rows = logits.shape()[0];
        double total = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const T *in = logits.data().data() + r * classes_;
            const T row_max = *std::max_element(in, in + classes_);
            double sum = 0.0;
            for (std::size_t j = 0; j < classes_; ++j) {
                sum += std::exp(static_cast<double>(in[j] - row_max));
            }
            const double log_sum = std::log(sum);
            for (std::size_t j = 0; j < classes_; ++j) {
                if (onehot(r, j) != T{ 0 }) {
                    total -= static_cast<double>(in[j] - row_max) - log_sum;
                }
            }
        }
        const double loss = total / static_cast<double>(rows);
        if (!std::isfinite(loss)) {
            throw numeric_error{ "softmax_cross_entropy: non-finite loss" };
        }
        return { loss, softmax(logits) };
    }

    /// Gradient of the mean loss with respect to the logits: (p - y) / batch.
    [[nodiscard]] tensor<T> backward(const tensor<T> &probabilities, const tensor<T> &onehot) const {
        detail::require_same_shape(probabilities, onehot, "softmax_cross_entropy backward");
        const T inv_batch = static_cast<T>(1.0 / static_cast<double>(probabilities.shape()[0]));
        tensor<T> grad{ probabilities.shape() };
        for (std::size_t i = 0; i < grad.size(); ++i) {
            grad[i] = (probabilities[i] - onehot[i]) * inv_batch;
        }
        return grad;
    }

  private:
    void check(const tensor<T> &logits, const tensor<T> &onehot) const {
        detail::require_rank(logits.shape(), 2, "softmax_cross_entropy");
        if (logits.shape()[1] != classes_) {
            throw shape_error{ "softmax_cross_entropy: expected " + std::to_string(classes_) + " classes, got " + logits.shape().to_string() };
        }
        detail::require_same_shape(logits, onehot, "softmax_cross_entropy");
        for (std::size_t r = 0; r < onehot.shape()[0]; ++r) {
            std::size_t ones = 0;
            for (std::size_t j = 0; j < classes_; ++j) {
                const T v = onehot(r, j);
                if (v == T{ 1 }) {
                    ++ones;
                } else if (v != T{ 0 }) {
                    throw data_error{ "softmax_cross_entropy: row " + std::to_string(r) + " is not one-hot" };
                }
            }
            if (ones != 1) {
                throw data_error{ "softmax_cross_entropy: row " + std::to_string(r) + " is not one-hot" };
            }
        }
    }

    std::size_t classes_;
};

/// Adam optimiser state. Moments are created lazily on the first step and
/// mirror the parameter shapes from then on.
template <typename T>
struct adam_state {
    double lr{ 0.001 };
    double beta1{ 0.9 };
    double beta2{ 0.999 };
    double epsilon{ 1e-8 };
    long step{ 0 };
    std::vector<tensor<T>> m;
    std::vector<tensor<T>> v;
};

/// One bias-corrected Adam update over every parameter, using its current gradient.
template <typename T>
void adam_step(std::span<const parameter<T>> params, adam_state<T> &state) {
    if (state.m.empty()) {
        for (const parameter<T> &p : params) {
            state.m.emplace_back(p.value->shape());
            state.v.emplace_back(p.value->shape());
        }
    }
    if (state.m.size() != params.size()) {
        throw shape_error{ "adam_step: optimizer state does not match the parameter list" };
    }
    for (const parameter<T> &p : params) {
        if (!p.grad->all_finite()) {
            throw numeric_error{ "adam_step: non-finite gradient for parameter '" + p.name + "'" };
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double m_correction = 1.0 - std::pow(state.beta1, t);
    const double v_correction = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        tensor<T> &value = *params[i].value;
        const tensor<T> &grad = *params[i].grad;
        tensor<T> &m = state.m[i];
        tensor<T> &v = state.v[i];
        if (m.shape() != value.shape()) {
            throw shape_error{ "adam_step: moment shape mismatch for parameter '" + params[i].name + "'" };
        }
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double g = grad[j];
            const double m_j = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            const double v_j = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            m[j] = static_cast<T>(m_j);
            v[j] = static_cast<T>(v_j);
            const double m_hat = m_j / m_correction;
            const double v_hat = v_j / v_correction;
            value[j] = static_cast<T>(value[j] - state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon));
        }
    }
}

template <typename T>
void adam_step(const std::vector<parameter<T>> &params, adam_state<T> &state) {
    adam_step(std::span<const parameter<T>>{ params }, state);
}

/// Per-epoch multiplicative decay of the base learning rate: lr <- lr * exp(exponent).
struct exponential_decay {
    double exponent{ -0.01 };

    [[nodiscard]] double operator()(const double lr) const {
        if (!(lr > 0.0)) {
            throw error{ "exponential_decay: learning rate must be positive" };
        }
        return lr * std::exp(exponent);
    }
};

[[nodiscard]] inline double schedule_lr(const double lr, const double exponent = -0.01) {
    return exponential_decay{ exponent }(lr);
}

}  // namespace qalam
