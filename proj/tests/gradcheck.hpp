#pragma once

// Central finite-difference checks for every layer, in double precision.
// Each check builds a random instance, contracts the layer output with a
// random tensor R (so the scalar objective is sum(out * R) and its output
// gradient is R), and compares the analytic backward pass against
// (f(x + h) - f(x - h)) / 2h for every input and parameter coordinate.

#include "qalam/layers.hpp"
#include "qalam/network.hpp"
#include "qalam/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradcheck {

using qalam::shape;
using qalam::tensor;

inline constexpr double step = 1e-5;

struct outcome {
    std::string layer;
    std::size_t instances{ 0 };
    double worst{ 0.0 };  // largest norm-relative error seen
};

inline tensor<double> uniform(shape s, std::mt19937_64 &rng, const double lo = -1.0, const double hi = 1.0) {
    std::uniform_real_distribution<double> dist{ lo, hi };
    tensor<double> t{ std::move(s) };
    for (double &v : t.data()) {
        v = dist(rng);
    }
    return t;
}

inline double dot(const tensor<double> &a, const tensor<double> &b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

// ||a - n|| / max(||a||, ||n||), or the absolute gap when both vanish.
inline double relative_error(const std::vector<double> &analytic, const std::vector<double> &numeric) {
    double diff = 0.0;
    double na = 0.0;
    double nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    const double scale = std::sqrt(std::max(na, nn));
    return scale < 1e-10 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

// Numeric gradient of f with respect to every element of `target`, which f reads.
inline std::vector<double> numeric_gradient(tensor<double> &target, const std::function<double()> &f) {
    std::vector<double> out(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double saved = target[i];
        target[i] = saved + step;
        const double up = f();
        target[i] = saved - step;
        const double down = f();
        target[i] = saved;
        out[i] = (up - down) / (2.0 * step);
    }
    return out;
}

inline std::vector<double> values(const tensor<double> &t) { return { t.data().begin(), t.data().end() }; }

inline double check_conv(std::mt19937_64 &rng) {
    std::uniform_int_distribution<std::size_t> batch{ 1, 2 };
    qalam::conv2d<double> conv{ 2, 3, 3, qalam::padding::same };
    conv.initialize(rng);
    conv.bias() = uniform({ 3 }, rng);
    tensor<double> x = uniform({ batch(rng), 5, 5, 2 }, rng);
    const tensor<double> r = uniform(conv.output_shape(x.shape()), rng);
    const auto f = [&] { return dot(conv.infer(x), r); };
    conv.zero_grad();
    static_cast<void>(conv.forward(x));
    const tensor<double> gx = conv.backward(r);
    double worst = relative_error(values(gx), numeric_gradient(x, f));
    worst = std::max(worst, relative_error(values(conv.grad_kernels()), numeric_gradient(conv.kernels(), f)));
    worst = std::max(worst, relative_error(values(conv.grad_bias()), numeric_gradient(conv.bias(), f)));
    return worst;
}

// Distinct, well separated values so no finite-difference step crosses a tie.
inline double check_pool(std::mt19937_64 &rng) {
    std::uniform_int_distribution<std::size_t> dim{ 2, 6 };
    const shape s{ dim(rng), dim(rng), dim(rng), 2 };
    std::vector<double> levels(s.elements());
    for (std::size_t i = 0; i < levels.size(); ++i) {
        levels[i] = 0.01 * static_cast<double>(i);
    }
    std::shuffle(levels.begin(), levels.end(), rng);
    tensor<double> x{ s, levels };
    qalam::max_pool2<double> pool;
    const tensor<double> r = uniform(qalam::max_pool2<double>::output_shape(s), rng);
    const auto f = [&] { return dot(pool.infer(x), r); };
    static_cast<void>(pool.forward(x));
    return relative_error(values(pool.backward(r)), numeric_gradient(x, f));
}

inline double check_batch_norm(std::mt19937_64 &rng) {
    std::uniform_int_distribution<std::size_t> dim{ 2, 4 };
    const std::size_t channels = dim(rng);
    qalam::batch_norm<double> bn{ channels };
    bn.gamma() = uniform({ channels }, rng, 0.5, 1.5);
    bn.beta() = uniform({ channels }, rng);
    tensor<double> x = uniform({ dim(rng), dim(rng), 3, channels }, rng);
    const tensor<double> r = uniform(x.shape(), rng);
    // Training-mode output depends only on batch statistics; the running
    // averages it also updates do not feed back into it.
    const auto f = [&] {
        qalam::batch_norm<double> probe = bn;
        return dot(probe.forward(x), r);
    };
    bn.zero_grad();
    static_cast<void>(bn.forward(x));
    const tensor<double> gx = bn.backward(r);
    std::vector<double> g_gamma;
    std::vector<double> g_beta;
    for (const auto &p : bn.parameters()) {
        (p.name == "gamma" ? g_gamma : g_beta) = values(*p.grad);
    }
    double worst = relative_error(values(gx), numeric_gradient(x, f));
    worst = std::max(worst, relative_error(g_gamma, numeric_gradient(bn.gamma(), f)));
    worst = std::max(worst, relative_error(g_beta, numeric_gradient(bn.beta(), f)));
    return worst;
}

inline double check_dense(std::mt19937_64 &rng) {
    std::uniform_int_distribution<std::size_t> dim{ 1, 7 };
    qalam::dense<double> fc{ dim(rng), dim(rng) };
    fc.initialize(rng);
    fc.bias() = uniform({ fc.out_features() }, rng);
    tensor<double> x = uniform({ dim(rng), fc.in_features() }, rng);
    const tensor<double> r = uniform({ x.shape()[0], fc.out_features() }, rng);
    const auto f = [&] { return dot(fc.infer(x), r); };
    fc.zero_grad();
    static_cast<void>(fc.forward(x));
    const tensor<double> gx = fc.backward(r);
    double worst = relative_error(values(gx), numeric_gradient(x, f));
    worst = std::max(worst, relative_error(values(fc.grad_weights()), numeric_gradient(fc.weights(), f)));
    worst = std::max(worst, relative_error(values(fc.grad_bias()), numeric_gradient(fc.bias(), f)));
    return worst;
}

// Inputs are kept away from the kink at zero.
inline double check_leaky_relu(std::mt19937_64 &rng) {
    std::uniform_int_distribution<std::size_t> dim{ 1, 30 };
    tensor<double> x = uniform({ dim(rng), dim(rng) }, rng);
    for (double &v : x.data()) {
        if (std::abs(v) < 1e-3) {
            v = 1e-2;
        }
    }
    qalam::leaky_relu<double> act{ 0.3 };
    const tensor<double> r = uniform(x.shape(), rng);
    const auto f = [&] { return dot(act.infer(x), r); };
    static_cast<void>(act.forward(x));
    return relative_error(values(act.backward(r)), numeric_gradient(x, f));
}

// With the mask held fixed dropout is linear, so backward must match the
// derivative of the replayed mask exactly.
inline double check_dropout(std::mt19937_64 &rng) {
    std::uniform_int_distribution<std::size_t> dim{ 1, 30 };
    tensor<double> x = uniform({ dim(rng), dim(rng) }, rng);
    qalam::dropout<double> drop{ 0.3, rng() };
    static_cast<void>(drop.forward(x));
    const tensor<double> r = uniform(x.shape(), rng);
    const auto f = [&] { return dot(drop.replay(x), r); };
    return relative_error(values(drop.backward(r)), numeric_gradient(x, f));
}

inline double check_softmax_ce(std::mt19937_64 &rng) {
    std::uniform_int_distribution<std::size_t> dim{ 2, 12 };
    const std::size_t k = dim(rng);
    const std::size_t b = dim(rng);
    tensor<double> logits = uniform({ b, k }, rng, -4.0, 4.0);
    tensor<double> onehot{ shape{ b, k } };
    std::uniform_int_distribution<std::size_t> label{ 0, k - 1 };
    for (std::size_t i = 0; i < b; ++i) {
        onehot(i, label(rng)) = 1.0;
    }
    const qalam::softmax_cross_entropy<double> ce{ k };
    const auto f = [&] { return ce.forward(logits, onehot).loss; };
    const auto fwd = ce.forward(logits, onehot);
    return relative_error(values(ce.backward(fwd.probabilities, onehot)), numeric_gradient(logits, f));
}

inline outcome run(const std::string &layer, const std::size_t instances, const std::uint64_t seed) {
    static const std::vector<std::pair<std::string, double (*)(std::mt19937_64 &)>> checks{
        { "conv2d", &check_conv },          { "max_pool2", &check_pool }, { "batch_norm", &check_batch_norm }, { "dense", &check_dense },
        { "leaky_relu", &check_leaky_relu }, { "dropout", &check_dropout }, { "softmax_cross_entropy", &check_softmax_ce },
    };
    const auto it = std::find_if(checks.begin(), checks.end(), [&](const auto &c) { return c.first == layer; });
    if (it == checks.end()) {
        throw std::invalid_argument{ "no gradient check for '" + layer + "'" };
    }
    std::mt19937_64 rng{ seed };
    outcome out{ layer, instances, 0.0 };
    for (std::size_t i = 0; i < instances; ++i) {
        out.worst = std::max(out.worst, it->second(rng));
    }
    return out;
}

inline const std::vector<std::string> &layer_names() {
    static const std::vector<std::string> names{ "conv2d", "max_pool2", "batch_norm", "dense", "leaky_relu", "dropout", "softmax_cross_entropy" };
    return names;
}

// Whole-network check on a tiny variant: 8x8 input, one conv block of four
// filters, FC 8 -> K, dropout disabled so the objective is deterministic.
inline double check_tiny_network(const std::uint64_t seed, const std::size_t classes = 3) {
    qalam::network_config cfg;
    cfg.input_height = 8;
    cfg.input_width = 8;
    cfg.blocks = { { 1, 4, true } };
    cfg.flatten_side = 4;
    cfg.hidden = { 8 };
    cfg.classes = classes;
    cfg.dropout = 0.0;
    qalam::network<double> net{ cfg, seed };
    net.set_mode(qalam::mode::train);
    std::mt19937_64 rng{ seed ^ 0x5eedULL };
    tensor<double> x = uniform({ 3, 8, 8, 1 }, rng, 0.0, 1.0);
    tensor<double> onehot{ shape{ 3, classes } };
    for (std::size_t i = 0; i < 3; ++i) {
        onehot(i, i % classes) = 1.0;
    }
    const qalam::softmax_cross_entropy<double> ce{ classes };
    const auto f = [&] {
        qalam::network<double> probe = net;
        return ce.forward(probe.forward(x), onehot).loss;
    };
    net.zero_grad();
    const auto fwd = ce.forward(net.forward(x), onehot);
    const tensor<double> gx = net.backward(ce.backward(fwd.probabilities, onehot));
    std::vector<double> analytic = values(gx);
    std::vector<double> numeric = numeric_gradient(x, f);
    for (const auto &p : net.parameters()) {
        const auto a = values(*p.grad);
        const auto n = numeric_gradient(*p.value, f);
        analytic.insert(analytic.end(), a.begin(), a.end());
        numeric.insert(numeric.end(), n.begin(), n.end());
    }
    return relative_error(analytic, numeric);
}

}  // namespace gradcheck
