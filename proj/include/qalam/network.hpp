#pragma once

#include "qalam/error.hpp"
#include "qalam/layers.hpp"
#include "qalam/optim.hpp"
#include "qalam/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace qalam {

/// A run of same-width convolutions, each followed by LeakyReLU, then an
/// optional 2x2 max pool and a batch norm.
struct conv_block {
    std::size_t convs;
    std::size_t filters;
    bool pool;

    friend bool operator==(const conv_block &, const conv_block &) = default;
};

/// Architecture description. The defaults are the full recognition model:
/// four blocks of 64/128/256/384 filters, pooling in the first three so the
/// feature map reaching the classifier is 4x4x384, then FC 256/128/64.
struct network_config {
    std::size_t input_height{ 32 };
    std::size_t input_width{ 32 };
    std::size_t input_channels{ 1 };
    std::size_t kernel_size{ 3 };
    std::vector<conv_block> blocks{ { 2, 64, true }, { 2, 128, true }, { 3, 256, true }, { 3, 384, false } };
    std::vector<std::size_t> hidden{ 256, 128, 64 };
    std::size_t classes{ 29 };
    double dropout{ 0.3 };
    double leaky_slope{ 0.3 };
    double bn_momentum{ 0.99 };
    double bn_epsilon{ 1e-3 };
    // Required spatial side of the feature map at the flatten step.
    std::size_t flatten_side{ 4 };

    [[nodiscard]] static network_config full(const std::size_t classes = 29) {
        network_config cfg;
        cfg.classes = classes;
        return cfg;
    }

    /// Desk-scale variant: same topology with 8/16/24/32 filters.
    [[nodiscard]] static network_config quick(const std::size_t classes = 29) {
        network_config cfg;
        cfg.classes = classes;
        cfg.blocks = { { 2, 8, true }, { 2, 16, true }, { 3, 24, true }, { 3, 32, false } };
        return cfg;
    }

    /// [height, width, channels] of the activation entering the flatten step.
    [[nodiscard]] shape feature_shape() const {
        std::size_t h = input_height;
        std::size_t w = input_width;
        std::size_t c = input_channels;
        for (const conv_block &b : blocks) {
            c = b.filters;
            if (b.pool) {
                h /= 2;
                w /= 2;
            }
        }
        return shape{ h, w, c };
    }

    [[nodiscard]] std::size_t flatten_length() const { return feature_shape().elements(); }

    void validate() const {
        if (input_height == 0 || input_width == 0 || input_channels == 0) {
            throw error{ "network_config: input dimensions must be positive" };
        }
        if (classes < 2) {
            throw error{ "network_config: need at least two classes, got " + std::to_string(classes) };
        }
        if (blocks.empty()) {
            throw error{ "network_config: at least one convolutional block is required" };
        }
        std::size_t h = input_height;
        std::size_t w = input_width;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (blocks[i].convs == 0 || blocks[i].filters == 0) {
                throw error{ "network_config: block " + std::to_string(i + 1) + " is empty" };
            }
            if (h < kernel_size || w < kernel_size) {
                throw error{ "network_config: block " + std::to_string(i + 1) + " input is smaller than the kernel" };
            }
            if (blocks[i].pool) {
                if (h < 2 || w < 2) {
                    throw error{ "network_config: block " + std::to_string(i + 1) + " cannot pool a " + std::to_string(h) + "x" + std::to_string(w) + " map" };
                }
                h /= 2;
                w /= 2;
            }
        }
        if (h != flatten_side || w != flatten_side) {
            throw error{ "network_config: pooling plan yields a " + std::to_string(h) + "x" + std::to_string(w) + " feature map, expected " + std::to_string(flatten_side) + "x" + std::to_string(flatten_side) };
        }
        for (const std::size_t units : hidden) {
            if (units == 0) {
                throw error{ "network_config: hidden layer width must be positive" };
            }
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) {
            throw error{ "network_config: dropout must lie in [0, 1)" };
        }
    }

    /// Line-oriented key=value form stored in model files.
    [[nodiscard]] std::string to_text() const {
        std::ostringstream out;
        out.precision(17);
        out << "input=" << input_height << 'x' << input_width << 'x' << input_channels << '\n';
        out << "kernel=" << kernel_size << '\n';
        out << "blocks=";
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            out << (i == 0 ? "" : ",") << blocks[i].convs << ':' << blocks[i].filters << ':' << (blocks[i].pool ? "pool" : "nopool");
        }
        out << '\n';
        out << "hidden=";
        for (std::size_t i = 0; i < hidden.size(); ++i) {
            out << (i == 0 ? "" : ",") << hidden[i];
        }
        out << '\n';
        out << "classes=" << classes << '\n';
        out << "dropout=" << dropout << '\n';
        out << "leaky_slope=" << leaky_slope << '\n';
        out << "bn_momentum=" << bn_momentum << '\n';
        out << "bn_epsilon=" << bn_epsilon << '\n';
        out << "flatten_side=" << flatten_side << '\n';
        return out.str();
    }

    [[nodiscard]] static network_config from_fields(const std::map<std::string, std::string> &fields);

    friend bool operator==(const network_config &, const network_config &) = default;
};

namespace detail {

inline std::vector<std::string> split(const std::string &text, const char delim) {
    std::vector<std::string> parts;
    std::string part;
    std::istringstream in{ text };
    while (std::getline(in, part, delim)) {
        parts.push_back(part);
    }
    if (!text.empty() && text.back() == delim) {
        parts.emplace_back();
    }
    return parts;
}

inline std::size_t parse_size(const std::string &text, const std::string &field) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size()) {
            throw std::invalid_argument{ text };
        }
        return static_cast<std::size_t>(v);
    } catch (const std::exception &) {
        throw format_error{ "invalid integer '" + text + "' for field '" + field + "'" };
    }
}

inline double parse_real(const std::string &text, const std::string &field) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) {
            throw std::invalid_argument{ text };
        }
        return v;
    } catch (const std::exception &) {
        throw format_error{ "invalid number '" + text + "' for field '" + field + "'" };
    }
}

inline const std::string &require_field(const std::map<std::string, std::string> &fields, const std::string &key) {
    const auto it = fields.find(key);
    if (it == fields.end()) {
        throw format_error{ "missing field '" + key + "'" };
    }
    return it->second;
}

inline std::map<std::string, std::string> parse_fields(const std::string &text) {
    std::map<std::string, std::string> fields;
    std::istringstream in{ text };
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw format_error{ "malformed config line '" + line + "'" };
        }
        fields[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return fields;
}

}  // namespace detail

inline network_config network_config::from_fields(const std::map<std::string, std::string> &fields) {
    network_config cfg;
    const auto input = detail::split(detail::require_field(fields, "input"), 'x');
    if (input.size() != 3) {
        throw format_error{ "field 'input' must be HxWxC" };
    }
    cfg.input_height = detail::parse_size(input[0], "input");
    cfg.input_width = detail::parse_size(input[1], "input");
    cfg.input_channels = detail::parse_size(input[2], "input");
    cfg.kernel_size = detail::parse_size(detail::require_field(fields, "kernel"), "kernel");
    cfg.blocks.clear();
    for (const std::string &b : detail::split(detail::require_field(fields, "blocks"), ',')) {
        const auto parts = detail::split(b, ':');
        if (parts.size() != 3 || (parts[2] != "pool" && parts[2] != "nopool")) {
            throw format_error{ "malformed block '" + b + "'" };
        }
        cfg.blocks.push_back({ detail::parse_size(parts[0], "blocks"), detail::parse_size(parts[1], "blocks"), parts[2] == "pool" });
    }
    cfg.hidden.clear();
    const std::string &hidden = detail::require_field(fields, "hidden");
    if (!hidden.empty()) {
        for (const std::string &h : detail::split(hidden, ',')) {
            cfg.hidden.push_back(detail::parse_size(h, "hidden"));
        }
    }
    cfg.classes = detail::parse_size(detail::require_field(fields, "classes"), "classes");
    cfg.dropout = detail::parse_real(detail::require_field(fields, "dropout"), "dropout");
    cfg.leaky_slope = detail::parse_real(detail::require_field(fields, "leaky_slope"), "leaky_slope");
    cfg.bn_momentum = detail::parse_real(detail::require_field(fields, "bn_momentum"), "bn_momentum");
    cfg.bn_epsilon = detail::parse_real(detail::require_field(fields, "bn_epsilon"), "bn_epsilon");
    cfg.flatten_side = detail::parse_size(detail::require_field(fields, "flatten_side"), "flatten_side");
    try {
        cfg.validate();
    } catch (const format_error &) {
        throw;
    } catch (const error &e) {
        throw format_error{ e.what() };
    }
    return cfg;
}

enum class mode { train,
                  infer };

/// The instantiated layer stack. Training-mode forward caches activations for
/// backward; infer() is const and safe to call concurrently.
template <typename T>
class network {
  public:
    using layer = std::variant<conv2d<T>, leaky_relu<T>, max_pool2<T>, batch_norm<T>, flatten_layer<T>, dense<T>, dropout<T>>;

    /// Builds the layer stack from a validated config and He-initialises the
    /// convolution and dense weights from the seed.
    network(network_config config, const std::uint64_t seed) :
        config_{ std::move(config) } {
        config_.validate();
        std::mt19937_64 rng{ seed };
        std::size_t channels = config_.input_channels;
        for (const conv_block &block : config_.blocks) {
            for (std::size_t i = 0; i < block.convs; ++i) {
                conv2d<T> conv{ channels, block.filters, config_.kernel_size, padding::same };
                conv.initialize(rng);
                layers_.emplace_back(std::move(conv));
                layers_.emplace_back(leaky_relu<T>{ config_.leaky_slope });
                channels = block.filters;
            }
            if (block.pool) {
                layers_.emplace_back(max_pool2<T>{});
            }
            layers_.emplace_back(batch_norm<T>{ channels, config_.bn_momentum, config_.bn_epsilon });
        }
        flatten_index_ = layers_.size();
        layers_.emplace_back(flatten_layer<T>{});
        std::size_t features = config_.flatten_length();
        std::uint64_t dropout_seed = seed;
        for (const std::size_t units : config_.hidden) {
            dense<T> fc{ features, units };
            fc.initialize(rng);
            layers_.emplace_back(std::move(fc));
            layers_.emplace_back(leaky_relu<T>{ config_.leaky_slope });
            if (config_.dropout > 0.0) {
                dropout_seed = dropout_seed * 6364136223846793005ULL + 1442695040888963407ULL;
                layers_.emplace_back(dropout<T>{ config_.dropout, dropout_seed });
            }
            features = units;
        }
        dense<T> classifier{ features, config_.classes };
        classifier.initialize(rng);
        layers_.emplace_back(std::move(classifier));
    }

    [[nodiscard]] const network_config &config() const noexcept { return config_; }

    [[nodiscard]] std::size_t classes() const noexcept { return config_.classes; }

    [[nodiscard]] enum mode mode() const noexcept { return mode_; }

    /// Switching modes drops any cached activations.
    void set_mode(const enum mode m) {
        mode_ = m;
        for (layer &l : layers_) {
            std::visit([](auto &impl) { impl.clear_cache(); }, l);
        }
    }

    [[nodiscard]] std::size_t layer_count() const noexcept { return layers_.size(); }

    [[nodiscard]] const std::vector<layer> &layers() const noexcept { return layers_; }

    [[nodiscard]] std::vector<layer> &layers() noexcept { return layers_; }

    /// Batch logits for [batch, H, W, C] input in the current mode.
    [[nodiscard]] tensor<T> forward(const tensor<T> &x) {
        if (mode_ == mode::infer) {
            return infer(x);
        }
        check_input(x);
        tensor<T> a = x;
        for (layer &l : layers_) {
            a = std::visit([&a](auto &impl) { return impl.forward(a); }, l);
        }
        return a;
    }

    [[nodiscard]] tensor<T> infer(const tensor<T> &x) const { return infer_range(x, layers_.size()); }

    /// Inference-mode activation entering the flatten step, [batch, h, w, c].
    [[nodiscard]] tensor<T> infer_features(const tensor<T> &x) const { return infer_range(x, flatten_index_); }

    /// Back-propagates the logit gradient, accumulating parameter gradients.
    [[nodiscard]] tensor<T> backward(const tensor<T> &grad_logits) {
        if (mode_ != mode::train) {
            throw state_error{ "network: backward requires train mode" };
        }
        tensor<T> g = grad_logits;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
            g = std::visit([&g](auto &impl) { return impl.backward(g); }, *it);
        }
        return g;
    }

    void zero_grad() {
        for (layer &l : layers_) {
            std::visit(
                [](auto &impl) {
                    if constexpr (requires { impl.zero_grad(); }) {
                        impl.zero_grad();
                    }
                },
                l);
        }
    }

    /// Trainable parameters in declaration order.
    [[nodiscard]] std::vector<parameter<T>> parameters() {
        std::vector<parameter<T>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            std::visit(
                [&out, i](auto &impl) {
                    if constexpr (requires { impl.parameters(); }) {
                        for (parameter<T> p : impl.parameters()) {
                            p.name = "layer" + std::to_string(i) + "." + p.name;
                            out.push_back(p);
                        }
                    }
                },
                layers_[i]);
        }
        return out;
    }

    /// Every tensor that defines the trained model (parameters interleaved with
    /// batch-norm running statistics), in declaration order.
    [[nodiscard]] std::vector<tensor<T> *> state_tensors() {
        std::vector<tensor<T> *> out;
        for (layer &l : layers_) {
            std::visit(
                [&out](auto &impl) {
                    if constexpr (requires { impl.parameters(); }) {
                        for (const parameter<T> &p : impl.parameters()) {
                            out.push_back(p.value);
                        }
                    }
                    if constexpr (requires { impl.buffers(); }) {
                        for (tensor<T> *b : impl.buffers()) {
                            out.push_back(b);
                        }
                    }
                },
                l);
        }
        return out;
    }

    [[nodiscard]] std::vector<const tensor<T> *> state_tensors() const {
        const std::vector<tensor<T> *> mutable_view = const_cast<network *>(this)->state_tensors();
        return { mutable_view.begin(), mutable_view.end() };
    }

    [[nodiscard]] std::size_t parameter_count() {
        std::size_t n = 0;
        for (const parameter<T> &p : parameters()) {
            n += p.value->size();
        }
        return n;
    }

    /// Reseeds every dropout layer; used to give each training run its own masks.
    void reseed_dropout(std::uint64_t seed) {
        for (layer &l : layers_) {
            if (auto *d = std::get_if<dropout<T>>(&l)) {
                seed = seed * 6364136223846793005ULL + 1442695040888963407ULL;
                d->reseed(seed);
            }
        }
    }

  private:
    void check_input(const tensor<T> &x) const {
        const shape expected{ x.shape().rank() == 4 ? x.shape()[0] : 1, config_.input_height, config_.input_width, config_.input_channels };
        if (x.shape() != expected) {
            throw shape_error{ "network: expected input [batch," + std::to_string(config_.input_height) + "," + std::to_string(config_.input_width) + "," + std::to_string(config_.input_channels) + "], got " + x.shape().to_string() };
        }
    }

    [[nodiscard]] tensor<T> infer_range(const tensor<T> &x, const std::size_t end) const {
        check_input(x);
        tensor<T> a = x;
        for (std::size_t i = 0; i < end; ++i) {
            a = std::visit([&a](const auto &impl) { return impl.infer(a); }, layers_[i]);
        }
        return a;
    }

    network_config config_;
    std::vector<layer> layers_;
    std::size_t flatten_index_{ 0 };
    enum mode mode_ { mode::train };
};

}  // namespace qalam
