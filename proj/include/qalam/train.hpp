#pragma once

#include "qalam/data.hpp"
#include "qalam/error.hpp"
#include "qalam/network.hpp"
#include "qalam/optim.hpp"
#include "qalam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace qalam {

/// Cross-validated training settings; defaults are the full training recipe.
struct train_config {
    std::size_t folds{ 5 };
    bool shuffle{ true };
    std::size_t batch_size{ 128 };
    std::size_t epochs{ 30 };
    std::uint64_t seed{ 42 };
    double learning_rate{ 0.001 };
    // Per-epoch lr multiplier is exp(lr_decay); 0 disables the schedule.
    double lr_decay{ -0.01 };
    // Folds trained concurrently; results do not depend on this.
    std::size_t threads{ 1 };

    void validate() const {
        if (folds < 2) {
            throw error{ "train_config: folds must be at least 2" };
        }
        if (batch_size < 1) {
            throw error{ "train_config: batch size must be at least 1" };
        }
        if (epochs < 1) {
            throw error{ "train_config: epochs must be at least 1" };
        }
        if (!(learning_rate > 0.0)) {
            throw error{ "train_config: learning rate must be positive" };
        }
    }

    friend bool operator==(const train_config &, const train_config &) = default;
};

struct epoch_stats {
    std::size_t fold{ 0 };
    std::size_t epoch{ 0 };  // 1-based
    double learning_rate{ 0.0 };
    double mean_loss{ 0.0 };
    std::vector<double> batch_losses;
    // NaN when the run has no validation split.
    double validation_accuracy{ std::numeric_limits<double>::quiet_NaN() };
};

using epoch_callback = std::function<void(const epoch_stats &)>;

struct run_result {
    network<float> net;
    std::vector<epoch_stats> history;
    double validation_accuracy{ std::numeric_limits<double>::quiet_NaN() };
};

/// Output of cross-validated training: the weights of the fold with the
/// highest final validation accuracy, plus every fold's accuracy.
struct trained_bundle {
    network<float> net;
    label_map labels;
    train_config training;
    std::vector<double> fold_accuracies;
    std::size_t best_fold{ 0 };
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30U)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27U)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31U);
}

inline void require_trainable(const dataset &ds, const network_config &ncfg) {
    if (ds.empty()) {
        throw data_error{ "training set is empty" };
    }
    if (ncfg.classes != ds.labels.size()) {
        throw data_error{ "network has " + std::to_string(ncfg.classes) + " outputs but the dataset has " + std::to_string(ds.labels.size()) + " classes" };
    }
    ds.validate();
    const auto counts = class_counts(ds);
    const auto present = std::count_if(counts.begin(), counts.end(), [](const std::size_t n) { return n > 0; });
    if (present < 2) {
        throw data_error{ "training set must contain at least two classes, found " + std::to_string(present) };
    }
}

}  // namespace detail

/// Seed used for the network and batch order of cross-validation run `fold`.
[[nodiscard]] inline std::uint64_t run_seed(const std::uint64_t seed, const std::size_t fold) {
    return detail::splitmix64(seed ^ detail::splitmix64(fold + 1));
}

template <typename T>
[[nodiscard]] std::vector<std::uint32_t> predict_labels(const network<T> &net, const dataset &ds, const std::size_t chunk = 256) {
    std::vector<std::uint32_t> out;
    out.reserve(ds.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) {
            idx.push_back(i);
        }
        const batch<T> b = make_batch<T>(ds, idx);
        const tensor<T> logits = net.infer(b.images);
        const std::size_t k = logits.shape()[1];
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const T *row = logits.data().data() + r * k;
            out.push_back(static_cast<std::uint32_t>(std::max_element(row, row + k) - row));
        }
    }
    return out;
}

template <typename T>
[[nodiscard]] double accuracy(const network<T> &net, const dataset &ds) {
    if (ds.empty()) {
        throw data_error{ "accuracy: empty dataset" };
    }
    const auto predicted = predict_labels(net, ds);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        correct += predicted[i] == ds.samples[i].label ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// One training run: fresh He-initialised network, `epochs` passes of
/// shuffled mini-batches with Adam and the per-epoch lr decay. When a
/// validation set is given, its inference-mode accuracy is recorded after
/// every epoch.
[[nodiscard]] inline run_result train_run(const dataset &train_set, const dataset *validation, const train_config &tcfg, const network_config &ncfg, const std::uint64_t seed, const std::size_t fold = 0, const epoch_callback &on_epoch = {}) {
    tcfg.validate();
    detail::require_trainable(train_set, ncfg);
    run_result result{ network<float>{ ncfg, seed }, {}, std::numeric_limits<double>::quiet_NaN() };
    network<float> &net = result.net;
    net.reseed_dropout(detail::splitmix64(seed ^ 0xD1B54A32D192ED03ULL));
    net.set_mode(mode::train);
    const softmax_cross_entropy<float> loss_fn{ ncfg.classes };
    adam_state<float> adam;
    adam.lr = tcfg.learning_rate;
    const exponential_decay decay{ tcfg.lr_decay };
    std::mt19937_64 order_rng{ detail::splitmix64(seed ^ 0x2545F4914F6CDD1DULL) };
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{ 0 });
    std::vector<parameter<float>> params = net.parameters();

    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        if (tcfg.shuffle) {
            std::shuffle(order.begin(), order.end(), order_rng);
        }
        epoch_stats stats;
        stats.fold = fold;
        stats.epoch = epoch;
        stats.learning_rate = adam.lr;
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
            const batch<float> b = make_batch<float>(train_set, std::span<const std::size_t>{ order.data() + start, end - start });
            net.zero_grad();
            const tensor<float> logits = net.forward(b.images);
            loss_result<float> lr = loss_fn.forward(logits, b.onehot);
            if (!std::isfinite(lr.loss)) {
                throw numeric_error{ "non-finite loss in fold " + std::to_string(fold + 1) + ", epoch " + std::to_string(epoch) + ", batch starting at " + std::to_string(start) };
            }
            static_cast<void>(net.backward(loss_fn.backward(lr.probabilities, b.onehot)));
            adam_step(params, adam);
            stats.batch_losses.push_back(lr.loss);
            loss_sum += lr.loss * static_cast<double>(end - start);
        }
        stats.mean_loss = loss_sum / static_cast<double>(order.size());
        if (validation != nullptr && !validation->empty()) {
            stats.validation_accuracy = accuracy(net, *validation);
            result.validation_accuracy = stats.validation_accuracy;
        }
        if (tcfg.lr_decay != 0.0) {
            adam.lr = decay(adam.lr);
        }
        if (on_epoch) {
            on_epoch(stats);
        }
        result.history.push_back(std::move(stats));
    }
    net.set_mode(mode::infer);
    return result;
}

/// Stratified k-fold training. Every fold trains a fresh network on the
/// remaining folds; the bundle keeps the fold with the highest final-epoch
/// validation accuracy (lowest fold index on ties).
[[nodiscard]] inline trained_bundle train(const dataset &ds, const train_config &tcfg, const network_config &ncfg, const epoch_callback &on_epoch = {}) {
    tcfg.validate();
    ncfg.validate();
    detail::require_trainable(ds, ncfg);
    const fold_plan plan = stratified_kfold(ds, tcfg.folds, tcfg.seed, tcfg.shuffle);

    std::vector<std::optional<run_result>> runs(tcfg.folds);
    std::mutex callback_mutex;
    const epoch_callback guarded = [&](const epoch_stats &s) {
        if (on_epoch) {
            const std::lock_guard lock{ callback_mutex };
            on_epoch(s);
        }
    };
    const auto run_fold = [&](const std::size_t fold) {
        const dataset train_split = subset(ds, plan.training_indices(fold));
        const dataset validation_split = subset(ds, plan.validation_indices(fold));
        runs[fold] = train_run(train_split, &validation_split, tcfg, ncfg, run_seed(tcfg.seed, fold), fold, guarded);
    };

    const std::size_t workers = std::clamp<std::size_t>(tcfg.threads, 1, tcfg.folds);
    if (workers == 1) {
        for (std::size_t fold = 0; fold < tcfg.folds; ++fold) {
            run_fold(fold);
        }
    } else {
        std::vector<std::exception_ptr> failures(tcfg.folds);
        for (std::size_t first = 0; first < tcfg.folds; first += workers) {
            std::vector<std::thread> pool;
            for (std::size_t fold = first; fold < std::min(tcfg.folds, first + workers); ++fold) {
                pool.emplace_back([&, fold] {
                    try {
                        run_fold(fold);
                    } catch (...) {
                        failures[fold] = std::current_exception();
                    }
                });
            }
            for (std::thread &t : pool) {
                t.join();
            }
        }
        for (const std::exception_ptr &f : failures) {
            if (f) {
                std::rethrow_exception(f);
            }
        }
    }

    std::vector<double> accuracies;
    std::size_t best = 0;
    for (std::size_t fold = 0; fold < tcfg.folds; ++fold) {
        accuracies.push_back(runs[fold]->validation_accuracy);
        if (runs[fold]->validation_accuracy > runs[best]->validation_accuracy) {
            best = fold;
        }
    }
    return trained_bundle{ std::move(runs[best]->net), ds.labels, tcfg, std::move(accuracies), best };
}

struct prediction {
    std::size_t label{ 0 };
    std::vector<double> probabilities;
};

/// Classifies one 32x32 image given as 1024 row-major pixel values (white on black).
template <typename T>
[[nodiscard]] prediction predict(const network<T> &net, const std::span<const std::uint8_t> pixels) {
    if (pixels.size() != image_pixels) {
        throw shape_error{ "predict: expected " + std::to_string(image_pixels) + " pixels, got " + std::to_string(pixels.size()) };
    }
    image img{};
    std::copy(pixels.begin(), pixels.end(), img.begin());
    const tensor<T> logits = net.infer(image_tensor<T>(img));
    // Probabilities are normalised in double so they sum to 1 independent of T.
    const tensor<double> probs = softmax(logits.template cast<double>());
    prediction out;
    out.probabilities.assign(probs.data().begin(), probs.data().end());
    out.label = static_cast<std::size_t>(std::max_element(out.probabilities.begin(), out.probabilities.end()) - out.probabilities.begin());
    return out;
}

template <typename T>
[[nodiscard]] prediction predict(const network<T> &net, const image &pixels) {
    return predict(net, std::span<const std::uint8_t>{ pixels });
}

}  // namespace qalam
