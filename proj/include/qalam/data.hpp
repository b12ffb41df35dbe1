#pragma once

#include "qalam/error.hpp"
#include "qalam/tensor.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qalam {

inline constexpr std::size_t image_side = 32;
inline constexpr std::size_t image_pixels = image_side * image_side;

using image = std::array<std::uint8_t, image_pixels>;

/// One 32x32 grayscale image (row-major) and its class index.
struct sample {
    image pixels{};
    std::uint32_t label{ 0 };

    friend bool operator==(const sample &, const sample &) = default;
};

/// Ordered, unique class names; the position of a name is its class index.
class label_map {
  public:
    label_map() = default;

    explicit label_map(std::vector<std::string> names) :
        names_{ std::move(names) } {
        std::set<std::string> seen;
        for (const std::string &n : names_) {
            if (n.empty() || n.find('|') != std::string::npos || n.find('\n') != std::string::npos) {
                throw data_error{ "invalid class name '" + n + "'" };
            }
            if (!seen.insert(n).second) {
                throw data_error{ "duplicate class name '" + n + "'" };
            }
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return names_.size(); }

    [[nodiscard]] const std::string &name(const std::size_t index) const { return names_.at(index); }

    [[nodiscard]] const std::vector<std::string> &names() const noexcept { return names_; }

    /// Exact name match, falling back to a unique match on the part before the
    /// first space (so "Sheen" finds "Sheen ش").
    [[nodiscard]] std::optional<std::size_t> find(const std::string_view name) const {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == name) {
                return i;
            }
        }
        std::optional<std::size_t> match;
        for (std::size_t i = 0; i < names_.size(); ++i) {
            const std::string_view head = std::string_view{ names_[i] }.substr(0, names_[i].find(' '));
            if (head == name) {
                if (match) {
                    return std::nullopt;
                }
                match = i;
            }
        }
        return match;
    }

    [[nodiscard]] std::size_t index_of(const std::string_view name) const {
        const auto i = find(name);
        if (!i) {
            throw data_error{ "unknown class '" + std::string{ name } + "'" };
        }
        return *i;
    }

    friend bool operator==(const label_map &, const label_map &) = default;

  private:
    std::vector<std::string> names_;
};

/// The 29 classes in canonical index order: the 28 letters followed by Hamza.
[[nodiscard]] inline const label_map &hijja_labels() {
    static const label_map labels{ { "Alif ا", "Baa' ب", "Taa' ت", "Thaa' ث", "Jiim ج", "Haa' ح", "Khaa' خ", "Daal د",
                                     "Dhaal ذ", "Raa' ر", "Zaay ز", "Seen س", "Sheen ش", "Saad ص", "Daad ض", "Taa' ط",
                                     "Zaa' ظ", "Aayn ع", "Ghayn غ", "Faa' ف", "Qaaf ق", "Kaff ك", "Lamm ل", "Miim م",
                                     "Nuun ن", "Haa' ه", "Waaw و", "Yaa' ي", "Hamza ء" } };
    return labels;
}

/// The 28-letter map of the adult dataset (no Hamza), same order.
[[nodiscard]] inline const label_map &ahcd_labels() {
    static const label_map labels{ [] {
        std::vector<std::string> names = hijja_labels().names();
        names.pop_back();
        return names;
    }() };
    return labels;
}

enum class provenance { hijja,
                        ahcd,
                        merged,
                        synthetic,
                        custom };

[[nodiscard]] inline std::string_view to_string(const provenance p) {
    switch (p) {
        case provenance::hijja:
            return "hijja";
        case provenance::ahcd:
            return "ahcd";
        case provenance::merged:
            return "merged";
        case provenance::synthetic:
            return "synthetic";
        case provenance::custom:
            break;
    }
    return "custom";
}

struct dataset {
    std::vector<sample> samples;
    label_map labels;
    provenance origin{ provenance::custom };

    [[nodiscard]] std::size_t size() const noexcept { return samples.size(); }

    [[nodiscard]] bool empty() const noexcept { return samples.empty(); }

    void validate() const {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].label >= labels.size()) {
                throw data_error{ "sample " + std::to_string(i) + " has label " + std::to_string(samples[i].label) + " outside the " + std::to_string(labels.size()) + "-class map" };
            }
        }
    }
};

[[nodiscard]] inline std::vector<std::size_t> class_counts(const dataset &ds) {
    std::vector<std::size_t> counts(ds.labels.size(), 0);
    for (const sample &s : ds.samples) {
        ++counts.at(s.label);
    }
    return counts;
}

[[nodiscard]] inline image transpose_image(const image &img) {
    image out{};
    for (std::size_t r = 0; r < image_side; ++r) {
        for (std::size_t c = 0; c < image_side; ++c) {
            out[c * image_side + r] = img[r * image_side + c];
        }
    }
    return out;
}

struct csv_options {
    bool transpose{ false };
    bool has_header{ false };
};

/// Reads the canonical CSV layout: each row is a class index followed by 1024
/// row-major pixel values in 0..255.
[[nodiscard]] inline dataset load_csv(std::istream &in, const csv_options &options, label_map labels, const provenance origin = provenance::custom) {
    dataset ds;
    ds.labels = std::move(labels);
    ds.origin = origin;
    std::string line;
    std::size_t row = 0;
    std::vector<std::string_view> fields;
    fields.reserve(image_pixels + 1);
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (row == 1 && options.has_header) {
            continue;
        }
        if (line.empty()) {
            continue;
        }
        fields.clear();
        std::string_view rest{ line };
        while (true) {
            const std::size_t comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != image_pixels + 1) {
            throw data_error{ "row " + std::to_string(row) + ": expected " + std::to_string(image_pixels + 1) + " fields, got " + std::to_string(fields.size()) };
        }
        const auto parse = [row](std::string_view f, const char *what) {
            while (!f.empty() && f.front() == ' ') {
                f.remove_prefix(1);
            }
            while (!f.empty() && f.back() == ' ') {
                f.remove_suffix(1);
            }
            long value = 0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
            if (ec != std::errc{} || ptr != f.data() + f.size() || f.empty()) {
                throw data_error{ "row " + std::to_string(row) + ": invalid " + what + " '" + std::string{ f } + "'" };
            }
            return value;
        };
        sample s;
        const long label = parse(fields[0], "label");
        if (label < 0 || static_cast<std::size_t>(label) >= ds.labels.size()) {
            throw data_error{ "row " + std::to_string(row) + ": unknown label index " + std::to_string(label) };
        }
        s.label = static_cast<std::uint32_t>(label);
        for (std::size_t i = 0; i < image_pixels; ++i) {
            const long v = parse(fields[i + 1], "pixel");
            if (v < 0 || v > 255) {
                throw data_error{ "row " + std::to_string(row) + ": pixel value " + std::to_string(v) + " outside 0..255" };
            }
            s.pixels[i] = static_cast<std::uint8_t>(v);
        }
        if (options.transpose) {
            s.pixels = transpose_image(s.pixels);
        }
        ds.samples.push_back(s);
    }
    return ds;
}

[[nodiscard]] inline dataset load_csv(const std::string &path, const csv_options &options, label_map labels, const provenance origin = provenance::custom) {
    std::ifstream in{ path };
    if (!in) {
        throw data_error{ "cannot open '" + path + "'" };
    }
    return load_csv(in, options, std::move(labels), origin);
}

inline void write_csv(std::ostream &out, const dataset &ds, const bool header = false) {
    if (header) {
        out << "label";
        for (std::size_t i = 0; i < image_pixels; ++i) {
            out << ",p" << i;
        }
        out << '\n';
    }
    for (const sample &s : ds.samples) {
        out << s.label;
        for (const std::uint8_t p : s.pixels) {
            out << ',' << static_cast<int>(p);
        }
        out << '\n';
    }
}

inline void write_csv(const std::string &path, const dataset &ds, const bool header = false) {
    std::ofstream out{ path };
    if (!out) {
        throw data_error{ "cannot write '" + path + "'" };
    }
    write_csv(out, ds, header);
    if (!out) {
        throw data_error{ "write to '" + path + "' failed" };
    }
}

/// p -> 255 - p for every pixel: white strokes on a black background.
[[nodiscard]] inline dataset invert(dataset ds) {
    for (sample &s : ds.samples) {
        for (std::uint8_t &p : s.pixels) {
            p = static_cast<std::uint8_t>(255 - p);
        }
    }
    return ds;
}

/// Concatenates two datasets, re-indexing both into the target map by class name.
[[nodiscard]] inline dataset merge(const dataset &a, const dataset &b, const label_map &target = hijja_labels()) {
    dataset out;
    out.labels = target;
    out.origin = provenance::merged;
    out.samples.reserve(a.size() + b.size());
    for (const dataset *part : { &a, &b }) {
        std::vector<std::uint32_t> remap(part->labels.size());
        for (std::size_t i = 0; i < part->labels.size(); ++i) {
            const auto j = target.find(part->labels.name(i));
            if (!j) {
                throw data_error{ "merge: class '" + part->labels.name(i) + "' has no counterpart in the target label map" };
            }
            remap[i] = static_cast<std::uint32_t>(*j);
        }
        for (sample s : part->samples) {
            s.label = remap.at(s.label);
            out.samples.push_back(s);
        }
    }
    return out;
}

/// Keeps samples of the named classes, re-indexed to a compact map in the given order.
[[nodiscard]] inline dataset filter_by_classes(const dataset &ds, const std::vector<std::string> &classes) {
    if (classes.empty()) {
        throw data_error{ "filter_by_classes: empty class set" };
    }
    std::vector<std::optional<std::uint32_t>> remap(ds.labels.size());
    std::vector<std::string> names;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const std::size_t src = ds.labels.index_of(classes[i]);
        if (remap[src]) {
            throw data_error{ "filter_by_classes: class '" + classes[i] + "' listed twice" };
        }
        remap[src] = static_cast<std::uint32_t>(i);
        names.push_back(ds.labels.name(src));
    }
    dataset out;
    out.labels = label_map{ std::move(names) };
    out.origin = ds.origin;
    for (const sample &s : ds.samples) {
        if (const auto &dst = remap.at(s.label)) {
            out.samples.push_back({ s.pixels, *dst });
        }
    }
    return out;
}

[[nodiscard]] inline dataset subset(const dataset &ds, const std::span<const std::size_t> indices) {
    dataset out;
    out.labels = ds.labels;
    out.origin = ds.origin;
    out.samples.reserve(indices.size());
    for (const std::size_t i : indices) {
        out.samples.push_back(ds.samples.at(i));
    }
    return out;
}

/// Assignment of every sample to one of k folds; fold i is the validation
/// split of run i.
struct fold_plan {
    std::size_t folds{ 0 };
    std::uint64_t seed{ 0 };
    std::vector<std::uint32_t> assignment;

    [[nodiscard]] std::vector<std::size_t> validation_indices(const std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] == fold) {
                out.push_back(i);
            }
        }
        return out;
    }

    [[nodiscard]] std::vector<std::size_t> training_indices(const std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] != fold) {
                out.push_back(i);
            }
        }
        return out;
    }

    friend bool operator==(const fold_plan &, const fold_plan &) = default;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> indices_by_class(const dataset &ds) {
    std::vector<std::vector<std::size_t>> by_class(ds.labels.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        by_class.at(ds.samples[i].label).push_back(i);
    }
    return by_class;
}

}  // namespace detail

/// Stratified k-fold assignment. Each class is shuffled and dealt round-robin
/// into the folds, continuing from where the previous class stopped so fold
/// sizes stay balanced overall. Per class, fold counts differ by at most one.
[[nodiscard]] inline fold_plan stratified_kfold(const dataset &ds, const std::size_t k, const std::uint64_t seed, const bool shuffle = true) {
    if (k < 2) {
        throw data_error{ "stratified_kfold: need at least two folds" };
    }
    auto by_class = detail::indices_by_class(ds);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (!by_class[c].empty() && by_class[c].size() < k) {
            throw data_error{ "stratified_kfold: class '" + ds.labels.name(c) + "' has " + std::to_string(by_class[c].size()) + " samples, fewer than " + std::to_string(k) + " folds" };
        }
    }
    fold_plan plan{ k, seed, std::vector<std::uint32_t>(ds.size(), 0) };
    std::mt19937_64 rng{ seed };
    std::size_t next = 0;
    for (auto &members : by_class) {
        if (shuffle) {
            std::shuffle(members.begin(), members.end(), rng);
        }
        for (const std::size_t i : members) {
            plan.assignment[i] = static_cast<std::uint32_t>(next);
            next = (next + 1) % k;
        }
    }
    return plan;
}

/// Stratified hold-out: round(fraction * n_c) samples of each class go to the
/// second dataset. Both keep the original sample order.
[[nodiscard]] inline std::pair<dataset, dataset> stratified_split(const dataset &ds, const double fraction, const std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw data_error{ "stratified_split: fraction must lie in (0, 1)" };
    }
    auto by_class = detail::indices_by_class(ds);
    std::mt19937_64 rng{ seed };
    std::vector<bool> held(ds.size(), false);
    for (auto &members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
        for (std::size_t j = 0; j < take; ++j) {
            held[members[j]] = true;
        }
    }
    std::vector<std::size_t> keep_idx;
    std::vector<std::size_t> held_idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        (held[i] ? held_idx : keep_idx).push_back(i);
    }
    return { subset(ds, keep_idx), subset(ds, held_idx) };
}

/// Network-ready batch: pixels scaled to [0,1] and one-hot labels.
template <typename T>
struct batch {
    tensor<T> images;  // [n, 32, 32, 1]
    tensor<T> onehot;  // [n, K]
    std::vector<std::uint32_t> labels;
};

template <typename T>
void write_normalized(const image &pixels, T *dst) {
    for (std::size_t i = 0; i < image_pixels; ++i) {
        dst[i] = static_cast<T>(pixels[i]) / T{ 255 };
    }
}

template <typename T>
[[nodiscard]] tensor<T> image_tensor(const image &pixels) {
    tensor<T> out{ shape{ 1, image_side, image_side, 1 } };
    write_normalized(pixels, out.data().data());
    return out;
}

template <typename T>
[[nodiscard]] tensor<T> one_hot(const std::span<const std::uint32_t> labels, const std::size_t classes) {
    tensor<T> out{ shape{ labels.size(), classes } };
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) {
            throw data_error{ "one_hot: label " + std::to_string(labels[i]) + " out of range" };
        }
        out(i, labels[i]) = T{ 1 };
    }
    return out;
}

template <typename T>
[[nodiscard]] batch<T> make_batch(const dataset &ds, const std::span<const std::size_t> indices) {
    if (indices.empty()) {
        throw data_error{ "make_batch: empty batch" };
    }
    batch<T> out;
    out.images = tensor<T>{ shape{ indices.size(), image_side, image_side, 1 } };
    out.labels.reserve(indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const sample &s = ds.samples.at(indices[b]);
        write_normalized(s.pixels, out.images.data().data() + b * image_pixels);
        out.labels.push_back(s.label);
    }
    out.onehot = one_hot<T>(out.labels, ds.labels.size());
    return out;
}

}  // namespace qalam
