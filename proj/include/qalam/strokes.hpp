#pragma once

#include "qalam/data.hpp"
#include "qalam/error.hpp"
#include "qalam/metrics.hpp"
#include "qalam/serialize.hpp"
#include "qalam/train.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qalam {

/// Classes writable with a given number of strokes. The group id equals the
/// stroke count it serves.
struct stroke_group {
    int id;
    std::vector<std::string> classes;
};

/// Stroke count -> class set. A class may belong to several groups when
/// its dots can be written separately or merged into one stroke.
class stroke_group_table {
  public:
    stroke_group_table(std::vector<stroke_group> groups, label_map global_labels, const int version = 1) :
        groups_{ std::move(groups) },
        labels_{ std::move(global_labels) },
        version_{ version } {
        for (std::size_t i = 0; i < groups_.size(); ++i) {
            if (groups_[i].id != static_cast<int>(i + 1)) {
                throw error{ "stroke_group_table: group ids must be 1..n in order" };
            }
            if (groups_[i].classes.empty()) {
                throw error{ "stroke_group_table: group " + std::to_string(groups_[i].id) + " is empty" };
            }
            for (std::string &c : groups_[i].classes) {
                c = labels_.name(labels_.index_of(c));
            }
        }
    }

    /// The four groups trained on by the multi-model approach:
    /// 13 one-stroke, 16 two-stroke, 4 three-stroke and 2 four-stroke classes.
    [[nodiscard]] static const stroke_group_table &standard() {
        static const stroke_group_table table{
            { { 1, { "Alif ا", "Haa' ح", "Daal د", "Raa' ر", "Seen س", "Saad ص", "Taa' ط", "Aayn ع", "Lamm ل", "Miim م", "Haa' ه", "Waaw و", "Hamza ء" } },
              { 2, { "Baa' ب", "Taa' ت", "Thaa' ث", "Jiim ج", "Khaa' خ", "Dhaal ذ", "Zaay ز", "Sheen ش", "Daad ض", "Zaa' ظ", "Ghayn غ", "Faa' ف", "Qaaf ق", "Kaff ك", "Nuun ن", "Yaa' ي" } },
              { 3, { "Taa' ت", "Zaa' ظ", "Qaaf ق", "Yaa' ي" } },
              { 4, { "Thaa' ث", "Sheen ش" } } },
            hijja_labels(),
            1
        };
        return table;
    }

    [[nodiscard]] const std::vector<stroke_group> &groups() const noexcept { return groups_; }

    [[nodiscard]] const label_map &labels() const noexcept { return labels_; }

    [[nodiscard]] int version() const noexcept { return version_; }

    [[nodiscard]] int max_strokes() const noexcept { return static_cast<int>(groups_.size()); }

    /// The group serving `strokes`; throws routing_error outside 1..n.
    [[nodiscard]] const stroke_group &route(const int strokes) const {
        if (strokes < 1 || strokes > max_strokes()) {
            throw routing_error{ "stroke count " + std::to_string(strokes) + " is not supported; valid range is 1-" + std::to_string(max_strokes()), strokes };
        }
        return groups_[static_cast<std::size_t>(strokes - 1)];
    }

    /// Ids of every group containing the class.
    [[nodiscard]] std::vector<int> groups_of(const std::string &class_name) const {
        const std::string &canonical = labels_.name(labels_.index_of(class_name));
        std::vector<int> out;
        for (const stroke_group &g : groups_) {
            if (std::find(g.classes.begin(), g.classes.end(), canonical) != g.classes.end()) {
                out.push_back(g.id);
            }
        }
        return out;
    }

    /// Human-readable listing, one group per line.
    [[nodiscard]] std::string render() const {
        std::ostringstream out;
        out << "stroke groups (table version " << version_ << ")\n";
        for (const stroke_group &g : groups_) {
            out << "group " << g.id << " (" << g.id << (g.id == 1 ? " stroke" : " strokes") << ", " << g.classes.size() << " classes): ";
            for (std::size_t i = 0; i < g.classes.size(); ++i) {
                out << (i == 0 ? "" : ", ") << g.classes[i];
            }
            out << '\n';
        }
        return out.str();
    }

  private:
    std::vector<stroke_group> groups_;
    label_map labels_;
    int version_;
};

[[nodiscard]] inline const stroke_group &route(const int strokes) {
    return stroke_group_table::standard().route(strokes);
}

/// One trained network per stroke group, each over that group's compact label map.
struct multi_model_bundle {
    stroke_group_table table{ stroke_group_table::standard() };
    std::map<int, trained_bundle> models;

    [[nodiscard]] const trained_bundle &model(const int group) const {
        const auto it = models.find(group);
        if (it == models.end()) {
            throw error{ "no model trained for group " + std::to_string(group) };
        }
        return it->second;
    }
};

/// Trains a fresh network per group on the samples of that group's classes.
/// Classes in several groups contribute their samples to each of them.
[[nodiscard]] inline multi_model_bundle train_multi(const dataset &ds, const train_config &tcfg, const network_config &ncfg, const stroke_group_table &table = stroke_group_table::standard(), const epoch_callback &on_epoch = {}) {
    multi_model_bundle out{ table, {} };
    for (const stroke_group &g : table.groups()) {
        const dataset group_ds = filter_by_classes(ds, g.classes);
        if (group_ds.empty()) {
            throw data_error{ "group " + std::to_string(g.id) + " has no training samples" };
        }
        const auto counts = class_counts(group_ds);
        if (std::count_if(counts.begin(), counts.end(), [](std::size_t n) { return n > 0; }) < 2) {
            throw data_error{ "group " + std::to_string(g.id) + " has samples of fewer than two classes" };
        }
        network_config group_cfg = ncfg;
        group_cfg.classes = g.classes.size();
        out.models.emplace(g.id, train(group_ds, tcfg, group_cfg, on_epoch));
    }
    return out;
}

struct multi_prediction {
    int group{ 0 };
    // Index and name in the table's global label map.
    std::size_t label{ 0 };
    std::string name;
    // Over the routed group's classes, in group order.
    std::vector<double> probabilities;
    std::vector<std::string> classes;
};

/// Routes by stroke count and classifies with that group's network.
[[nodiscard]] inline multi_prediction predict_multi(const multi_model_bundle &bundle, const std::span<const std::uint8_t> pixels, const int strokes) {
    const stroke_group &g = bundle.table.route(strokes);
    const trained_bundle &m = bundle.model(g.id);
    const prediction p = predict(m.net, pixels);
    multi_prediction out;
    out.group = g.id;
    out.name = g.classes.at(p.label);
    out.label = bundle.table.labels().index_of(out.name);
    out.probabilities = p.probabilities;
    out.classes = g.classes;
    return out;
}

struct group_evaluation {
    int group{ 0 };
    classification_report report;
};

struct multi_evaluation {
    std::vector<group_evaluation> groups;
    // Unweighted mean of the group accuracies.
    double averaged_accuracy{ 0.0 };
    // Correct predictions over all group test samples.
    double weighted_accuracy{ 0.0 };
    // Unweighted means of the per-group macro averages.
    metric_average averaged_macro;
};

[[nodiscard]] inline double mean(const std::span<const double> values) {
    if (values.empty()) {
        throw error{ "mean of an empty sequence" };
    }
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

/// Each test sample is evaluated by every group that contains its true class.
[[nodiscard]] inline multi_evaluation evaluate_multi(const multi_model_bundle &bundle, const dataset &test) {
    multi_evaluation out;
    std::vector<double> accuracies;
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (const stroke_group &g : bundle.table.groups()) {
        const dataset group_test = filter_by_classes(test, g.classes);
        if (group_test.empty()) {
            throw data_error{ "group " + std::to_string(g.id) + " has no test samples" };
        }
        const trained_bundle &m = bundle.model(g.id);
        const auto predicted = predict_labels(m.net, group_test);
        std::vector<std::uint32_t> truth;
        truth.reserve(group_test.size());
        for (const sample &s : group_test.samples) {
            truth.push_back(s.label);
        }
        classification_report r = report(truth, predicted, group_test.labels);
        accuracies.push_back(r.accuracy);
        correct += confusion(truth, predicted, group_test.labels.size()).trace();
        seen += group_test.size();
        out.averaged_macro.precision += r.macro.precision;
        out.averaged_macro.recall += r.macro.recall;
        out.averaged_macro.f1 += r.macro.f1;
        out.groups.push_back({ g.id, std::move(r) });
    }
    const double n = static_cast<double>(out.groups.size());
    out.averaged_macro.precision /= n;
    out.averaged_macro.recall /= n;
    out.averaged_macro.f1 /= n;
    out.averaged_accuracy = mean(accuracies);
    out.weighted_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    return out;
}

/// Saves one model file per group, named group-<id>.qlm, into a directory.
inline void save_multi(const std::filesystem::path &dir, const multi_model_bundle &bundle) {
    std::filesystem::create_directories(dir);
    for (const auto &[id, model] : bundle.models) {
        save_bundle((dir / ("group-" + std::to_string(id) + ".qlm")).string(), model);
    }
}

[[nodiscard]] inline multi_model_bundle load_multi(const std::filesystem::path &dir, const stroke_group_table &table = stroke_group_table::standard()) {
    multi_model_bundle out{ table, {} };
    for (const stroke_group &g : table.groups()) {
        const std::filesystem::path file = dir / ("group-" + std::to_string(g.id) + ".qlm");
        trained_bundle model = load_bundle(file.string());
        if (model.labels.names() != g.classes) {
            throw format_error{ "'" + file.string() + "' was not trained on group " + std::to_string(g.id) + "'s classes" };
        }
        out.models.emplace(g.id, std::move(model));
    }
    return out;
}

}  // namespace qalam
