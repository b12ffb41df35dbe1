#pragma once

#include "qalam/data.hpp"
#include "qalam/error.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace qalam {

/// K x K counts indexed [true][predicted].
class confusion_matrix {
  public:
    explicit confusion_matrix(const std::size_t classes) :
        classes_{ classes },
        counts_(classes * classes, 0) {
        if (classes == 0) {
            throw error{ "confusion_matrix: need at least one class" };
        }
    }

    [[nodiscard]] std::size_t classes() const noexcept { return classes_; }

    [[nodiscard]] std::size_t at(const std::size_t truth, const std::size_t predicted) const { return counts_.at(truth * classes_ + predicted); }

    void add(const std::size_t truth, const std::size_t predicted, const std::size_t count = 1) {
        if (truth >= classes_ || predicted >= classes_) {
            throw data_error{ "confusion_matrix: label out of range" };
        }
        counts_[truth * classes_ + predicted] += count;
    }

    [[nodiscard]] std::size_t true_positives(const std::size_t c) const { return at(c, c); }

    /// Predicted as c but truly another class (column sum minus diagonal).
    [[nodiscard]] std::size_t false_positives(const std::size_t c) const {
        std::size_t n = 0;
        for (std::size_t t = 0; t < classes_; ++t) {
            n += at(t, c);
        }
        return n - at(c, c);
    }

    /// Truly c but predicted as another class (row sum minus diagonal).
    [[nodiscard]] std::size_t false_negatives(const std::size_t c) const { return support(c) - at(c, c); }

    [[nodiscard]] std::size_t support(const std::size_t c) const {
        std::size_t n = 0;
        for (std::size_t p = 0; p < classes_; ++p) {
            n += at(c, p);
        }
        return n;
    }

    [[nodiscard]] std::size_t total() const noexcept {
        std::size_t n = 0;
        for (const std::size_t v : counts_) {
            n += v;
        }
        return n;
    }

    [[nodiscard]] std::size_t trace() const {
        std::size_t n = 0;
        for (std::size_t c = 0; c < classes_; ++c) {
            n += at(c, c);
        }
        return n;
    }

    friend bool operator==(const confusion_matrix &, const confusion_matrix &) = default;

  private:
    std::size_t classes_;
    std::vector<std::size_t> counts_;
};

[[nodiscard]] inline confusion_matrix confusion(const std::span<const std::uint32_t> truth, const std::span<const std::uint32_t> predicted, const std::size_t classes) {
    if (truth.size() != predicted.size()) {
        throw data_error{ "confusion: " + std::to_string(truth.size()) + " true labels but " + std::to_string(predicted.size()) + " predictions" };
    }
    confusion_matrix cm{ classes };
    for (std::size_t i = 0; i < truth.size(); ++i) {
        cm.add(truth[i], predicted[i]);
    }
    return cm;
}

struct class_metrics {
    std::string name;
    double precision{ 0.0 };
    double recall{ 0.0 };
    double f1{ 0.0 };
    std::size_t support{ 0 };
};

struct metric_average {
    double precision{ 0.0 };
    double recall{ 0.0 };
    double f1{ 0.0 };
};

struct classification_report {
    std::vector<class_metrics> classes;
    double accuracy{ 0.0 };
    metric_average macro;
    metric_average weighted;
    std::size_t total{ 0 };
    // Zero-denominator cases that were reported as 0.
    std::vector<std::string> warnings;
};

[[nodiscard]] inline double f1_score(const double precision, const double recall) {
    return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

/// Per-class precision = TP/(TP+FP), recall = TP/(TP+FN), F1 their harmonic
/// mean; any 0/0 is reported as 0 with a warning.
[[nodiscard]] inline classification_report report(const confusion_matrix &cm, const label_map &labels) {
    if (labels.size() != cm.classes()) {
        throw data_error{ "report: label map has " + std::to_string(labels.size()) + " names for a " + std::to_string(cm.classes()) + "-class matrix" };
    }
    if (cm.total() == 0) {
        throw data_error{ "report: empty confusion matrix" };
    }
    classification_report out;
    out.total = cm.total();
    out.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    const double k = static_cast<double>(cm.classes());
    const double n = static_cast<double>(cm.total());
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        const auto tp = static_cast<double>(cm.true_positives(c));
        const auto fp = static_cast<double>(cm.false_positives(c));
        const auto fn = static_cast<double>(cm.false_negatives(c));
        class_metrics m;
        m.name = labels.name(c);
        m.support = cm.support(c);
        if (tp + fp == 0.0) {
            out.warnings.push_back("precision of '" + m.name + "' is ill-defined (never predicted); set to 0");
        } else {
            m.precision = tp / (tp + fp);
        }
        if (tp + fn == 0.0) {
            out.warnings.push_back("recall of '" + m.name + "' is ill-defined (no true samples); set to 0");
        } else {
            m.recall = tp / (tp + fn);
        }
        m.f1 = f1_score(m.precision, m.recall);
        const double w = static_cast<double>(m.support) / n;
        out.macro.precision += m.precision / k;
        out.macro.recall += m.recall / k;
        out.macro.f1 += m.f1 / k;
        out.weighted.precision += m.precision * w;
        out.weighted.recall += m.recall * w;
        out.weighted.f1 += m.f1 * w;
        out.classes.push_back(std::move(m));
    }
    return out;
}

[[nodiscard]] inline classification_report report(const std::span<const std::uint32_t> truth, const std::span<const std::uint32_t> predicted, const label_map &labels) {
    return report(confusion(truth, predicted, labels.size()), labels);
}

namespace detail {

// Terminal columns for a UTF-8 string: one per code point, skipping
// combining marks (Arabic diacritics) and zero-width joiners.
inline std::size_t display_width(const std::string_view text) {
    std::size_t width = 0;
    for (std::size_t i = 0; i < text.size();) {
        const auto lead = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        char32_t cp = lead;
        if (lead >= 0xF0) {
            len = 4;
            cp = lead & 0x07U;
        } else if (lead >= 0xE0) {
            len = 3;
            cp = lead & 0x0FU;
        } else if (lead >= 0xC0) {
            len = 2;
            cp = lead & 0x1FU;
        }
        for (std::size_t j = 1; j < len && i + j < text.size(); ++j) {
            cp = (cp << 6U) | (static_cast<unsigned char>(text[i + j]) & 0x3FU);
        }
        const bool combining = (cp >= 0x0300 && cp <= 0x036F) || (cp >= 0x064B && cp <= 0x065F) || cp == 0x0670 || cp == 0x200C || cp == 0x200D;
        width += combining ? 0 : 1;
        i += len;
    }
    return width;
}

inline std::string pad_right(const std::string &text, const std::size_t width) {
    const std::size_t w = display_width(text);
    return text + std::string(w < width ? width - w : 0, ' ');
}

inline std::string fixed2(const double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2) << v;
    return out.str();
}

}  // namespace detail

/// Plain-text table: one row per class, then accuracy, macro avg and
/// weighted avg, values rounded to two decimals.
[[nodiscard]] inline std::string render_report(const classification_report &r) {
    std::size_t name_width = std::string_view{ "weighted avg" }.size();
    for (const class_metrics &m : r.classes) {
        name_width = std::max(name_width, detail::display_width(m.name));
    }
    std::ostringstream out;
    const auto cell = [](const std::string &s) { return std::string(s.size() < 10 ? 10 - s.size() : 0, ' ') + s; };
    out << detail::pad_right("", name_width) << cell("precision") << cell("recall") << cell("f1-score") << cell("support") << "\n\n";
    for (const class_metrics &m : r.classes) {
        out << detail::pad_right(m.name, name_width) << cell(detail::fixed2(m.precision)) << cell(detail::fixed2(m.recall)) << cell(detail::fixed2(m.f1)) << cell(std::to_string(m.support)) << '\n';
    }
    const std::string total = std::to_string(r.total);
    out << '\n';
    out << detail::pad_right("accuracy", name_width) << cell("") << cell("") << cell(detail::fixed2(r.accuracy)) << cell(total) << '\n';
    out << detail::pad_right("macro avg", name_width) << cell(detail::fixed2(r.macro.precision)) << cell(detail::fixed2(r.macro.recall)) << cell(detail::fixed2(r.macro.f1)) << cell(total) << '\n';
    out << detail::pad_right("weighted avg", name_width) << cell(detail::fixed2(r.weighted.precision)) << cell(detail::fixed2(r.weighted.recall)) << cell(detail::fixed2(r.weighted.f1)) << cell(total) << '\n';
    return out.str();
}

/// Machine-readable form with full precision. Summary rows use the names
/// "accuracy", "macro avg" and "weighted avg".
[[nodiscard]] inline std::string render_delimited(const classification_report &r, const char delimiter = ',') {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "label" << delimiter << "precision" << delimiter << "recall" << delimiter << "f1" << delimiter << "support\n";
    for (const class_metrics &m : r.classes) {
        out << m.name << delimiter << m.precision << delimiter << m.recall << delimiter << m.f1 << delimiter << m.support << '\n';
    }
    out << "accuracy" << delimiter << delimiter << delimiter << r.accuracy << delimiter << r.total << '\n';
    out << "macro avg" << delimiter << r.macro.precision << delimiter << r.macro.recall << delimiter << r.macro.f1 << delimiter << r.total << '\n';
    out << "weighted avg" << delimiter << r.weighted.precision << delimiter << r.weighted.recall << delimiter << r.weighted.f1 << delimiter << r.total << '\n';
    return out.str();
}

/// Values recovered from a rendered text report (two-decimal precision).
struct parsed_report {
    std::vector<class_metrics> classes;
    double accuracy{ 0.0 };
    metric_average macro;
    metric_average weighted;
    std::size_t total{ 0 };
};

[[nodiscard]] inline parsed_report parse_report(const std::string &text) {
    parsed_report out;
    std::istringstream in{ text };
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        std::istringstream words{ line };
        std::vector<std::string> tokens;
        for (std::string w; words >> w;) {
            tokens.push_back(w);
        }
        if (tokens.empty()) {
            continue;
        }
        if (!header_seen) {
            if (tokens.front() != "precision") {
                throw data_error{ "parse_report: missing header line" };
            }
            header_seen = true;
            continue;
        }
        const auto number = [&line](const std::string &t) {
            try {
                return std::stod(t);
            } catch (const std::exception &) {
                throw data_error{ "parse_report: malformed line '" + line + "'" };
            }
        };
        const auto joined_name = [&tokens](const std::size_t count) {
            std::string name;
            for (std::size_t i = 0; i < count; ++i) {
                name += (i == 0 ? "" : " ") + tokens[i];
            }
            return name;
        };
        if (tokens.front() == "accuracy" && tokens.size() == 3) {
            out.accuracy = number(tokens[1]);
            out.total = static_cast<std::size_t>(number(tokens[2]));
            continue;
        }
        if (tokens.size() < 5) {
            throw data_error{ "parse_report: malformed line '" + line + "'" };
        }
        const std::size_t n = tokens.size();
        const std::string name = joined_name(n - 4);
        const metric_average values{ number(tokens[n - 4]), number(tokens[n - 3]), number(tokens[n - 2]) };
        if (name == "macro avg") {
            out.macro = values;
        } else if (name == "weighted avg") {
            out.weighted = values;
        } else {
            out.classes.push_back({ name, values.precision, values.recall, values.f1, static_cast<std::size_t>(number(tokens[n - 1])) });
        }
    }
    return out;
}

}  // namespace qalam
