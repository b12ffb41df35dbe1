#pragma once

#include "qalam/data.hpp"
#include "qalam/error.hpp"
#include "qalam/network.hpp"
#include "qalam/train.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

// Model file layout (all integers little-endian):
//
//   "QLM1"            4-byte magic
//   u16               format version (1)
//   u32 + bytes       UTF-8 key=value header: network config, label map,
//                     training config, fold accuracies
//   f32 ...           parameters and batch-norm running statistics in layer
//                     declaration order; the count is implied by the config
//
// Trailing bytes after the last value are rejected.

namespace qalam {

inline constexpr std::array<char, 4> model_magic{ 'Q', 'L', 'M', '1' };
inline constexpr std::uint16_t model_format_version = 1;

namespace detail {

template <typename U>
void write_le(std::ostream &out, U value) {
    static_assert(std::is_trivially_copyable_v<U>);
    std::array<char, sizeof(U)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    out.write(bytes.data(), sizeof(U));
}

template <typename U>
U read_le(std::istream &in, const char *what) {
    std::array<char, sizeof(U)> bytes{};
    in.read(bytes.data(), sizeof(U));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(U))) {
        throw format_error{ std::string{ "model file truncated while reading " } + what };
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    U value;
    std::memcpy(&value, bytes.data(), sizeof(U));
    return value;
}

inline std::string join_real(const std::vector<double> &values) {
    std::ostringstream out;
    out.precision(17);
    for (std::size_t i = 0; i < values.size(); ++i) {
        out << (i == 0 ? "" : ",") << values[i];
    }
    return out.str();
}

inline std::string bundle_header(const trained_bundle &bundle) {
    std::ostringstream out;
    out << bundle.net.config().to_text();
    out << "labels=";
    for (std::size_t i = 0; i < bundle.labels.size(); ++i) {
        out << (i == 0 ? "" : "|") << bundle.labels.name(i);
    }
    out << '\n';
    const train_config &t = bundle.training;
    out.precision(17);
    out << "train.folds=" << t.folds << '\n'
        << "train.shuffle=" << (t.shuffle ? 1 : 0) << '\n'
        << "train.batch=" << t.batch_size << '\n'
        << "train.epochs=" << t.epochs << '\n'
        << "train.seed=" << t.seed << '\n'
        << "train.lr=" << t.learning_rate << '\n'
        << "train.lr_decay=" << t.lr_decay << '\n'
        << "fold_accuracies=" << join_real(bundle.fold_accuracies) << '\n'
        << "best_fold=" << bundle.best_fold << '\n';
    return out.str();
}

}  // namespace detail

inline void save_bundle(std::ostream &out, const trained_bundle &bundle) {
    const std::string header = detail::bundle_header(bundle);
    out.write(model_magic.data(), model_magic.size());
    detail::write_le<std::uint16_t>(out, model_format_version);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const tensor<float> *t : bundle.net.state_tensors()) {
        for (const float v : t->data()) {
            detail::write_le<float>(out, v);
        }
    }
    if (!out) {
        throw format_error{ "failed to write model" };
    }
}

inline void save_bundle(const std::string &path, const trained_bundle &bundle) {
    std::ofstream out{ path, std::ios::binary };
    if (!out) {
        throw format_error{ "cannot write model file '" + path + "'" };
    }
    save_bundle(out, bundle);
}

[[nodiscard]] inline trained_bundle load_bundle(std::istream &in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != 4 || magic != model_magic) {
        throw format_error{ "not a model file (bad magic)" };
    }
    const auto version = detail::read_le<std::uint16_t>(in, "version");
    if (version != model_format_version) {
        throw format_error{ "unsupported model format version " + std::to_string(version) };
    }
    const auto header_size = detail::read_le<std::uint32_t>(in, "header length");
    if (header_size > (1U << 24U)) {
        throw format_error{ "implausible model header length" };
    }
    std::string header(header_size, '\0');
    in.read(header.data(), header_size);
    if (in.gcount() != static_cast<std::streamsize>(header_size)) {
        throw format_error{ "model file truncated in header" };
    }
    const auto fields = detail::parse_fields(header);
    const network_config ncfg = network_config::from_fields(fields);

    std::vector<std::string> names = detail::split(detail::require_field(fields, "labels"), '|');
    label_map labels;
    try {
        labels = label_map{ std::move(names) };
    } catch (const data_error &e) {
        throw format_error{ e.what() };
    }
    if (labels.size() != ncfg.classes) {
        throw format_error{ "label map has " + std::to_string(labels.size()) + " names for " + std::to_string(ncfg.classes) + " outputs" };
    }

    train_config tcfg;
    tcfg.folds = detail::parse_size(detail::require_field(fields, "train.folds"), "train.folds");
    tcfg.shuffle = detail::require_field(fields, "train.shuffle") == "1";
    tcfg.batch_size = detail::parse_size(detail::require_field(fields, "train.batch"), "train.batch");
    tcfg.epochs = detail::parse_size(detail::require_field(fields, "train.epochs"), "train.epochs");
    tcfg.seed = detail::parse_size(detail::require_field(fields, "train.seed"), "train.seed");
    tcfg.learning_rate = detail::parse_real(detail::require_field(fields, "train.lr"), "train.lr");
    tcfg.lr_decay = detail::parse_real(detail::require_field(fields, "train.lr_decay"), "train.lr_decay");
    std::vector<double> accuracies;
    const std::string &acc_text = detail::require_field(fields, "fold_accuracies");
    if (!acc_text.empty()) {
        for (const std::string &a : detail::split(acc_text, ',')) {
            accuracies.push_back(detail::parse_real(a, "fold_accuracies"));
        }
    }
    const std::size_t best = detail::parse_size(detail::require_field(fields, "best_fold"), "best_fold");

    network<float> net{ ncfg, 0 };
    for (tensor<float> *t : net.state_tensors()) {
        for (float &v : t->data()) {
            v = detail::read_le<float>(in, "parameters");
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw format_error{ "unexpected trailing bytes after model parameters" };
    }
    net.set_mode(mode::infer);
    return trained_bundle{ std::move(net), std::move(labels), tcfg, std::move(accuracies), best };
}

[[nodiscard]] inline trained_bundle load_bundle(const std::string &path) {
    std::ifstream in{ path, std::ios::binary };
    if (!in) {
        throw format_error{ "cannot open model file '" + path + "'" };
    }
    return load_bundle(in);
}

}  // namespace qalam
