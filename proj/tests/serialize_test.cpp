#include "qalam/serialize.hpp"
#include "qalam/synthetic.hpp"

#include "gtest/gtest.h"

#include <cstring>
#include <filesystem>
#include <sstream>

using qalam::network_config;

namespace {

qalam::trained_bundle trained() {
    qalam::train_config t;
    t.folds = 2;
    t.epochs = 1;
    t.batch_size = 16;
    t.seed = 11;
    return qalam::train(qalam::make_glyph_dataset(6, 1), t, network_config::quick(8));
}

std::string bytes_of(const qalam::trained_bundle &b) {
    std::ostringstream out{ std::ios::binary };
    qalam::save_bundle(out, b);
    return out.str();
}

}  // namespace

TEST(Serialize, RoundTripIsExact) {
    const auto original = trained();
    const std::string bytes = bytes_of(original);
    std::istringstream in{ bytes, std::ios::binary };
    const auto loaded = qalam::load_bundle(in);

    EXPECT_EQ(loaded.net.config(), original.net.config());
    EXPECT_EQ(loaded.labels, original.labels);
    EXPECT_EQ(loaded.training, original.training);
    EXPECT_EQ(loaded.fold_accuracies, original.fold_accuracies);
    EXPECT_EQ(loaded.best_fold, original.best_fold);
    const auto a = original.net.state_tensors();
    const auto b = loaded.net.state_tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_EQ(a[i]->shape(), b[i]->shape());
        EXPECT_EQ(std::memcmp(a[i]->data().data(), b[i]->data().data(), a[i]->size() * sizeof(float)), 0);
    }
    EXPECT_EQ(bytes_of(loaded), bytes);

    for (const auto &s : qalam::make_glyph_dataset(3, 2).samples) {
        const auto p = qalam::predict(original.net, s.pixels);
        const auto q = qalam::predict(loaded.net, s.pixels);
        EXPECT_EQ(p.label, q.label);
        EXPECT_EQ(std::memcmp(p.probabilities.data(), q.probabilities.data(), p.probabilities.size() * sizeof(double)), 0);
    }
}

TEST(Serialize, LayoutHeader) {
    const std::string bytes = bytes_of(trained());
    ASSERT_GT(bytes.size(), 10U);
    EXPECT_EQ(bytes.substr(0, 4), "QLM1");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian u16
    EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0);
}

TEST(Serialize, CorruptMagic) {
    std::string bytes = bytes_of(trained());
    bytes[0] = 'X';
    std::istringstream in{ bytes, std::ios::binary };
    EXPECT_THROW(static_cast<void>(qalam::load_bundle(in)), qalam::format_error);
}

TEST(Serialize, UnsupportedVersion) {
    std::string bytes = bytes_of(trained());
    bytes[4] = 2;
    std::istringstream in{ bytes, std::ios::binary };
    EXPECT_THROW(static_cast<void>(qalam::load_bundle(in)), qalam::format_error);
}

TEST(Serialize, Truncation) {
    const std::string bytes = bytes_of(trained());
    for (const std::size_t keep : { std::size_t{ 2 }, std::size_t{ 5 }, std::size_t{ 9 }, std::size_t{ 40 }, bytes.size() - 1 }) {
        std::istringstream in{ bytes.substr(0, keep), std::ios::binary };
        EXPECT_THROW(static_cast<void>(qalam::load_bundle(in)), qalam::format_error) << keep;
    }
    std::istringstream extra{ bytes + "x", std::ios::binary };
    EXPECT_THROW(static_cast<void>(qalam::load_bundle(extra)), qalam::format_error);
}

TEST(Serialize, Files) {
    const auto dir = std::filesystem::temp_directory_path() / "qalam_serialize_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "m.qlm").string();
    const auto original = trained();
    qalam::save_bundle(path, original);
    EXPECT_EQ(bytes_of(qalam::load_bundle(path)), bytes_of(original));
    EXPECT_THROW(static_cast<void>(qalam::load_bundle((dir / "missing.qlm").string())), qalam::format_error);
    std::filesystem::remove_all(dir);
}
