#include "qalam/data.hpp"
#include "qalam/synthetic.hpp"

#include "gtest/gtest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct outcome {
    int code;
    std::string out;
};

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("qalam_cli_" + std::string{ ::testing::UnitTest::GetInstance()->current_test_info()->name() });
        fs::remove_all(dir);
        fs::create_directories(dir);
    }

    void TearDown() override { fs::remove_all(dir); }

    [[nodiscard]] std::string path(const std::string &name) const { return (dir / name).string(); }

    outcome run(const std::string &args) const {
        const std::string log = path("stdout.txt");
        const std::string cmd = std::string{ QALAM_CLI_PATH } + " " + args + " > " + log + " 2> " + path("stderr.txt");
        const int status = std::system(cmd.c_str());
        std::ifstream in{ log };
        std::stringstream text;
        text << in.rdbuf();
        return { WIFEXITED(status) ? WEXITSTATUS(status) : -1, text.str() };
    }

    [[nodiscard]] std::string slurp(const std::string &name) const {
        std::ifstream in{ path(name), std::ios::binary };
        std::stringstream text;
        text << in.rdbuf();
        return text.str();
    }

    fs::path dir;
};

}  // namespace

TEST_F(CliTest, UsageErrors) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("groups --bogus").code, 2);
    EXPECT_EQ(run("train --out m.qlm").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST_F(CliTest, GroupsTable) {
    const auto r = run("groups");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("group 4 (4 strokes, 2 classes): Thaa' ث, Sheen ش"), std::string::npos) << r.out;
    const auto j = run("groups --json");
    EXPECT_EQ(j.code, 0);
    EXPECT_NE(j.out.find("\"size\": 13"), std::string::npos);
}

TEST_F(CliTest, PreprocessCopyAndDoubleInvert) {
    qalam::write_csv(path("raw.csv"), qalam::make_glyph_dataset(3, 1));
    ASSERT_EQ(run("preprocess --classes 8 --input " + path("raw.csv") + " --output " + path("copy.csv")).code, 0);
    EXPECT_EQ(slurp("copy.csv"), slurp("raw.csv"));

    ASSERT_EQ(run("preprocess --classes 8 --invert --input " + path("raw.csv") + " --output " + path("inv.csv")).code, 0);
    EXPECT_NE(slurp("inv.csv"), slurp("raw.csv"));
    const auto r = run("preprocess --classes 8 --invert --input " + path("inv.csv") + " --output " + path("back.csv"));
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(slurp("back.csv"), slurp("raw.csv"));
    EXPECT_NE(r.out.find("24 samples, 8 classes"), std::string::npos) << r.out;
}

TEST_F(CliTest, PreprocessTransposeInvert) {
    const auto ds = qalam::make_glyph_dataset(2, 2);
    auto raw = ds;
    for (auto &s : raw.samples) {
        s.pixels = qalam::transpose_image(s.pixels);
        for (auto &p : s.pixels) {
            p = static_cast<std::uint8_t>(255 - p);
        }
    }
    qalam::write_csv(path("raw.csv"), raw, true);
    ASSERT_EQ(run("preprocess --classes 8 --header --transpose --invert --input " + path("raw.csv") + " --output " + path("ready.csv")).code, 0);
    std::ostringstream want;
    qalam::write_csv(want, ds);
    EXPECT_EQ(slurp("ready.csv"), want.str());
}

TEST_F(CliTest, DataErrors) {
    {
        std::ofstream bad{ path("bad.csv") };
        bad << "0,1,2,3\n";
    }
    const auto r = run("preprocess --input " + path("bad.csv") + " --output " + path("out.csv"));
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(slurp("stderr.txt").find("row 1"), std::string::npos);
    {
        std::ofstream junk{ path("junk.qlm") };
        junk << "not a model";
    }
    qalam::write_csv(path("data.csv"), qalam::make_glyph_dataset(1, 1));
    EXPECT_EQ(run("eval --model " + path("junk.qlm") + " --data " + path("data.csv")).code, 3);
    EXPECT_EQ(run("eval --model " + path("missing.qlm") + " --data " + path("data.csv")).code, 2);
}

TEST_F(CliTest, QuickTrainEvalPredict) {
    qalam::write_csv(path("train.csv"), qalam::make_glyph_dataset(20, 3));
    const auto t = run("train --quick --classes 8 --folds 2 --epochs 2 --batch 16 --seed 5 --data " + path("train.csv") + " --out " + path("m.qlm"));
    ASSERT_EQ(t.code, 0) << slurp("stderr.txt");
    EXPECT_NE(t.out.find("fold 2 validation accuracy"), std::string::npos) << t.out;
    EXPECT_NE(slurp("stderr.txt").find("seed=5"), std::string::npos);
    EXPECT_TRUE(fs::exists(path("m.qlm.folds.csv")));

    const auto e = run("eval --model " + path("m.qlm") + " --data " + path("train.csv") + " --csv " + path("report.csv"));
    ASSERT_EQ(e.code, 0);
    EXPECT_NE(e.out.find("weighted avg"), std::string::npos);
    EXPECT_EQ(slurp("report.csv").substr(0, 5), "label");

    qalam::write_csv(path("one.csv"), qalam::make_glyph_dataset(1, 9));
    const auto p = run("predict --model " + path("m.qlm") + " --input " + path("one.csv"));
    ASSERT_EQ(p.code, 0);
    EXPECT_NE(p.out.find("row 7: "), std::string::npos) << p.out;
    // Label line plus five probability lines per row.
    EXPECT_EQ(std::count(p.out.begin(), p.out.end(), '\n'), 8 * 6);

    // The 29-class data does not fit an 8-class model.
    qalam::write_csv(path("wide.csv"), qalam::make_glyph_dataset(qalam::hijja_labels(), 1, 1));
    EXPECT_EQ(run("eval --model " + path("m.qlm") + " --data " + path("wide.csv")).code, 3);
}

TEST_F(CliTest, MultiModelRouting) {
    qalam::write_csv(path("hijja.csv"), qalam::make_glyph_dataset(qalam::hijja_labels(), 4, 4));
    const auto t = run("train-multi --quick --folds 2 --epochs 1 --batch 32 --data " + path("hijja.csv") + " --test " + path("hijja.csv") + " --out " + path("groups"));
    ASSERT_EQ(t.code, 0) << slurp("stderr.txt");
    EXPECT_NE(t.out.find("averaged accuracy"), std::string::npos);

    const auto e = run("eval-multi --models " + path("groups") + " --data " + path("hijja.csv"));
    ASSERT_EQ(e.code, 0);
    for (int g = 1; g <= 4; ++g) {
        EXPECT_NE(e.out.find("group " + std::to_string(g)), std::string::npos);
    }
    EXPECT_GT(e.out.rfind("averaged accuracy"), e.out.rfind("group 4"));

    const auto p = run("predict --models " + path("groups") + " --strokes 4 --input " + path("hijja.csv"));
    ASSERT_EQ(p.code, 0);
    std::istringstream lines{ p.out };
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) {
        if (line.rfind("row ", 0) == 0) {
            ++rows;
            const bool ok = line.find("Thaa' ث (group 4)") != std::string::npos || line.find("Sheen ش (group 4)") != std::string::npos;
            EXPECT_TRUE(ok) << line;
        }
    }
    EXPECT_EQ(rows, 29 * 4);
    EXPECT_EQ(run("predict --models " + path("groups") + " --strokes 9 --input " + path("hijja.csv")).code, 3);
}

TEST_F(CliTest, Merge) {
    qalam::write_csv(path("a.csv"), qalam::make_glyph_dataset(qalam::hijja_labels(), 2, 1));
    qalam::write_csv(path("b.csv"), qalam::make_glyph_dataset(qalam::ahcd_labels(), 1, 2));
    const auto r = run("merge --hijja " + path("a.csv") + " --ahcd " + path("b.csv") + " --output " + path("m.csv"));
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("86 samples, 29 classes"), std::string::npos) << r.out;
}
