#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
   protected:
    fs::path dir = fs::temp_directory_path() / ("rnlab_cli_" + std::to_string(::getpid()));
    void SetUp() override { fs::create_directories(dir); }
    void TearDown() override { fs::remove_all(dir); }

    int run(const std::string& args) {
        const std::string cmd = std::string(RNLAB_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() +
                                " 2> " + (dir / "stderr.txt").string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string read(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    fs::path write_config(const std::string& body) {
        const fs::path p = dir / "run.cfg";
        std::ofstream(p) << body;
        return p;
    }
};

constexpr const char* kTinyConfig =
    "generator = shifted_gaussians\nclasses = 3\ndims = 4\nper_class = 30\nshift = 1\n"
    "hidden = 6\nnormalizer = rn\nepochs = 2\nbatch_size = 10\ndann_lambda = 0.2\n";

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("gradcheck --no-such-flag"), 2);
    EXPECT_EQ(run("gradcheck --layer layernorm"), 2);
    EXPECT_EQ(run("train --config " + (dir / "missing.cfg").string()), 2);
    EXPECT_EQ(run("train --config " + write_config("epochs = soon\n").string()), 2);
    EXPECT_NE(read(dir / "stderr.txt").find("line 1"), std::string::npos);
    EXPECT_EQ(run("sweep --config " + write_config(kTinyConfig).string() + " --vary colour"), 2);
}

TEST_F(Cli, HelpExitsZero) { EXPECT_EQ(run("--help"), 0); }

TEST_F(Cli, GradcheckPassAndFail) {
    EXPECT_EQ(run("gradcheck --layer rn --channels 3 --batch 4 --out " + dir.string()), 0);
    EXPECT_NE(read(dir / "stdout.txt").find("PASS"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "gradcheck.json"));
    EXPECT_EQ(run("gradcheck --layer bn --channels 2 --batch 3 --tol 0"), 1);
    EXPECT_NE(read(dir / "stdout.txt").find("worst:"), std::string::npos);
}

TEST_F(Cli, TrainEvalAnalyzeRoundTrip) {
    const fs::path cfg = write_config(kTinyConfig);
    const fs::path out = dir / "run";
    ASSERT_EQ(run("train --config " + cfg.string() + " --seed 5 --out " + out.string()), 0);
    EXPECT_EQ(run("eval --checkpoint " + (out / "model.json").string() + " --config " + cfg.string() + " --seed 5 --out " +
                  (dir / "ev").string()),
              0);
    EXPECT_NE(read(dir / "ev" / "eval.csv").find("domain,accuracy,loss"), std::string::npos);
    EXPECT_EQ(run("analyze --run " + out.string()), 0);
    EXPECT_TRUE(fs::exists(out / "analysis.json"));
    EXPECT_EQ(run("eval --checkpoint " + (out / "config.txt").string() + " --config " + cfg.string()), 2);
}

TEST_F(Cli, RepeatedTrainIsByteIdentical) {
    const fs::path cfg = write_config(kTinyConfig);
    ASSERT_EQ(run("train --config " + cfg.string() + " --seed 2 --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run("train --config " + cfg.string() + " --seed 2 --out " + (dir / "b").string()), 0);
    EXPECT_EQ(read(dir / "a" / "model.json"), read(dir / "b" / "model.json"));
    EXPECT_EQ(read(dir / "a" / "checkpoints" / "epoch_002.json"), read(dir / "b" / "checkpoints" / "epoch_002.json"));
}

}  // namespace
