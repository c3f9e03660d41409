#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "hiervid/trainer.hpp"
#include "test_util.hpp"

namespace {

struct Result {
    int code = -1;
    std::string output;  // stdout and stderr
};

Result run(const std::string& args, const std::filesystem::path& log) {
    const std::string cmd = std::string(HIERVID_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

// A corpus and a short run shared by the tests below.
class Cli : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        root_ = std::filesystem::temp_directory_path() / "hiervid_cli_test";
        std::filesystem::remove_all(root_);
        std::filesystem::create_directories(root_);
        hvtest::write_text(root_ / "gen.json", R"({"videos": 12, "seed": 3, "apply_detector": true,
            "scene": {"image_size": 16}})");
        hvtest::write_text(root_ / "train.json", R"({"corpus": ")" + (root_ / "corpus" / "manifest.jsonl").string() + R"(",
            "model": {"image_size": 16, "stride": 4, "grid_channels": 8, "mlp_hidden": 8, "embed_dim": 6,
                      "head_hidden": 8, "lstm_hidden": 6},
            "scene": {"image_size": 16},
            "videos_per_batch": 3, "frames_per_shot": 2, "total_steps": 2,
            "optimizer": {"decay_steps": []}})");
        hvtest::write_text(root_ / "eval.json", R"({"corpus": ")" + (root_ / "corpus" / "manifest.jsonl").string() + R"(",
            "nn": {"batches": 3, "videos_per_batch": 4},
            "probe": {"n_train": 60, "n_val": 20, "n_test": 40, "schedules": [{"steps": 40, "decay_every": 20}],
                      "learning_rates": [0.1]},
            "scene": {"image_size": 16}, "tasks": ["category"],
            "perturbations": [{"kind": "box_blur", "level": 3}], "stats_sample": 12})");
        gen_ = run("generate --config " + (root_ / "gen.json").string() + " --out " + (root_ / "corpus").string(),
                   root_ / "gen.log");
        train_ = run("train --config " + (root_ / "train.json").string() + " --out " + (root_ / "run").string(),
                     root_ / "train.log");
    }
    static void TearDownTestSuite() { std::filesystem::remove_all(root_); }

    static std::string p(const std::string& name) { return (root_ / name).string(); }
    static Result go(const std::string& args) { return run(args, root_ / "last.log"); }

    static inline std::filesystem::path root_;
    static inline Result gen_, train_;
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(go("--help").code, 0);
    auto unknown = go("bogus");
    EXPECT_EQ(unknown.code, 1);
    EXPECT_NE(unknown.output.find("unknown subcommand: bogus"), std::string::npos);
    EXPECT_NE(unknown.output.find("Subcommands:"), std::string::npos);
    EXPECT_EQ(go("").code, 1);
    EXPECT_EQ(go("train --no-such-flag").code, 1);
    EXPECT_EQ(go("eval-nn --out x").code, 1);  // --ckpt is required
}

TEST_F(Cli, GenerateWritesCorpus) {
    ASSERT_EQ(gen_.code, 0) << gen_.output;
    EXPECT_TRUE(std::filesystem::exists(root_ / "corpus" / "manifest.jsonl"));
    EXPECT_TRUE(std::filesystem::exists(root_ / "corpus" / "generate_config.json"));
    std::size_t hvt = 0;
    for (const auto& e : std::filesystem::directory_iterator(root_ / "corpus")) hvt += e.path().extension() == ".hvt";
    EXPECT_EQ(hvt, 12u);
}

TEST_F(Cli, TrainWritesRunDirectory) {
    ASSERT_EQ(train_.code, 0) << train_.output;
    for (const char* f : {"config.json", "log.jsonl", "ckpt_2.hvt", "ckpt_2.json"})
        EXPECT_TRUE(std::filesystem::exists(root_ / "run" / f)) << f;
}

TEST_F(Cli, ThreadCountDoesNotChangeCheckpoint) {
    ASSERT_EQ(train_.code, 0);
    auto r = go("train --config " + p("train.json") + " --threads 4 --out " + p("run4"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(hvtest::read_bytes(root_ / "run" / "ckpt_2.hvt"), hvtest::read_bytes(root_ / "run4" / "ckpt_2.hvt"));
}

TEST_F(Cli, BadConfigExitsWithPaths) {
    hvtest::write_text(root_ / "bad.json", R"({"corpus": "x", "weights": {"omega": -1}, "total_steps": 10,
        "optimizer": {"decay_steps": [10]}})");
    auto r = go("train --config " + p("bad.json"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("weights.omega"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("optimizer.decay_steps[0]"), std::string::npos) << r.output;
}

TEST_F(Cli, EvaluationLeavesCheckpointUntouched) {
    ASSERT_EQ(train_.code, 0);
    const auto ck = root_ / "run" / "ckpt_2.hvt";
    const auto before = hiervid::checkpoint_digest(ck);
    auto r = go("eval-nn --config " + p("eval.json") + " --ckpt " + ck.string() + " --out " + p("ev_nn"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(hiervid::checkpoint_digest(ck), before);
    for (const char* f : {"report.json", "report.csv", "config.json", "chart_nn_match.svg"})
        EXPECT_TRUE(std::filesystem::exists(root_ / "ev_nn" / f)) << f;
}

TEST_F(Cli, TransferRobustnessAndStats) {
    ASSERT_EQ(train_.code, 0);
    const auto ck = (root_ / "run" / "ckpt_2.hvt").string();
    auto t = go("eval-transfer --config " + p("eval.json") + " --ckpt " + ck + " --out " + p("ev_tr"));
    EXPECT_EQ(t.code, 0) << t.output;
    auto rb = go("eval-robustness --config " + p("eval.json") + " --ckpt " + ck + " --out " + p("ev_rob"));
    EXPECT_EQ(rb.code, 0) << rb.output;
    auto s = go("stats --config " + p("eval.json") + " --out " + p("ev_stats"));
    EXPECT_EQ(s.code, 0) << s.output;
    std::ifstream in(root_ / "ev_stats" / "report.json");
    auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("values").at("videos").get<int>(), 12);
}

TEST_F(Cli, MissingCorpusIsAnError) {
    hvtest::write_text(root_ / "nocorpus.json", R"({"corpus": "/nonexistent/manifest.jsonl"})");
    auto r = go("stats --config " + p("nocorpus.json") + " --out " + p("ev_x"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("/nonexistent/manifest.jsonl"), std::string::npos);
}
