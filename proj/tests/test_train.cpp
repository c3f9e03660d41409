#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "hiervid/config.hpp"
#include "hiervid/synth.hpp"
#include "hiervid/trainer.hpp"
#include "test_util.hpp"

using namespace hiervid;

namespace {

std::shared_ptr<const Corpus> tiny_corpus() {
    static auto corpus = [] {
        SceneSpec s;
        s.image_size = 16;
        auto videos = generate_corpus(s, 12, 21, "tr");
        Rng det = make_rng(21, "detector");
        for (auto& v : videos) v = simulate_detector(v, DetectorNoise{}, 6, det);
        return std::make_shared<const Corpus>(Corpus::from_videos(std::move(videos)));
    }();
    return corpus;
}

TrainConfig tiny_train(const std::filesystem::path& out, std::size_t steps) {
    TrainConfig c;
    c.model.image_size = 16;
    c.model.stride = 4;
    c.model.grid_channels = 8;
    c.model.mlp_hidden = 8;
    c.model.embed_dim = 6;
    c.model.head_hidden = 8;
    c.model.lstm_hidden = 6;
    c.scene.image_size = 16;
    c.videos_per_batch = 3;
    c.frames_per_shot = 2;
    c.total_steps = steps;
    c.optimizer.decay_steps = {};
    c.out_dir = out.string();
    return c;
}

}  // namespace

TEST(Schedule, StepDecay) {
    std::vector<std::size_t> b{90000, 110000};
    EXPECT_DOUBLE_EQ(lr_at(0, 0.8, b, 0.1), 0.8);
    EXPECT_NEAR(lr_at(95000, 0.8, b, 0.1), 0.08, 1e-15);
    EXPECT_NEAR(lr_at(115000, 0.8, b, 0.1), 0.008, 1e-15);
    EXPECT_NEAR(lr_at(90000, 0.8, b, 0.1), 0.08, 1e-15);
    EXPECT_DOUBLE_EQ(lr_at(89999, 0.8, b, 0.1), 0.8);
}

TEST(Sgd, FirstStep) {
    std::vector<double> w{1.0}, g{1.0}, v{0.0};
    sgd_momentum_step(w, g, v, 0.1, 0.9);
    EXPECT_NEAR(w[0], 0.9, 1e-15);
    EXPECT_EQ(v[0], 1.0);
}

TEST(Sgd, VelocityDecaysGeometrically) {
    std::vector<double> w{0.0}, g{0.0}, v{2.0};
    for (int i = 1; i <= 5; ++i) {
        sgd_momentum_step(w, g, v, 0.1, 0.9);
        EXPECT_NEAR(v[0], 2.0 * std::pow(0.9, i), 1e-15);
    }
}

TEST(Sgd, TwoConstantSteps) {
    std::vector<double> w{0.0}, g{1.0}, v{0.0};
    sgd_momentum_step(w, g, v, 0.1, 0.9);
    sgd_momentum_step(w, g, v, 0.1, 0.9);
    EXPECT_NEAR(w[0], -0.1 * (1.0 + 1.9), 1e-15);
}

TEST(Sgd, NonFiniteGradientLeavesStateAlone) {
    std::vector<double> w{1.0, 2.0}, g{0.5, std::numeric_limits<double>::quiet_NaN()}, v{0.1, 0.2};
    try {
        sgd_momentum_step(w, g, v, 0.1, 0.9, "head.w1");
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("head.w1"), std::string::npos);
    }
    EXPECT_EQ(w, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(v, (std::vector<double>{0.1, 0.2}));
}

TEST(Config, MinimalFillsDefaults) {
    hvtest::TempDir dir;
    hvtest::write_text(dir / "c.json", R"({"corpus": "x/manifest.jsonl"})");
    auto v = validate_config(dir / "c.json");
    EXPECT_EQ(v.normalized.at("weights").at("omega").get<double>(), 5.0);
    EXPECT_EQ(v.normalized.at("weights").at("beta").get<double>(), 0.04);
    EXPECT_EQ(v.normalized.at("total_steps").get<std::size_t>(), 2000u);
    EXPECT_FALSE(v.digest.empty());
    auto again = train_config_from_json(v.normalized);
    EXPECT_EQ(to_json(again), v.normalized);
}

TEST(Config, ReportsEveryViolation) {
    nlohmann::json j = {{"weights", {{"omega", -1}}},
                        {"total_steps", 100},
                        {"optimizer", {{"decay_steps", {50, 100}}}},
                        {"bogus", 1}};
    try {
        train_config_from_json(j);
        FAIL();
    } catch (const ConfigError& e) {
        std::string all;
        for (const auto& m : e.errors()) all += m + "\n";
        EXPECT_NE(all.find("weights.omega"), std::string::npos) << all;
        EXPECT_NE(all.find("optimizer.decay_steps[1]"), std::string::npos) << all;
        EXPECT_NE(all.find("bogus"), std::string::npos) << all;
        EXPECT_EQ(e.errors().size(), 3u) << all;
    }
}

TEST(Config, UnknownAblationRejected) {
    nlohmann::json j = {{"ablation", "nope"}};
    EXPECT_THROW(train_config_from_json(j), ConfigError);
    for (auto a : {Ablation::none, Ablation::random_labels, Ablation::random_boxes, Ablation::random_both,
                   Ablation::bce_added, Ablation::bce_replaces_object, Ablation::object_only, Ablation::baseline_vivi})
        EXPECT_EQ(parse_ablation(ablation_name(a)), a);
}

TEST(Trainer, ZeroStepsSavesInitialParameters) {
    hvtest::TempDir dir;
    auto cfg = tiny_train(dir / "run", 0);
    auto report = train(cfg, tiny_corpus());
    EXPECT_EQ(report.steps, 0u);
    EXPECT_EQ(report.checkpoint.filename(), "ckpt_0.hvt");
    auto loaded = load_checkpoint(report.checkpoint);
    auto init = ModelParams::init(cfg.model, cfg.seed);
    EXPECT_EQ(loaded.params.to_entries(), init.to_entries());
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "config.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "log.jsonl"));
}

TEST(Trainer, SameSeedSameDigestAcrossThreadCounts) {
    hvtest::TempDir dir;
    auto a = tiny_train(dir / "a", 3);
    auto b = tiny_train(dir / "b", 3);
    auto c = tiny_train(dir / "c", 3);
    c.threads = 4;
    const auto ra = train(a, tiny_corpus()), rb = train(b, tiny_corpus()), rc = train(c, tiny_corpus());
    EXPECT_EQ(ra.checkpoint_digest, rb.checkpoint_digest);
    EXPECT_EQ(ra.checkpoint_digest, rc.checkpoint_digest);
    EXPECT_EQ(hvtest::read_bytes(dir / "a" / "log.jsonl"), hvtest::read_bytes(dir / "c" / "log.jsonl"));
    auto d = tiny_train(dir / "d", 3);
    d.seed = 1;
    EXPECT_NE(train(d, tiny_corpus()).checkpoint_digest, ra.checkpoint_digest);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
    hvtest::TempDir dir;
    auto full = tiny_train(dir / "full", 4);
    full.checkpoint_every = 2;
    const auto straight = train(full, tiny_corpus());
    auto resumed = full;
    resumed.out_dir = (dir / "resumed").string();
    const auto r = train(resumed, tiny_corpus(), dir / "full" / "ckpt_2.hvt");
    EXPECT_EQ(r.checkpoint_digest, straight.checkpoint_digest);
}

TEST(Trainer, ResumeRejectsOtherConfig) {
    hvtest::TempDir dir;
    auto a = tiny_train(dir / "a", 1);
    train(a, tiny_corpus());
    auto b = tiny_train(dir / "b", 1);
    b.weights.omega = 1.0;
    EXPECT_THROW(train(b, tiny_corpus(), dir / "a" / "ckpt_1.hvt"), TrainingError);
}

TEST(Trainer, CheckpointRoundTripIsByteExact) {
    hvtest::TempDir dir;
    auto cfg = tiny_train(dir / "run", 1);
    const auto report = train(cfg, tiny_corpus());
    const auto bytes = hvtest::read_bytes(report.checkpoint);
    auto entries = hvt1::read_file(report.checkpoint);
    hvt1::write_file(dir / "copy.hvt", entries);
    EXPECT_EQ(hvtest::read_bytes(dir / "copy.hvt"), bytes);
    EXPECT_EQ(checkpoint_digest(dir / "copy.hvt"), report.checkpoint_digest);
}

TEST(Trainer, LoggedTotalMatchesWeightedComponents) {
    hvtest::TempDir dir;
    auto cfg = tiny_train(dir / "run", 2);
    Trainer t(cfg, tiny_corpus());
    for (int i = 0; i < 2; ++i) {
        auto s = t.step();
        EXPECT_NEAR(s.total, weighted_total(s, term_weights(cfg)), 1e-12);
        EXPECT_TRUE(std::isfinite(s.total));
    }
}

TEST(Trainer, BaselineDiffersOnlyThroughObjectLoss) {
    hvtest::TempDir dir;
    auto full = tiny_train(dir / "f", 3);
    auto base = full;
    base.weights.omega = 0.0;
    Trainer a(full, tiny_corpus()), b(base, tiny_corpus());
    auto la = a.step(), lb = b.step();
    // Same parameters and same batch before any update.
    EXPECT_EQ(la.frame, lb.frame);
    EXPECT_EQ(la.shot, lb.shot);
    EXPECT_EQ(la.object, lb.object);
    auto la2 = a.step(), lb2 = b.step();
    if (la.object > 0.0)
        EXPECT_NE(la2.frame, lb2.frame);
    else
        EXPECT_EQ(la2.frame, lb2.frame);
}

TEST(Trainer, AblationWeights) {
    TrainConfig c;
    auto w = term_weights(c);
    EXPECT_EQ(w.object, 5.0);
    EXPECT_EQ(w.frame, 1.0);
    EXPECT_EQ(w.shot, 0.04);
    c.ablation = Ablation::baseline_vivi;
    EXPECT_EQ(term_weights(c).object, 0.0);
    c.ablation = Ablation::bce_replaces_object;
    EXPECT_EQ(term_weights(c).object, 0.0);
    EXPECT_GT(term_weights(c).bce, 0.0);
    c.ablation = Ablation::bce_added;
    EXPECT_EQ(term_weights(c).object, 5.0);
    EXPECT_GT(term_weights(c).bce, 0.0);
}

TEST(Trainer, EveryAblationRuns) {
    for (auto a : {Ablation::random_labels, Ablation::random_boxes, Ablation::random_both, Ablation::bce_added,
                   Ablation::bce_replaces_object, Ablation::object_only, Ablation::baseline_vivi}) {
        SCOPED_TRACE(ablation_name(a));
        hvtest::TempDir dir;
        auto cfg = tiny_train(dir / "run", 1);
        cfg.ablation = a;
        Trainer t(cfg, tiny_corpus());
        auto s = t.step();
        EXPECT_TRUE(std::isfinite(s.total));
    }
}

TEST(Trainer, TooFewUsableVideos) {
    hvtest::TempDir dir;
    auto cfg = tiny_train(dir / "run", 1);
    cfg.videos_per_batch = 50;
    EXPECT_THROW(Trainer(cfg, tiny_corpus()), TrainingError);
}
