#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "hiervid/encoder.hpp"
#include "hiervid/gradcheck.hpp"
#include "hiervid/losses.hpp"
#include "hiervid/ops.hpp"
#include "hiervid/pooling.hpp"
#include "oracles/oracles.hpp"

using namespace hiervid;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.image_size = 16;
    c.stride = 4;
    c.grid_channels = 6;
    c.blocks = 1;
    c.mlp_hidden = 5;
    c.embed_dim = 4;
    c.head_hidden = 5;
    c.lstm_hidden = 3;
    return c;
}

Tensor random_image(std::size_t size, Rng& rng) {
    std::vector<double> v(size * size * 3);
    for (auto& x : v) x = uniform(rng, 0.0, 1.0);
    return Tensor::from({size, size, 3}, std::move(v));
}

Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor::from({1, n}, std::move(v));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Encoder, GridShape) {
    auto params = ModelParams::init(ModelConfig{}, 0);
    Rng rng = make_rng(1, "test");
    auto grid = encode_grid(random_image(64, rng), params);
    EXPECT_EQ(grid.values.shape(), (Shape{8, 8, 64}));
}

TEST(Encoder, ZeroImageZeroBiasesGivesZeroGrid) {
    auto params = ModelParams::init(tiny_config(), 3);
    for (const auto& [name, t] : params.named())
        if (name.ends_with(".b")) {
            Tensor h = t;
            std::fill(h.leaf_data().begin(), h.leaf_data().end(), 0.0);
        }
    auto grid = encode_grid(Tensor::zeros({16, 16, 3}), params);
    for (double v : grid.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, ReceptiveFieldIsLocal) {
    auto cfg = tiny_config();
    cfg.blocks = 1;
    auto params = ModelParams::init(cfg, 4);
    Rng rng = make_rng(2, "test");
    auto img = random_image(16, rng);
    auto base = encode_grid(img, params).values;
    auto v = values(img);
    v[0] += 0.5;  // pixel in patch (0, 0)
    auto moved = encode_grid(Tensor::from({16, 16, 3}, v), params).values;
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            double diff = 0.0;
            for (std::size_t k = 0; k < cfg.grid_channels; ++k) diff += std::abs(base.at({r, c, k}) - moved.at({r, c, k}));
            if (r > 1 || c > 1)
                EXPECT_EQ(diff, 0.0) << r << "," << c;
            else
                EXPECT_GT(diff, 0.0) << r << "," << c;
        }
}

TEST(Encoder, GridGradientMatchesFiniteDifferences) {
    auto params = ModelParams::init(tiny_config(), 5);
    Rng rng = make_rng(3, "test");
    auto img = random_image(16, rng);
    auto report = finite_diff_check([&] { return sum(encode_grid(img, params).values); }, params.tensors());
    EXPECT_TRUE(report.passed());
    EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Encoder, CheckpointEntriesReproduceGrid) {
    auto params = ModelParams::init(tiny_config(), 6);
    auto copy = ModelParams::from_entries(tiny_config(), hvt1::decode(hvt1::encode(params.to_entries())));
    Rng rng = make_rng(4, "test");
    auto img = random_image(16, rng);
    EXPECT_EQ(values(encode_grid(img, params).values), values(encode_grid(img, copy).values));
}

TEST(FrameEmbed, ConstantGridPoolsToCell) {
    auto cfg = tiny_config();
    cfg.project_frames = false;
    auto params = ModelParams::init(cfg, 7);
    std::vector<double> cell{0.1, -0.2, 0.3, 0.4, 0.5, -0.6};
    std::vector<double> grid;
    for (int i = 0; i < 16; ++i) grid.insert(grid.end(), cell.begin(), cell.end());
    auto e = frame_embed(FeatureGrid{Tensor::from({4, 4, 6}, grid)}, params, false);
    auto got = values(e);
    ASSERT_EQ(got.size(), cell.size());
    for (std::size_t i = 0; i < cell.size(); ++i) EXPECT_NEAR(got[i], cell[i], 1e-15);
}

TEST(FrameEmbed, NormalizedAndDeterministic) {
    auto params = ModelParams::init(tiny_config(), 8);
    Rng rng = make_rng(5, "test");
    auto img = random_image(16, rng);
    auto a = frame_embed(encode_grid(img, params), params, true);
    auto b = frame_embed(encode_grid(img, params), params, true);
    double norm = 0.0;
    for (double v : a.data()) norm += v * v;
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-9);
    EXPECT_EQ(values(a), values(b));
}

TEST(AggregateShot, Means) {
    std::vector<Tensor> same(3, row({1.0, 2.0}));
    EXPECT_EQ(values(aggregate_shot(same)), (std::vector<double>{1.0, 2.0}));
    std::vector<Tensor> two{row({1, 0}), row({0, 1})};
    EXPECT_EQ(values(aggregate_shot(two)), (std::vector<double>{0.5, 0.5}));
    std::vector<Tensor> three{row({1, 5}), row({2, 7}), row({4, -3})};
    std::vector<Tensor> perm{three[2], three[0], three[1]};
    auto x = values(aggregate_shot(three)), y = values(aggregate_shot(perm));
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(x[i], y[i], 1e-15);
}

TEST(Predictor, CausalAndZeroWeights) {
    auto params = ModelParams::init(tiny_config(), 9);
    Rng rng = make_rng(6, "test");
    std::vector<Tensor> shots;
    for (int i = 0; i < 2; ++i) {
        std::vector<double> v(3 * 4);
        for (auto& x : v) x = uniform(rng, -1, 1);
        shots.push_back(Tensor::from({3, 4}, v));
    }
    auto one = predict_next_shots(shots, params, 1);
    auto two = predict_next_shots(shots, params, 2);
    ASSERT_EQ(one.size(), 1u);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_EQ(values(one[0]), values(two[0]));

    for (const auto& [name, t] : params.named())
        if (name.starts_with("lstm")) {
            Tensor h = t;
            std::fill(h.leaf_data().begin(), h.leaf_data().end(), 0.0);
        }
    for (const auto& p : predict_next_shots(shots, params, 2))
        for (double v : p.data()) EXPECT_EQ(v, 0.0);
}

TEST(Critic, IdentityZeroAndOracle) {
    auto params = ModelParams::init(tiny_config(), 10);
    Tensor b = params.get("critic.B");
    auto pred = Tensor::from({4}, {0.3, -1.0, 2.0, 0.5}), target = Tensor::from({4}, {1.5, 0.2, -0.7, 1.0});
    EXPECT_NEAR(critic_score(pred, target, params).item(),
                oracle::critic(pred.data(), target.data(), b.data()), 1e-12);
    EXPECT_EQ(critic_score(Tensor::zeros({4}), target, params).item(), 0.0);
    EXPECT_THROW(critic_score(row({0.3, -1.0, 2.0, 0.5}), target, params), ShapeError);
    auto d = b.leaf_data();
    std::fill(d.begin(), d.end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) d[i * 4 + i] = 1.0;
    EXPECT_NEAR(critic_score(pred, target, params).item(), 0.45 - 0.2 - 1.4 + 0.5, 1e-12);
}

TEST(Critic, MatrixMatchesPairwiseScores) {
    auto params = ModelParams::init(tiny_config(), 11);
    Rng rng = make_rng(7, "test");
    std::vector<double> p(12), t(12);
    for (auto& x : p) x = uniform(rng, -1, 1);
    for (auto& x : t) x = uniform(rng, -1, 1);
    auto m = critic_matrix(Tensor::from({3, 4}, p), Tensor::from({3, 4}, t), params);
    auto b = params.get("critic.B").data();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            EXPECT_NEAR(m.at({i, j}), oracle::critic(std::span(p).subspan(4 * i, 4), std::span(t).subspan(4 * j, 4), b), 1e-12);
}

TEST(BoxToCell, Examples) {
    // Center pixel (i=100, j=200) on a 224 image.
    BBox b{200.0 / 224 - 0.01, 100.0 / 224 - 0.01, 200.0 / 224 + 0.01, 100.0 / 224 + 0.01};
    EXPECT_EQ(box_to_cell(b, 224, 224, 7, 7), (GridCell{3, 6}));
    EXPECT_EQ(box_to_cell(BBox{0, 0, 1e-9, 1e-9}, 224, 224, 7, 7), (GridCell{0, 0}));
    EXPECT_EQ(box_to_cell(BBox{0.9, 1.0 - 1e-9, 1.0, 1.0}, 224, 224, 7, 7), (GridCell{6, 6}));
    EXPECT_EQ(box_to_cell(BBox{0.9, 0.9, 1.0, 1.0}, 7, 7, 7, 7), (GridCell{6, 6}));
    EXPECT_THROW(box_to_cell(BBox{0.5, 0.2, 0.4, 0.3}, 224, 224, 7, 7), ShapeError);
}

TEST(Pooling, SameCenterSameEmbedding) {
    auto cfg = tiny_config();
    auto params = ModelParams::init(cfg, 12);
    Rng rng = make_rng(8, "test");
    std::vector<Tensor> imgs{random_image(16, rng)};
    auto grids = encode_batch(imgs, params);
    std::vector<BoxRef> refs{{0, DetectedBox{0, 1.0, BBox{0.4, 0.4, 0.6, 0.6}}, {}},
                             {0, DetectedBox{1, 1.0, BBox{0.3, 0.3, 0.7, 0.7}}, {}},
                             {0, DetectedBox{1, 1.0, BBox{0.0, 0.0, 0.1, 0.1}}, {}}};
    auto g = gather_box_embeddings(grids, refs, params, true, true, 16, 16);
    auto e = g.set.embeddings;
    for (std::size_t k = 0; k < cfg.embed_dim; ++k) EXPECT_EQ(e.at({0, k}), e.at({1, k}));
    EXPECT_EQ(g.set.labels, (std::vector<int>{0, 1, 1}));
}

// ---------------------------------------------------------------------------
// Losses

TEST(InfoNce, UniformCriticIsZero) {
    std::vector<Tensor> s{Tensor::full({4, 4}, 0.7)};
    EXPECT_EQ(infonce_from_scores(s).item(), 0.0);
}

TEST(InfoNce, TwoByTwo) {
    std::vector<Tensor> s{Tensor::from({2, 2}, {1, 0, 0, 1})};
    const double expected = -std::log(std::exp(1.0) / ((std::exp(1.0) + 1.0) / 2.0));
    EXPECT_NEAR(infonce_from_scores(s).item(), expected, 1e-12);
    EXPECT_NEAR(expected, -0.3799, 1e-4);
}

TEST(InfoNce, ShiftInvarianceAndOracle) {
    Rng rng = make_rng(9, "test");
    std::vector<double> v(25);
    for (auto& x : v) x = uniform(rng, -3, 3);
    auto shifted = v;
    for (auto& x : shifted) x += 4.25;
    std::vector<Tensor> a{Tensor::from({5, 5}, v)}, b{Tensor::from({5, 5}, shifted)};
    EXPECT_NEAR(infonce_from_scores(a).item(), infonce_from_scores(b).item(), 1e-9);
    EXPECT_NEAR(infonce_from_scores(a).item(), oracle::infonce(v, 5), 1e-12);
    EXPECT_GE(infonce_from_scores(a).item(), -std::log(5.0));
}

namespace {

// 1-D embeddings reproducing the requested squared distances from the anchor at 0.
MiningResult mine_1d(double dap, std::vector<double> dan) {
    std::vector<double> e{0.0, std::sqrt(dap)};
    std::vector<int> labels{0, 0};
    for (double d : dan) {
        e.push_back(-std::sqrt(d));
        labels.push_back(1);
    }
    std::vector<AnchorPositive> pairs{{0, 1}};
    return semi_hard_mine(e, 1, labels, pairs);
}

}  // namespace

TEST(Mining, SemiHardChoice) {
    auto r = mine_1d(0.3, {0.1, 0.4, 0.9});
    ASSERT_EQ(r.triplets.size(), 1u);
    EXPECT_EQ(r.triplets[0].negative, 3u);
}

TEST(Mining, FallbackToFarthest) {
    auto r = mine_1d(0.3, {0.1, 0.2});
    ASSERT_EQ(r.triplets.size(), 1u);
    EXPECT_EQ(r.triplets[0].negative, 3u);
}

TEST(Mining, OneLabelGivesNothing) {
    std::vector<double> e{0, 1, 2};
    std::vector<int> labels{4, 4, 4};
    auto pairs = same_label_pairs(labels);
    EXPECT_EQ(pairs.size(), 6u);
    auto r = semi_hard_mine(e, 1, labels, pairs);
    EXPECT_TRUE(r.triplets.empty());
    EXPECT_EQ(r.skipped, 6u);
}

TEST(Mining, MatchesBruteForce) {
    Rng rng = make_rng(10, "test");
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 12, d = 3;
        std::vector<double> e(n * d);
        for (auto& x : e) x = uniform(rng, -1, 1);
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(uniform_int(rng, 0, 2));
        auto pairs = same_label_pairs(labels);
        auto got = semi_hard_mine(e, d, labels, pairs);
        auto want = oracle::brute_force_semi_hard(e, d, labels, 0.2);
        EXPECT_EQ(got.triplets, want.triplets);
        EXPECT_EQ(got.skipped, want.skipped);
        auto term = triplet_loss(Tensor::from({n, d}, e), got.triplets, 0.2);
        EXPECT_NEAR(term.value.item(), want.loss, 1e-12);
    }
}

TEST(TripletLoss, HingeExamples) {
    auto t = [](double dap, double dan, double margin) {
        auto e = Tensor::from({3, 1}, {0.0, std::sqrt(dap), -std::sqrt(dan)});
        std::vector<Triplet> tr{{0, 1, 2}};
        return triplet_loss(e, tr, margin).value.item();
    };
    EXPECT_NEAR(t(0.1, 0.5, 0.2), 0.0, 1e-15);
    EXPECT_NEAR(t(0.5, 0.1, 0.2), 0.6, 1e-12);
    EXPECT_NEAR(t(0.0, 0.05, 0.2), 0.15, 1e-12);
    auto empty = triplet_loss(Tensor::zeros({2, 1}), {}, 0.2);
    EXPECT_TRUE(empty.empty);
    EXPECT_EQ(empty.value.item(), 0.0);
}

TEST(FrameLoss, IdenticalEmbeddingsGiveMargin) {
    EmbeddingSet s;
    s.embeddings = Tensor::full({6, 3}, 0.5);
    s.labels = {0, 0, 0, 1, 1, 1};
    auto t = frame_loss(s, 0.2);
    EXPECT_FALSE(t.empty);
    EXPECT_NEAR(t.value.item(), 0.2, 1e-15);
}

TEST(FrameLoss, SeparatedShotsAndSingleShot) {
    EmbeddingSet s;
    s.embeddings = Tensor::from({4, 1}, {0.0, 0.0, 5.0, 5.0});
    s.labels = {0, 0, 1, 1};
    EXPECT_EQ(frame_loss(s, 0.2).value.item(), 0.0);
    s.labels = {0, 0, 0, 0};
    EXPECT_TRUE(frame_loss(s, 0.2).empty);
}

TEST(FrameLoss, RandomBatchMatchesOracle) {
    Rng rng = make_rng(11, "test");
    EmbeddingSet s;
    std::vector<double> e(12 * 4);
    for (auto& x : e) x = uniform(rng, -1, 1);
    s.embeddings = Tensor::from({12, 4}, e);
    s.labels = {0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
    EXPECT_NEAR(frame_loss(s, 0.2).value.item(), oracle::brute_force_semi_hard(e, 4, s.labels, 0.2).loss, 1e-12);
}

TEST(ObjectLoss, Examples) {
    EmbeddingSet two;
    two.embeddings = Tensor::from({2, 1}, {0.3, 0.3});
    two.labels = {2, 2};
    auto t = object_loss(two, 0.2);
    EXPECT_TRUE(t.empty);
    EXPECT_EQ(t.value.item(), 0.0);

    EmbeddingSet aab;
    aab.embeddings = Tensor::from({3, 1}, {0.0, 0.0, 10.0});
    aab.labels = {0, 0, 1};
    EXPECT_EQ(object_loss(aab, 0.2).value.item(), 0.0);

    Rng rng = make_rng(12, "test");
    std::vector<double> e(10 * 3);
    for (auto& x : e) x = uniform(rng, -1, 1);
    EmbeddingSet pool;
    pool.embeddings = Tensor::from({10, 3}, e);
    pool.labels = {0, 1, 2, 0, 1, 2, 0, 1, 2, 5};
    EXPECT_NEAR(object_loss(pool, 0.2).value.item(), oracle::brute_force_semi_hard(e, 3, pool.labels, 0.2).loss, 1e-12);
}

TEST(Combined, Arithmetic) {
    LossWeights w;
    EXPECT_NEAR(combined_loss(0.2, 0.1, 0.5, w), 1.12, 1e-12);
    EXPECT_EQ(combined_loss(0.0, 0.0, 0.0, w), 0.0);
    LossWeights baseline;
    baseline.omega = 0.0;
    EXPECT_NEAR(combined_loss(0.2, 0.1, 0.5, baseline), 0.1 + 0.04 * 0.5, 1e-15);
    auto t = combined_loss(Tensor::scalar(0.2), Tensor::scalar(0.1), Tensor::scalar(0.5), w);
    EXPECT_NEAR(t.item(), 1.12, 1e-12);
}

TEST(Combined, WeightValidation) {
    LossWeights w;
    w.omega = -1;
    EXPECT_ANY_THROW(w.validate());
}

TEST(CrossEntropy, UniformAndSaturated) {
    std::vector<int> labels{0, 3};
    EXPECT_NEAR(cross_entropy(Tensor::zeros({2, 6}), labels).item(), std::log(6.0), 1e-12);
    std::vector<double> v(12, 0.0);
    v[0] = 10;
    v[6 + 3] = 10;
    EXPECT_LT(cross_entropy(Tensor::from({2, 6}, v), labels).item(), 5e-4);
}

TEST(BinaryCrossEntropy, ZeroAndSaturated) {
    std::vector<int> labels{1, 4};
    EXPECT_NEAR(binary_cross_entropy(Tensor::zeros({2, 6}), labels).item(), std::log(2.0), 1e-12);
    std::vector<double> v(12, -20.0);
    v[1] = 20;
    v[6 + 4] = 20;
    EXPECT_LT(binary_cross_entropy(Tensor::from({2, 6}, v), labels).item(), 1e-8);
}
