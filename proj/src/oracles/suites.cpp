#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

#include "hiervid/encoder.hpp"
#include "hiervid/eval.hpp"
#include "hiervid/gradcheck.hpp"
#include "hiervid/ops.hpp"
#include "hiervid/pooling.hpp"
#include "hiervid/rng.hpp"
#include "hiervid/synth.hpp"
#include "hiervid/trainer.hpp"
#include "oracles/oracles.hpp"

namespace hiervid::selfcheck {

namespace {

Tensor random_leaf(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = uniform(rng, lo, hi);
    return Tensor::from(std::move(shape), std::move(v), true);
}

/// Values bounded away from zero, for ops with a kink there.
Tensor away_from_zero_leaf(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = (bernoulli(rng, 0.5) ? 1.0 : -1.0) * uniform(rng, 0.1, 1.0);
    return Tensor::from(std::move(shape), std::move(v), true);
}

class GradSuite {
  public:
    GradSuite(std::ostream& out, std::uint64_t seed) : out_(out), rng_(make_rng(seed, "gradcheck-suite")) {}

    Rng& rng() { return rng_; }

    /// Projects `fn`'s output onto fixed random weights so every output entry
    /// contributes to the scalar being differentiated.
    void op(const std::string& name, std::vector<Tensor> inputs, const std::function<Tensor(const std::vector<Tensor>&)>& fn) {
        const Tensor probe = fn(inputs);
        std::vector<double> w(probe.numel());
        for (auto& x : w) x = uniform(rng_, -1.0, 1.0);
        const Tensor weights = Tensor::from(probe.shape(), std::move(w));
        check(name, [&] { return sum(mul(fn(inputs), weights)); }, inputs);
    }

    void check(const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& params,
               std::size_t max_entries = 0) {
        GradCheckOptions opts;
        opts.max_entries_per_param = max_entries;
        const auto r = finite_diff_check(f, params, opts);
        ++result_.checks;
        if (!r.passed()) ++result_.failures;
        result_.max_rel_error = std::max(result_.max_rel_error, r.max_rel_error);
        out_ << (r.passed() ? "PASS " : "FAIL ") << "gradcheck " << name << ": max_rel_err=" << std::scientific
             << std::setprecision(3) << r.max_rel_error << std::defaultfloat << " checked=" << r.checked
             << " kinks_skipped=" << r.skipped_kinks << '\n';
        for (std::size_t i = 0; i < r.failures.size() && i < 5; ++i) {
            const auto& e = r.failures[i];
            out_ << "    param " << e.param << " entry " << e.entry << ": analytic=" << e.analytic
                 << " numeric=" << e.numeric << " rel=" << e.rel_error << '\n';
        }
    }

    SuiteResult result() const { return result_; }

  private:
    std::ostream& out_;
    Rng rng_;
    SuiteResult result_;
};

ModelConfig tiny_model() {
    ModelConfig m;
    m.image_size = 16;
    m.stride = 4;
    m.grid_channels = 8;
    m.mlp_hidden = 8;
    m.embed_dim = 4;
    m.head_hidden = 8;
    m.lstm_hidden = 4;
    return m;
}

std::vector<Tensor> model_leaves(const ModelParams& p) { return p.tensors(); }

BatchInputs tiny_batch(std::uint64_t seed, std::size_t stills) {
    SceneSpec spec;
    spec.image_size = 16;
    spec.shot_length_min = 3;
    spec.shot_length_max = 4;
    spec.shots_min = 2;
    spec.shots_max = 2;
    spec.objects_min = 2;
    spec.objects_max = 3;
    BatchInputs b;
    b.videos = 2;
    b.shots = 2;
    b.frames = 3;
    for (std::size_t v = 0; v < 2; ++v) {
        Rng rng = make_rng(seed, "gradcheck-video", v);
        const auto video = generate_video(spec, rng, "g" + std::to_string(v));
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t k = 0; k < 3; ++k) {
                const auto& fr = video.shots[l].frames[k];
                // Finite differences need a point off the mining tie set: jitter
                // the pixels so no two frames or cells coincide, and keep one box per cell.
                std::vector<double> px(fr.image.data().begin(), fr.image.data().end());
                for (auto& x : px) x = std::clamp(x + uniform(rng, -0.02, 0.02), 0.0, 1.0);
                b.images.push_back(Tensor::from(fr.image.shape(), std::move(px)));
                std::vector<DetectedBox> kept;
                std::vector<GridCell> cells;
                for (const auto& box : filter_boxes(fr.boxes, 0.0, 3)) {
                    const GridCell c = box_to_cell(box.bbox, 16, 16, 4, 4);
                    if (std::find(cells.begin(), cells.end(), c) != cells.end()) continue;
                    cells.push_back(c);
                    kept.push_back(box);
                }
                b.boxes.push_back(kept);
                b.keys.push_back({v, l, k});
            }
    }
    for (const auto& s : generate_stills(spec, stills, derive_seed(seed, "gradcheck-stills"))) {
        b.stills.push_back(s.image);
        b.still_labels.push_back(s.category);
    }
    return b;
}

}  // namespace

SuiteResult run_gradcheck_suite(std::ostream& out, std::uint64_t seed) {
    GradSuite s(out, seed);
    Rng& rng = s.rng();
    using V = std::vector<Tensor>;

    // Primitive ops.
    s.op("add", {random_leaf(rng, {3, 4}, -1, 1), random_leaf(rng, {4}, -1, 1)}, [](const V& x) { return add(x[0], x[1]); });
    s.op("sub", {random_leaf(rng, {3, 4}, -1, 1), random_leaf(rng, {3, 4}, -1, 1)}, [](const V& x) { return sub(x[0], x[1]); });
    s.op("mul", {random_leaf(rng, {2, 3, 4}, -1, 1), random_leaf(rng, {3, 4}, -1, 1)}, [](const V& x) { return mul(x[0], x[1]); });
    s.op("matmul", {random_leaf(rng, {3, 4}, -1, 1), random_leaf(rng, {4, 5}, -1, 1)}, [](const V& x) { return matmul(x[0], x[1]); });
    s.op("relu", {away_from_zero_leaf(rng, {3, 5})}, [](const V& x) { return relu(x[0]); });
    s.op("tanh", {random_leaf(rng, {3, 5}, -2, 2)}, [](const V& x) { return tanh(x[0]); });
    s.op("sigmoid", {random_leaf(rng, {3, 5}, -3, 3)}, [](const V& x) { return sigmoid(x[0]); });
    s.op("exp", {random_leaf(rng, {3, 5}, -1, 1)}, [](const V& x) { return exp(x[0]); });
    s.op("log", {random_leaf(rng, {3, 5}, 0.5, 2)}, [](const V& x) { return log(x[0]); });
    s.op("sum", {random_leaf(rng, {3, 4}, -1, 1)}, [](const V& x) { return sum(x[0]); });
    s.op("sum_axis", {random_leaf(rng, {3, 4, 2}, -1, 1)}, [](const V& x) { return sum(x[0], 1); });
    s.op("mean", {random_leaf(rng, {3, 4}, -1, 1)}, [](const V& x) { return mean(x[0]); });
    s.op("mean_axis", {random_leaf(rng, {3, 4}, -1, 1)}, [](const V& x) { return mean(x[0], 0); });
    s.op("max", {random_leaf(rng, {3, 4}, -1, 1)}, [](const V& x) { return max(x[0]); });
    s.op("max_axis", {random_leaf(rng, {3, 4}, -1, 1)}, [](const V& x) { return max(x[0], 1); });
    s.op("concat", {random_leaf(rng, {2, 3}, -1, 1), random_leaf(rng, {2, 2}, -1, 1)}, [](const V& x) { return concat(x, 1); });
    s.op("slice", {random_leaf(rng, {4, 3}, -1, 1)}, [](const V& x) { return slice(x[0], 0, 1, 3); });
    s.op("reshape", {random_leaf(rng, {2, 6}, -1, 1)}, [](const V& x) { return reshape(x[0], {3, 4}); });
    s.op("transpose", {random_leaf(rng, {2, 5}, -1, 1)}, [](const V& x) { return transpose(x[0]); });

    // Composite ops.
    s.op("scale", {random_leaf(rng, {3, 4}, -1, 1)}, [](const V& x) { return scale(x[0], -1.7); });
    s.op("add_scalar", {random_leaf(rng, {3, 4}, -1, 1)}, [](const V& x) { return add_scalar(x[0], 0.3); });
    s.op("softmax", {random_leaf(rng, {3, 5}, -2, 2)}, [](const V& x) { return softmax(x[0], 1); });
    s.op("logsumexp", {random_leaf(rng, {3, 5}, -2, 2)}, [](const V& x) { return logsumexp(x[0], 1); });
    s.op("l2_normalize", {random_leaf(rng, {3, 5}, -1, 1)}, [](const V& x) { return l2_normalize(x[0], 1); });
    s.op("gather_rows", {random_leaf(rng, {4, 3}, -1, 1)}, [](const V& x) {
        const std::size_t rows[] = {2, 0, 2, 3};
        return gather_rows(x[0], rows);
    });
    s.op("patchify", {random_leaf(rng, {2, 4, 4, 3}, 0, 1)}, [](const V& x) { return patchify(x[0], 2); });
    s.op("neighbor_mean", {random_leaf(rng, {2 * 3 * 3, 2}, -1, 1)}, [](const V& x) { return neighbor_mean(x[0], 2, 3, 3); });

    // Encoder and heads on a tiny model. Zero biases leave some heads dead on
    // whole frames; those rows collapse to one point and tie in the mining, so
    // the biases start away from zero.
    const ModelParams params = ModelParams::init(tiny_model(), seed);
    for (const auto& [name, t] : params.named()) {
        if (name.size() < 2 || (name.substr(name.size() - 2) != ".b" && name.substr(name.size() - 3) != ".b1" &&
                                name.substr(name.size() - 3) != ".b2"))
            continue;
        Tensor leaf = t;
        for (auto& x : leaf.leaf_data()) x += uniform(rng, 0.05, 0.2);
    }
    const BatchInputs batch = tiny_batch(seed, 4);
    {
        std::vector<double> w(2 * 4 * 4 * 8);
        for (auto& x : w) x = uniform(rng, -1, 1);
        const Tensor weights = Tensor::from({32, 8}, std::move(w));
        const std::vector<Tensor> two(batch.images.begin(), batch.images.begin() + 2);
        V enc;
        for (const auto& [n, t] : params.named())
            if (n.rfind("patch.", 0) == 0 || n.rfind("block", 0) == 0) enc.push_back(t);
        s.check("encode_grid", [&] { return sum(mul(encode_batch(two, params).values, weights)); }, enc);
    }
    {
        const GridBatch g = encode_batch(std::span<const Tensor>(batch.images.data(), 3), params);
        const Tensor grid = g.values.detach();
        std::vector<double> w(3 * 4);
        for (auto& x : w) x = uniform(rng, -1, 1);
        const Tensor weights = Tensor::from({3, 4}, std::move(w));
        const V head{params.get("head.frame.w1"), params.get("head.frame.b1"), params.get("head.frame.w2"),
                     params.get("head.frame.b2")};
        s.check("frame_embed",
                [&] {
                    const GridBatch gg{grid, 3, g.height, g.width, g.channels};
                    return sum(mul(frame_representations(gg, params, true), weights));
                },
                head);
    }
    {
        V shots{random_leaf(rng, {2, 4}, -1, 1), random_leaf(rng, {2, 4}, -1, 1)};
        V leaves = shots;
        for (const auto& [n, t] : params.named())
            if (n.rfind("lstm.", 0) == 0) leaves.push_back(t);
        std::vector<double> w(2 * 4 * 3);
        for (auto& x : w) x = uniform(rng, -1, 1);
        const Tensor weights = Tensor::from({3, 2, 4}, std::move(w));
        s.check("predict_next_shots_3step",
                [&] {
                    const auto p = predict_next_shots(shots, params, 3);
                    Tensor acc;
                    for (std::size_t k = 0; k < p.size(); ++k) {
                        const Tensor t = sum(mul(p[k], slice(weights, 0, k, k + 1)));
                        acc = acc.defined() ? add(acc, t) : t;
                    }
                    return acc;
                },
                leaves);
    }
    {
        V pt{random_leaf(rng, {3, 4}, -1, 1), random_leaf(rng, {3, 4}, -1, 1), params.get("critic.B")};
        s.check("shot_infonce", [&] {
            const Tensor preds[] = {pt[0]};
            const Tensor targets[] = {pt[1]};
            return shot_infonce(preds, targets, params);
        }, pt);
    }
    {
        V x{random_leaf(rng, {4, 8}, -1, 1), params.get("head.supervised.w"), params.get("head.supervised.b")};
        const int labels[] = {0, 3, 5, 3};
        s.check("supervised_ce", [&] { return supervised_ce(x[0], labels, params); }, x);
        V y{random_leaf(rng, {4, 8}, -1, 1), params.get("head.bce.w"), params.get("head.bce.b")};
        s.check("object_bce", [&] { return object_bce(y[0], labels, params); }, y);
    }
    {
        Tensor e = random_leaf(rng, {10, 4}, -1, 1);
        const std::vector<int> labels{0, 0, 1, 1, 1, 2, 2, 0, 1, 2};
        s.check("triplet_loss_mined", [&] {
            EmbeddingSet set{l2_normalize(e, 1), labels, std::vector<GroupKey>(10), true};
            return object_loss(set, 0.2).value;
        }, {e});
    }

    // Full objective through the training code path.
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.videos_per_batch = 2;
    cfg.shots_per_video = 2;
    cfg.frames_per_shot = 3;
    s.check("combined_loss", [&] { return batch_loss(params, batch, cfg).total; }, model_leaves(params));
    TrainConfig ext = cfg;
    ext.ablation = Ablation::bce_added;
    ext.weights.gamma = 1.0;
    s.check("combined_loss_bce_supervised", [&] { return batch_loss(params, batch, ext).total; }, model_leaves(params));

    const auto r = s.result();
    out << (r.passed() ? "PASS" : "FAIL") << " gradcheck suite: " << r.checks - r.failures << "/" << r.checks
        << " checks, max_rel_err=" << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat
        << '\n';
    return r;
}


namespace {

class OracleSuite {
  public:
    explicit OracleSuite(std::ostream& out) : out_(out) {}

    void report(const std::string& name, bool ok, const std::string& detail) {
        ++result_.checks;
        if (!ok) ++result_.failures;
        out_ << (ok ? "PASS " : "FAIL ") << name << ": " << detail << '\n';
    }
    SuiteResult result() const { return result_; }

  private:
    std::ostream& out_;
    SuiteResult result_;
};

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(3) << std::scientific << v;
    return os.str();
}

std::vector<double> normal_rows(Rng& rng, std::size_t n, std::size_t d, bool normalize) {
    std::vector<double> e(n * d);
    for (auto& x : e) x = normal(rng, 0.0, 1.0);
    if (normalize)
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += e[i * d + k] * e[i * d + k];
            s = std::sqrt(s);
            for (std::size_t k = 0; k < d; ++k) e[i * d + k] /= s;
        }
    return e;
}

}  // namespace

MiningCheck check_mining_pools(std::size_t pools, std::uint64_t seed) {
    Rng rng = make_rng(seed, "mining-pools");
    MiningCheck c;
    for (std::size_t t = 0; t < pools; ++t) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 32));
        const auto d = static_cast<std::size_t>(uniform_int(rng, 1, 16));
        const auto k = static_cast<int>(uniform_int(rng, 1, 5));
        const double margin = uniform(rng, 0.05, 0.5);
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(uniform_int(rng, 0, k - 1));
        const auto e = normal_rows(rng, n, d, true);

        const auto pairs = same_label_pairs(labels);
        const auto mined = semi_hard_mine(e, d, labels, pairs);
        const Tensor et = Tensor::from({n, d}, e);
        const LossTerm term = triplet_loss(et, mined.triplets, margin);
        const auto ref = oracle::brute_force_semi_hard(e, d, labels, margin);
        ++c.pools;
        if (mined.triplets != ref.triplets || mined.skipped != ref.skipped) ++c.selection_mismatches;
        c.max_loss_diff = std::max(c.max_loss_diff, std::abs(term.value.item() - ref.loss));
    }
    return c;
}

FisherCheck check_fisher_tables(std::int64_t max_total) {
    FisherCheck c;
    for (std::int64_t n = 1; n <= max_total; ++n)
        for (std::int64_t a = 0; a <= n; ++a)
            for (std::int64_t b = 0; a + b <= n; ++b)
                for (std::int64_t cc = 0; a + b + cc <= n; ++cc) {
                    const Table2x2 t{{{a, b}, {cc, n - a - b - cc}}};
                    const double p = fisher_exact_2x2(t);
                    const double q = oracle::fisher_exact_enumerate(t);
                    ++c.tables;
                    c.max_diff = std::max(c.max_diff, std::abs(p - q));
                    if (!(p > 0.0 && p <= 1.0)) ++c.out_of_range;
                }
    return c;
}

InfoNceCheck check_infonce_algebra(std::size_t batches, std::uint64_t seed) {
    Rng rng = make_rng(seed, "infonce-algebra");
    InfoNceCheck c;
    for (std::size_t t = 0; t < batches; ++t) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 16));
        const double u = uniform(rng, -5, 5);
        const Tensor uniform_scores[] = {Tensor::full({n, n}, u)};
        c.max_uniform_abs = std::max(c.max_uniform_abs, std::abs(infonce_from_scores(uniform_scores).item()));

        const double spread = uniform(rng, 0.1, 10.0);
        std::vector<double> g(n * n);
        for (auto& x : g) x = normal(rng, 0.0, spread);
        const Tensor scores[] = {Tensor::from({n, n}, g)};
        const double loss = infonce_from_scores(scores).item();
        c.min_margin_over_bound = std::min(c.min_margin_over_bound, loss + std::log(static_cast<double>(n)));

        const double shift = uniform(rng, -20, 20);
        std::vector<double> h = g;
        for (auto& x : h) x += shift;
        const Tensor shifted[] = {Tensor::from({n, n}, h)};
        c.max_shift_diff = std::max(c.max_shift_diff, std::abs(infonce_from_scores(shifted).item() - loss));
        c.max_oracle_diff = std::max(c.max_oracle_diff, std::abs(loss - oracle::infonce(g, n)));
        ++c.batches;
    }
    return c;
}

SuiteResult run_oracle_suite(std::ostream& out, std::uint64_t seed) {
    OracleSuite s(out);
    Rng rng = make_rng(seed, "oracle-suite");

    const auto m = check_mining_pools(200, seed);
    s.report("semi_hard_mine+triplet_loss vs brute force", m.selection_mismatches == 0 && m.max_loss_diff < 1e-10,
             std::to_string(m.pools) + " pools, " + std::to_string(m.selection_mismatches) +
                 " selection mismatches, max loss diff " + num(m.max_loss_diff));

    const auto f = check_fisher_tables(40);
    s.report("fisher_exact_2x2 vs exhaustive enumeration", f.max_diff < 1e-9 && f.out_of_range == 0,
             std::to_string(f.tables) + " tables (total <= 40), max p diff " + num(f.max_diff));

    const auto inf = check_infonce_algebra(1000, seed);
    s.report("InfoNCE uniform critic", inf.max_uniform_abs == 0.0, "max |loss| " + num(inf.max_uniform_abs));
    s.report("InfoNCE lower bound -ln N", inf.min_margin_over_bound >= -1e-12,
             "min loss + ln N over " + std::to_string(inf.batches) + " batches " + num(inf.min_margin_over_bound));
    s.report("InfoNCE shift invariance", inf.max_shift_diff <= 1e-9, "max diff " + num(inf.max_shift_diff));
    s.report("InfoNCE vs direct formula", inf.max_oracle_diff <= 1e-9, "max diff " + num(inf.max_oracle_diff));

    {
        const ModelParams params = ModelParams::init(tiny_model(), seed);
        const auto& b = params.get("critic.B");
        const std::size_t d = b.dim(0);
        double worst = 0.0;
        for (int t = 0; t < 50; ++t) {
            const auto p = normal_rows(rng, 3, d, false), q = normal_rows(rng, 3, d, false);
            const Tensor pt = Tensor::from({3, d}, p), qt = Tensor::from({3, d}, q);
            const Tensor mat = critic_matrix(pt, qt, params);
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                    const std::span<const double> pi(p.data() + i * d, d), qj(q.data() + j * d, d);
                    const double ref = oracle::critic(pi, qj, b.data());
                    worst = std::max(worst, std::abs(mat.at({i, j}) - ref));
                    if (i == j) {
                        const double single = critic_score(Tensor::from({d}, {pi.begin(), pi.end()}),
                                                           Tensor::from({d}, {qj.begin(), qj.end()}), params)
                                                  .item();
                        worst = std::max(worst, std::abs(single - ref));
                    }
                }
        }
        s.report("critic vs explicit loops", worst < 1e-12, "max diff " + num(worst));
    }
    {
        std::size_t mismatches = 0, sets = 0;
        for (int t = 0; t < 50; ++t) {
            const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 60));
            const auto d = static_cast<std::size_t>(uniform_int(rng, 1, 12));
            const auto e = normal_rows(rng, n, d, t % 2 == 0);
            std::vector<int> labels(n);
            for (auto& l : labels) l = static_cast<int>(uniform_int(rng, 0, 3));
            mismatches += nearest_neighbors(e, d) != oracle::nearest_neighbors(e, d);
            mismatches += nn_match_fraction(e, d, labels) != oracle::nn_match_fraction(e, d, labels);
            ++sets;
        }
        s.report("nearest neighbours vs all-pairs loops", mismatches == 0,
                 std::to_string(sets) + " sets, " + std::to_string(mismatches) + " mismatches");
    }
    {
        const ModelParams params = ModelParams::init(tiny_model(), seed).frozen();
        const BatchInputs batch = tiny_batch(seed, 0);
        const GridBatch g = encode_batch(batch.images, params);
        std::vector<BoxRef> refs;
        for (std::size_t fi = 0; fi < batch.images.size(); ++fi)
            for (const auto& box : batch.boxes[fi]) refs.push_back({fi, box, batch.keys[fi]});
        const auto gathered = gather_box_embeddings(g, refs, params, false, false, 16, 16);
        double worst = 0.0;
        for (std::size_t r = 0; r < refs.size(); ++r) {
            const auto& bb = refs[r].box.bbox;
            const auto row = static_cast<std::size_t>(std::min(3.0, std::floor(bb.center_y() * 16 * 4 / 16)));
            const auto col = static_cast<std::size_t>(std::min(3.0, std::floor(bb.center_x() * 16 * 4 / 16)));
            for (std::size_t k = 0; k < g.channels; ++k)
                worst = std::max(worst, std::abs(gathered.raw.at({r, k}) - g.values.at({g.row_of(refs[r].frame, row, col), k})));
        }
        s.report("box gather vs per-box loop", worst == 0.0 && !refs.empty(),
                 std::to_string(refs.size()) + " boxes, max diff " + num(worst));
    }

    const auto r = s.result();
    out << (r.passed() ? "PASS" : "FAIL") << " oracle suite: " << r.checks - r.failures << "/" << r.checks << " checks\n";
    return r;
}

}  // namespace hiervid::selfcheck
