#include "hiervid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "hiervid/kernels.hpp"
#include "hiervid/parallel.hpp"
#include "hiervid/pooling.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Nearest neighbours

std::vector<std::size_t> nearest_neighbors(std::span<const double> embeddings, std::size_t dim) {
    if (dim == 0 || embeddings.size() % dim != 0) throw std::invalid_argument("nearest_neighbors: bad embedding buffer");
    const std::size_t n = embeddings.size() / dim;
    if (n < 2) throw std::invalid_argument("nearest_neighbors: need at least 2 rows");
    std::vector<std::size_t> out(n);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) {
        kernels::sq_dist_rows(embeddings, embeddings.subspan(i * dim, dim), d);
        std::size_t best = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (best == n || d[j] < d[best]) best = j;
        }
        out[i] = best;
    }
    return out;
}

double nn_match_fraction(std::span<const double> embeddings, std::size_t dim, std::span<const int> labels,
                         std::size_t* matches) {
    if (labels.size() < 2) throw std::invalid_argument("nn_match_fraction: fewer than 2 boxes");
    if (embeddings.size() != labels.size() * dim) throw std::invalid_argument("nn_match_fraction: labels/embeddings mismatch");
    const auto nn = nearest_neighbors(embeddings, dim);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += labels[nn[i]] == labels[i];
    if (matches) *matches = hit;
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double chance_match_level(std::span<const int> labels) {
    const std::size_t n = labels.size();
    if (n < 2) throw std::invalid_argument("chance_match_level: fewer than 2 labels");
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    double same = 0.0;
    for (const auto& [l, c] : counts) same += static_cast<double>(c) * static_cast<double>(c - 1);
    return same / (static_cast<double>(n) * static_cast<double>(n - 1));
}

NNResult nn_class_match_fraction(const ModelParams& params, const Corpus& corpus, const NNEvalOptions& o) {
    const ModelParams frozen = params.frozen();
    std::vector<std::size_t> candidates;
    for (std::size_t v = 0; v < corpus.size(); ++v) {
        const auto lengths = corpus.record(v).shot_lengths();
        for (std::size_t s = 0; s + o.shots_per_video <= lengths.size(); ++s) {
            bool ok = true;
            for (std::size_t l = s; l < s + o.shots_per_video && ok; ++l) ok = lengths[l] >= o.frames_per_shot;
            if (ok) {
                candidates.push_back(v);
                break;
            }
        }
    }
    const std::size_t per_batch = std::min(o.videos_per_batch, candidates.size());
    if (per_batch == 0) throw std::invalid_argument("nn_class_match_fraction: no video holds a valid episode");

    struct FrameRef {
        std::size_t video;
        std::size_t frame_id;
    };
    std::vector<std::vector<FrameRef>> batches(o.batches);
    Rng rng = make_rng(o.seed, "nn-eval");
    // Videos come from a running shuffle, so no video repeats until all have been used.
    std::vector<std::size_t> order;
    std::size_t next = 0;
    auto draw_video = [&] {
        if (next == order.size()) {
            order = candidates;
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
            next = 0;
        }
        return order[next++];
    };
    for (auto& batch : batches) {
        for (std::size_t i = 0; i < per_batch; ++i) {
            const std::size_t v = draw_video();
            const auto& rec = corpus.record(v);
            const auto lengths = rec.shot_lengths();
            const Episode ep = sample_episode(lengths, o.shots_per_video, o.frames_per_shot, rng, rec.video_id);
            for (std::size_t l = 0; l < ep.shots.size(); ++l)
                for (auto pos : ep.frames[l]) batch.push_back({v, rec.frame_id(ep.shots[l], pos)});
        }
    }

    const std::size_t c = frozen.config().grid_channels;
    std::vector<std::vector<double>> rows(batches.size());
    std::vector<std::vector<int>> labels(batches.size());
    parallel_for(batches.size(), o.threads, [&](std::size_t b) {
        std::vector<Tensor> images;
        std::vector<BoxRef> refs;
        for (std::size_t f = 0; f < batches[b].size(); ++f) {
            const auto& fr = batches[b][f];
            images.push_back(corpus.image(fr.video, fr.frame_id));
            for (const auto& box : corpus.record(fr.video).boxes_of(fr.frame_id)) refs.push_back({f, box, {}});
        }
        if (refs.empty()) return;
        const GridBatch grids = encode_batch(images, frozen);
        const auto g = gather_box_embeddings(grids, refs, frozen, false, false, images[0].dim(0), images[0].dim(1));
        std::vector<double> raw(g.raw.data().begin(), g.raw.data().end());
        for (std::size_t r = 0; r < refs.size(); ++r) {
            std::span<double> row(raw.data() + r * c, c);
            const double norm = std::sqrt(kernels::dot(row, row));
            const double inv = 1.0 / std::max(norm, 1e-12);
            for (auto& x : row) x *= inv;
        }
        rows[b] = std::move(raw);
        labels[b] = g.set.labels;
    });

    std::vector<double> all;
    std::vector<int> all_labels;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        all.insert(all.end(), rows[b].begin(), rows[b].end());
        all_labels.insert(all_labels.end(), labels[b].begin(), labels[b].end());
    }
    if (all_labels.size() < 2) throw std::invalid_argument("nn_class_match_fraction: fewer than 2 boxes in the sample");
    NNResult r;
    r.boxes = all_labels.size();
    r.fraction = nn_match_fraction(all, c, all_labels, &r.matches);
    r.chance = chance_match_level(all_labels);
    return r;
}

// ---------------------------------------------------------------------------
// Linear probe

const char* probe_task_name(ProbeTask task) {
    switch (task) {
        case ProbeTask::category: return "category";
        case ProbeTask::count: return "count";
        case ProbeTask::quadrant: return "quadrant";
    }
    return "?";
}

ProbeTask parse_probe_task(const std::string& name) {
    for (auto t : {ProbeTask::category, ProbeTask::count, ProbeTask::quadrant})
        if (name == probe_task_name(t)) return t;
    throw std::invalid_argument("unknown probe task '" + name + "' (expected category, count or quadrant)");
}

std::size_t probe_classes(ProbeTask task, const SceneSpec& scene) {
    switch (task) {
        case ProbeTask::category: return static_cast<std::size_t>(scene.num_categories);
        case ProbeTask::count: return static_cast<std::size_t>(scene.objects_max - scene.objects_min + 1);
        case ProbeTask::quadrant: return 4;
    }
    return 0;
}

int probe_label(const StillSample& s, ProbeTask task, const SceneSpec& scene) {
    switch (task) {
        case ProbeTask::category: return s.category;
        case ProbeTask::count: return s.count - scene.objects_min;
        case ProbeTask::quadrant: return s.quadrant;
    }
    return 0;
}

Standardizer Standardizer::fit(const FeatureMatrix& x) {
    Standardizer s;
    s.mean.assign(x.dim, 0.0);
    s.inv_std.assign(x.dim, 1.0);
    if (x.rows == 0) return s;
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < x.dim; ++j) s.mean[j] += x.values[r * x.dim + j];
    for (auto& m : s.mean) m /= static_cast<double>(x.rows);
    std::vector<double> var(x.dim, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < x.dim; ++j) {
            const double d = x.values[r * x.dim + j] - s.mean[j];
            var[j] += d * d;
        }
    for (std::size_t j = 0; j < x.dim; ++j) {
        const double sd = std::sqrt(var[j] / static_cast<double>(x.rows));
        s.inv_std[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    return s;
}

FeatureMatrix Standardizer::apply(const FeatureMatrix& x) const {
    FeatureMatrix out = x;
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < x.dim; ++j) {
            double& v = out.values[r * x.dim + j];
            v = (v - mean[j]) * inv_std[j];
        }
    return out;
}

std::vector<int> LinearHead::predict(const FeatureMatrix& x) const {
    if (x.dim != dim) throw std::invalid_argument("LinearHead::predict: feature dimension mismatch");
    std::vector<double> logits(x.rows * classes);
    kernels::gemm_nn(x.rows, classes, dim, x.values, weights, logits, false);
    std::vector<int> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (logits[r * classes + c] + bias[c] > logits[r * classes + best] + bias[best]) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

LinearHead fit_linear_head(const FeatureMatrix& x, std::span<const int> labels, std::size_t classes, double lr,
                           const ProbeSchedule& schedule, double momentum, double decay_factor) {
    if (labels.size() != x.rows || x.rows == 0) throw std::invalid_argument("fit_linear_head: labels/features mismatch");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= classes) throw std::out_of_range("fit_linear_head: label out of range");
    LinearHead h;
    h.dim = x.dim;
    h.classes = classes;
    h.weights.assign(x.dim * classes, 0.0);
    h.bias.assign(classes, 0.0);
    std::vector<double> vw(h.weights.size(), 0.0), vb(classes, 0.0);
    std::vector<double> p(x.rows * classes), gw(h.weights.size()), gb(classes);
    const double inv_n = 1.0 / static_cast<double>(x.rows);
    for (std::size_t t = 0; t < schedule.steps; ++t) {
        const double rate =
            lr * std::pow(decay_factor, schedule.decay_every ? static_cast<double>(t / schedule.decay_every) : 0.0);
        kernels::gemm_nn(x.rows, classes, x.dim, x.values, h.weights, p, false);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t r = 0; r < x.rows; ++r) {
            double* row = p.data() + r * classes;
            double mx = -INFINITY;
            for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, row[c] += h.bias[c]);
            double z = 0.0;
            for (std::size_t c = 0; c < classes; ++c) z += row[c] = std::exp(row[c] - mx);
            for (std::size_t c = 0; c < classes; ++c) {
                row[c] = (row[c] / z - (static_cast<int>(c) == labels[r] ? 1.0 : 0.0)) * inv_n;
                gb[c] += row[c];
            }
        }
        kernels::gemm_tn(x.dim, classes, x.rows, x.values, p, gw, false);
        for (std::size_t i = 0; i < gw.size(); ++i) {
            vw[i] = momentum * vw[i] + gw[i];
            h.weights[i] -= rate * vw[i];
        }
        for (std::size_t c = 0; c < classes; ++c) {
            vb[c] = momentum * vb[c] + gb[c];
            h.bias[c] -= rate * vb[c];
        }
    }
    return h;
}

double accuracy(const LinearHead& head, const FeatureMatrix& x, std::span<const int> labels) {
    if (labels.size() != x.rows || x.rows == 0) throw std::invalid_argument("accuracy: labels/features mismatch");
    const auto pred = head.predict(x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace {

FeatureMatrix rows_of(const FeatureMatrix& x, std::size_t begin, std::size_t end) {
    FeatureMatrix out;
    out.dim = x.dim;
    out.rows = end - begin;
    out.values.assign(x.values.begin() + static_cast<std::ptrdiff_t>(begin * x.dim),
                      x.values.begin() + static_cast<std::ptrdiff_t>(end * x.dim));
    return out;
}

}  // namespace

ProbeFit fit_probe(const FeatureMatrix& train, std::span<const int> labels, std::size_t classes, const ProbeOptions& o) {
    if (train.rows != labels.size()) throw std::invalid_argument("fit_probe: labels/features mismatch");
    if (o.n_val == 0 || o.n_val >= train.rows) throw std::invalid_argument("fit_probe: validation split must be inside the training set");
    if (o.learning_rates.empty() || o.schedules.empty()) throw std::invalid_argument("fit_probe: empty sweep");
    const std::size_t n_fit = train.rows - o.n_val;
    const FeatureMatrix fit_raw = rows_of(train, 0, n_fit);
    const FeatureMatrix val_raw = rows_of(train, n_fit, train.rows);
    const Standardizer sel = Standardizer::fit(fit_raw);
    const FeatureMatrix fit_x = sel.apply(fit_raw), val_x = sel.apply(val_raw);
    const auto fit_y = labels.subspan(0, n_fit), val_y = labels.subspan(n_fit);

    // Lower learning rates first so ties resolve toward them.
    std::vector<std::size_t> lr_order(o.learning_rates.size());
    for (std::size_t i = 0; i < lr_order.size(); ++i) lr_order[i] = i;
    std::stable_sort(lr_order.begin(), lr_order.end(),
                     [&](std::size_t a, std::size_t b) { return o.learning_rates[a] < o.learning_rates[b]; });

    ProbeFit out;
    out.val_grid.assign(o.learning_rates.size() * o.schedules.size(), 0.0);
    double best = -1.0;
    std::size_t best_lr = 0, best_s = 0;
    for (auto li : lr_order)
        for (std::size_t si = 0; si < o.schedules.size(); ++si) {
            const auto head = fit_linear_head(fit_x, fit_y, classes, o.learning_rates[li], o.schedules[si], o.momentum,
                                              o.decay_factor);
            const double acc = accuracy(head, val_x, val_y);
            out.val_grid[li * o.schedules.size() + si] = acc;
            if (acc > best) {
                best = acc;
                best_lr = li;
                best_s = si;
            }
        }
    out.chosen_lr = o.learning_rates[best_lr];
    out.chosen_schedule = best_s;
    out.val_accuracy = best;
    out.standardizer = Standardizer::fit(train);
    out.head = fit_linear_head(out.standardizer.apply(train), labels, classes, out.chosen_lr, o.schedules[best_s],
                               o.momentum, o.decay_factor);
    return out;
}

FeatureMatrix extract_features(const ModelParams& params, std::span<const Tensor> images, std::size_t threads) {
    const ModelParams frozen = params.frozen();
    constexpr std::size_t kChunk = 64;
    const std::size_t c = frozen.config().grid_channels;
    FeatureMatrix out;
    out.rows = images.size();
    out.dim = c;
    out.values.assign(out.rows * c, 0.0);
    const std::size_t chunks = (images.size() + kChunk - 1) / kChunk;
    parallel_for(chunks, threads, [&](std::size_t k) {
        const std::size_t b = k * kChunk, e = std::min(images.size(), b + kChunk);
        const Tensor pooled = pool_frames(encode_batch(images.subspan(b, e - b), frozen));
        std::copy(pooled.data().begin(), pooled.data().end(), out.values.begin() + static_cast<std::ptrdiff_t>(b * c));
    });
    return out;
}

ProbeTaskData make_probe_task(ProbeTask task, const ProbeOptions& o) {
    o.scene.validate();
    if (o.n_train == 0 || o.n_test == 0) throw std::invalid_argument("make_probe_task: empty split");
    ProbeTaskData d;
    d.classes = probe_classes(task, o.scene);
    const auto train = generate_stills(o.scene, o.n_train, derive_seed(o.seed, "probe-train"), o.threads);
    const auto test = generate_stills(o.scene, o.n_test, derive_seed(o.seed, "probe-test"), o.threads);
    for (const auto& s : train) {
        d.train_images.push_back(s.image);
        d.train_labels.push_back(probe_label(s, task, o.scene));
    }
    for (const auto& s : test) {
        d.test_images.push_back(s.image);
        d.test_labels.push_back(probe_label(s, task, o.scene));
    }
    return d;
}

ProbeResult linear_probe_transfer(const ModelParams& params, const ProbeTaskData& d, const ProbeOptions& o) {
    const FeatureMatrix train = extract_features(params, d.train_images, o.threads);
    const FeatureMatrix test = extract_features(params, d.test_images, o.threads);
    ProbeResult r;
    r.fit = fit_probe(train, d.train_labels, d.classes, o);
    r.test_accuracy = accuracy(r.fit.head, r.fit.standardizer.apply(test), d.test_labels);
    r.chance = 1.0 / static_cast<double>(d.classes);
    return r;
}

ProbeResult linear_probe_transfer(const ModelParams& params, ProbeTask task, const ProbeOptions& o) {
    return linear_probe_transfer(params, make_probe_task(task, o), o);
}

// ---------------------------------------------------------------------------
// Perturbations

const char* perturb_name(PerturbKind kind) {
    switch (kind) {
        case PerturbKind::gaussian_noise: return "gaussian_noise";
        case PerturbKind::box_blur: return "box_blur";
        case PerturbKind::channel_shift: return "channel_shift";
    }
    return "?";
}

PerturbKind parse_perturb(const std::string& name) {
    for (auto k : {PerturbKind::gaussian_noise, PerturbKind::box_blur, PerturbKind::channel_shift})
        if (name == perturb_name(k)) return k;
    throw std::invalid_argument("unknown perturbation kind '" + name + "'");
}

std::vector<double> perturb_levels(PerturbKind kind) {
    switch (kind) {
        case PerturbKind::gaussian_noise: return {0.05, 0.1, 0.2};
        case PerturbKind::box_blur: return {3, 5, 7};
        case PerturbKind::channel_shift: return {0.1, 0.2, 0.3};
    }
    return {};
}

void validate_perturbation(const Perturbation& p) {
    const std::string name = perturb_name(p.kind);
    switch (p.kind) {
        case PerturbKind::gaussian_noise:
            if (!(p.level >= 0.0 && p.level <= 1.0)) throw std::invalid_argument(name + ": sigma must be in [0, 1]");
            break;
        case PerturbKind::box_blur: {
            const double k = p.level;
            if (!(k >= 1 && k <= 15) || k != std::floor(k) || static_cast<long>(k) % 2 == 0)
                throw std::invalid_argument(name + ": kernel must be an odd integer in [1, 15]");
            break;
        }
        case PerturbKind::channel_shift:
            if (!(p.level >= 0.0 && p.level <= 1.0)) throw std::invalid_argument(name + ": shift must be in [0, 1]");
            break;
    }
}

Tensor perturb_image(const Tensor& image, const Perturbation& p, Rng& rng) {
    validate_perturbation(p);
    if (image.rank() != 3) throw ShapeError("perturb_image", "image must be H x W x C, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    const auto src = image.data();
    std::vector<double> out(src.begin(), src.end());
    switch (p.kind) {
        case PerturbKind::gaussian_noise:
            if (p.level > 0)
                for (auto& v : out) v = std::clamp(v + normal(rng, 0.0, p.level), 0.0, 1.0);
            break;
        case PerturbKind::box_blur: {
            const auto r = static_cast<std::ptrdiff_t>(p.level) / 2;
            if (r == 0) break;
            const auto hi = static_cast<std::ptrdiff_t>(h), wi = static_cast<std::ptrdiff_t>(w);
            const double inv = 1.0 / static_cast<double>((2 * r + 1) * (2 * r + 1));
            for (std::ptrdiff_t y = 0; y < hi; ++y)
                for (std::ptrdiff_t x = 0; x < wi; ++x)
                    for (std::size_t k = 0; k < c; ++k) {
                        double acc = 0.0;
                        for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
                            for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
                                const auto yy = std::clamp<std::ptrdiff_t>(y + dy, 0, hi - 1);
                                const auto xx = std::clamp<std::ptrdiff_t>(x + dx, 0, wi - 1);
                                acc += src[(static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * c + k];
                            }
                        out[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c + k] =
                            std::clamp(acc * inv, 0.0, 1.0);
                    }
            break;
        }
        case PerturbKind::channel_shift:
            if (c < 3) throw ShapeError("perturb_image", "channel_shift needs 3 channels");
            for (std::size_t i = 0; i < h * w; ++i) {
                out[i * c] = std::clamp(out[i * c] + p.level, 0.0, 1.0);
                out[i * c + 2] = std::clamp(out[i * c + 2] - p.level, 0.0, 1.0);
            }
            break;
    }
    return Tensor::from(image.shape(), std::move(out));
}

std::vector<Tensor> perturb_dataset(std::span<const Tensor> images, const Perturbation& p, std::uint64_t seed,
                                    std::size_t threads) {
    validate_perturbation(p);
    std::vector<Tensor> out(images.size());
    parallel_for(images.size(), threads, [&](std::size_t i) {
        Rng rng = make_rng(seed, perturb_name(p.kind), i);
        out[i] = perturb_image(images[i], p, rng);
    });
    return out;
}

std::vector<RobustnessRow> robustness_delta(const ModelParams& params, ProbeTask task,
                                            std::span<const Perturbation> perturbations, const ProbeOptions& o) {
    for (const auto& p : perturbations) validate_perturbation(p);
    const ProbeTaskData d = make_probe_task(task, o);
    const ProbeResult clean = linear_probe_transfer(params, d, o);
    std::vector<RobustnessRow> rows;
    for (const auto& p : perturbations) {
        const auto images = perturb_dataset(d.test_images, p, derive_seed(o.seed, "perturb"), o.threads);
        const FeatureMatrix x = clean.fit.standardizer.apply(extract_features(params, images, o.threads));
        RobustnessRow row;
        row.perturbation = p;
        row.clean_accuracy = clean.test_accuracy;
        row.perturbed_accuracy = accuracy(clean.fit.head, x, d.test_labels);
        row.delta = row.clean_accuracy - row.perturbed_accuracy;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace hiervid
