#include "hiervid/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hiervid/losses.hpp"
#include "hiervid/ops.hpp"
#include "hiervid/parallel.hpp"
#include "hiervid/pooling.hpp"
#include "hiervid/rng.hpp"
#include "hiervid/synth.hpp"

namespace hiervid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kDiagnosticInterval = 100;

std::string ckpt_name(std::size_t step) { return "ckpt_" + std::to_string(step) + ".hvt"; }

json digest_view(const TrainConfig& c) {
    json j = to_json(c);
    // Neither field changes what a run computes.
    j.erase("threads");
    j.erase("out_dir");
    return j;
}

struct CropPlan {
    bool flip = false;
    bool crop = false;
    double scale = 1.0;
    double ox = 0.0;
    double oy = 0.0;
};

Tensor transform_image(const Tensor& img, const CropPlan& plan) {
    const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    const auto src = img.data();
    std::vector<double> out(src.size());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double sy = static_cast<double>(y), sx = static_cast<double>(x);
            if (plan.crop) {
                sy = (plan.oy + (sy + 0.5) / static_cast<double>(h) * plan.scale) * static_cast<double>(h);
                sx = (plan.ox + (sx + 0.5) / static_cast<double>(w) * plan.scale) * static_cast<double>(w);
            }
            auto iy = std::min(h - 1, static_cast<std::size_t>(std::max(0.0, std::floor(sy))));
            auto ix = std::min(w - 1, static_cast<std::size_t>(std::max(0.0, std::floor(sx))));
            if (plan.flip) ix = w - 1 - ix;
            for (std::size_t k = 0; k < c; ++k) out[(y * w + x) * c + k] = src[(iy * w + ix) * c + k];
        }
    return Tensor::from(img.shape(), std::move(out));
}

std::vector<DetectedBox> transform_boxes(const std::vector<DetectedBox>& boxes, const CropPlan& plan) {
    std::vector<DetectedBox> out;
    for (auto b : boxes) {
        if (plan.crop) {
            const double cx = b.bbox.center_x(), cy = b.bbox.center_y();
            if (cx < plan.ox || cx > plan.ox + plan.scale || cy < plan.oy || cy > plan.oy + plan.scale) continue;
            auto map = [&](double v, double o) { return std::clamp((v - o) / plan.scale, 0.0, 1.0); };
            b.bbox = {map(b.bbox.x_min, plan.ox), map(b.bbox.y_min, plan.oy), map(b.bbox.x_max, plan.ox),
                      map(b.bbox.y_max, plan.oy)};
            if (b.bbox.width() < kMinBoxSide || b.bbox.height() < kMinBoxSide) continue;
        }
        if (plan.flip) b.bbox = {1.0 - b.bbox.x_max, b.bbox.y_min, 1.0 - b.bbox.x_min, b.bbox.y_max};
        out.push_back(b);
    }
    return out;
}

bool has_episode(const std::vector<std::size_t>& lengths, std::size_t shots, std::size_t frames) {
    for (std::size_t s = 0; s + shots <= lengths.size(); ++s) {
        bool ok = true;
        for (std::size_t l = s; l < s + shots && ok; ++l) ok = lengths[l] >= frames;
        if (ok) return true;
    }
    return false;
}

void accumulate(StepLog& acc, const StepLog& s) {
    acc.lr += s.lr;
    acc.total += s.total;
    acc.shot += s.shot;
    acc.frame += s.frame;
    acc.object += s.object;
    acc.supervised += s.supervised;
    acc.bce += s.bce;
    acc.frame_triplets += s.frame_triplets;
    acc.frame_skipped += s.frame_skipped;
    acc.object_triplets += s.object_triplets;
    acc.object_skipped += s.object_skipped;
    acc.boxes += s.boxes;
}

StepLog interval_mean(StepLog acc, std::size_t n, std::size_t end_step) {
    const double k = 1.0 / static_cast<double>(n);
    acc.step = end_step;
    acc.lr *= k;
    acc.total *= k;
    acc.shot *= k;
    acc.frame *= k;
    acc.object *= k;
    acc.supervised *= k;
    acc.bce *= k;
    return acc;
}

}  // namespace

double lr_at(std::size_t step, double lr0, std::span<const std::size_t> decay_steps, double factor) {
    double lr = lr0;
    for (auto b : decay_steps)
        if (step >= b) lr *= factor;
    return lr;
}

void sgd_momentum_step(std::span<double> weights, std::span<const double> grads, std::span<double> velocity, double lr,
                       double momentum, const std::string& name) {
    if (weights.size() != grads.size() || weights.size() != velocity.size())
        throw ShapeError("sgd_momentum_step", name + ": weights, gradients and velocity differ in length");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i])) {
            std::ostringstream os;
            os << "non-finite gradient in " << name << " at entry " << i << " (value " << grads[i] << ")";
            throw TrainingError(os.str());
        }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grads[i];
        weights[i] -= lr * velocity[i];
    }
}

json StepLog::to_json() const {
    return {{"step", step},
            {"lr", lr},
            {"total", total},
            {"L_shot", shot},
            {"L_frame", frame},
            {"L_object", object},
            {"L_supervised", supervised},
            {"L_bce", bce},
            {"frame_triplets", frame_triplets},
            {"frame_skipped", frame_skipped},
            {"object_triplets", object_triplets},
            {"object_skipped", object_skipped},
            {"boxes", boxes},
            {"object_empty", object_empty}};
}

TermWeights term_weights(const TrainConfig& c) {
    TermWeights w;
    w.object = c.weights.omega;
    w.frame = 1.0;
    w.shot = c.weights.beta;
    w.supervised = c.weights.gamma;
    switch (c.ablation) {
        case Ablation::baseline_vivi: w.object = 0.0; break;
        case Ablation::bce_added: w.bce = c.weights.bce_weight; break;
        case Ablation::bce_replaces_object:
            w.object = 0.0;
            w.bce = c.weights.bce_weight;
            break;
        case Ablation::object_only:
            w.frame = 0.0;
            w.shot = 0.0;
            break;
        default: break;
    }
    return w;
}

double weighted_total(const StepLog& s, const TermWeights& w) {
    return w.object * s.object + w.frame * s.frame + w.shot * s.shot + w.supervised * s.supervised + w.bce * s.bce;
}

json RunReport::to_json() const {
    json iv = json::array();
    for (const auto& s : intervals) iv.push_back(s.to_json());
    return {{"steps", steps},
            {"final", final_step.to_json()},
            {"wall_seconds", wall_seconds},
            {"checkpoint_digest", checkpoint_digest},
            {"checkpoint", checkpoint.string()},
            {"intervals", iv}};
}

fs::path sidecar_path(const fs::path& hvt_path) {
    fs::path p = hvt_path;
    p.replace_extension(".json");
    return p;
}

std::string checkpoint_digest(const fs::path& hvt_path) {
    std::ifstream in(hvt_path, std::ios::binary);
    if (!in) throw MissingFileError(hvt_path);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex64(fnv1a64(bytes));
}

LoadedCheckpoint load_checkpoint(const fs::path& hvt_path) {
    if (!fs::exists(hvt_path)) throw MissingFileError(hvt_path);
    const fs::path side = sidecar_path(hvt_path);
    if (!fs::exists(side)) throw MissingFileError(side);
    const json meta = read_json_file(side);
    LoadedCheckpoint out{ModelParams::init(model_config_from_json(meta.at("config").at("model")), 0), {}, {}};
    out.meta.step = meta.at("step").get<std::size_t>();
    out.meta.config_digest = meta.at("config_digest").get<std::string>();
    out.meta.config = meta.at("config");
    out.meta.rng_states = meta.at("rng");
    const auto entries = hvt1::read_file(hvt_path);
    out.params = ModelParams::from_entries(out.params.config(), entries);
    for (const auto& e : entries)
        if (e.name.rfind("opt.v.", 0) == 0) out.velocity.push_back(e);
    return out;
}

Trainer::Trainer(TrainConfig config, std::shared_ptr<const Corpus> corpus)
    : config_(std::move(config)),
      corpus_(std::move(corpus)),
      params_(ModelParams::init(config_.model, config_.seed)),
      config_digest_(hiervid::config_digest(digest_view(config_))),
      sampler_(make_rng(config_.seed, "sampler")),
      ablation_(make_rng(config_.seed, "ablation")),
      augment_(make_rng(config_.seed, "augment")),
      cotrain_(make_rng(config_.seed, "cotrain")) {
    if (!corpus_) throw TrainingError("no corpus");
    for (const auto& [name, t] : params_.named()) velocity_.emplace_back(t.numel(), 0.0);
    for (std::size_t v = 0; v < corpus_->size(); ++v)
        if (has_episode(corpus_->record(v).shot_lengths(), config_.shots_per_video, config_.frames_per_shot))
            candidates_.push_back(v);
    if (candidates_.size() < config_.videos_per_batch)
        throw TrainingError("only " + std::to_string(candidates_.size()) + " videos hold " +
                            std::to_string(config_.shots_per_video) + " consecutive shots of >= " +
                            std::to_string(config_.frames_per_shot) + " frames; need " +
                            std::to_string(config_.videos_per_batch));
    if (corpus_->options().num_categories != config_.model.num_categories)
        throw TrainingError("corpus has " + std::to_string(corpus_->options().num_categories) +
                            " categories, model expects " + std::to_string(config_.model.num_categories));
}

void Trainer::resume(const fs::path& checkpoint) {
    auto loaded = load_checkpoint(checkpoint);
    if (loaded.meta.config_digest != config_digest_)
        throw TrainingError("checkpoint " + checkpoint.string() + " was written by a different configuration (digest " +
                            loaded.meta.config_digest + ", current " + config_digest_ + ")");
    params_ = std::move(loaded.params);
    const auto& named = params_.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto it = std::find_if(loaded.velocity.begin(), loaded.velocity.end(),
                                     [&](const hvt1::Entry& e) { return e.name == "opt.v." + named[i].first; });
        if (it == loaded.velocity.end()) throw TrainingError("checkpoint lacks optimizer state for " + named[i].first);
        if (it->values.size() != velocity_[i].size())
            throw TrainingError("optimizer state for " + named[i].first + " has the wrong size");
        velocity_[i] = it->values;
    }
    step_ = loaded.meta.step;
    const auto& r = loaded.meta.rng_states;
    set_rng_state(sampler_, r.at("sampler").get<std::string>());
    set_rng_state(ablation_, r.at("ablation").get<std::string>());
    set_rng_state(augment_, r.at("augment").get<std::string>());
    set_rng_state(cotrain_, r.at("cotrain").get<std::string>());
}

BatchInputs Trainer::assemble() {
    const std::size_t n = config_.videos_per_batch, l_count = config_.shots_per_video, k_count = config_.frames_per_shot;
    std::vector<std::size_t> pool = candidates_;
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<std::size_t>(uniform_int(sampler_, static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(pool.size()) - 1));
        std::swap(pool[i], pool[j]);
        chosen.push_back(pool[i]);
    }

    struct Slot {
        std::size_t video;
        std::size_t frame_id;
        CropPlan plan;
    };
    std::vector<Slot> slots;
    BatchInputs b;
    b.videos = n;
    b.shots = l_count;
    b.frames = k_count;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = corpus_->record(chosen[i]);
        const auto lengths = rec.shot_lengths();
        const Episode ep = sample_episode(lengths, l_count, k_count, sampler_, rec.video_id);
        for (std::size_t l = 0; l < l_count; ++l)
            for (std::size_t k = 0; k < k_count; ++k) {
                const std::size_t fid = rec.frame_id(ep.shots[l], ep.frames[l][k]);
                slots.push_back({chosen[i], fid, {}});
                b.keys.push_back({i, l, k});
                b.boxes.push_back(rec.boxes_of(fid));
            }
    }

    const int nc = config_.model.num_categories;
    for (auto& boxes : b.boxes) {
        switch (config_.ablation) {
            case Ablation::random_labels: boxes = randomize_labels(boxes, nc, ablation_); break;
            case Ablation::random_boxes: boxes = randomize_boxes(boxes, ablation_); break;
            case Ablation::random_both:
                boxes = randomize_labels(boxes, nc, ablation_);
                boxes = randomize_boxes(boxes, ablation_);
                break;
            default: break;
        }
    }

    for (std::size_t s = 0; s < slots.size(); ++s) {
        auto& plan = slots[s].plan;
        if (config_.augment.flip) plan.flip = bernoulli(augment_, 0.5);
        if (config_.augment.crop) {
            plan.crop = true;
            plan.scale = uniform(augment_, config_.augment.crop_min_scale, 1.0);
            plan.ox = uniform(augment_, 0.0, 1.0 - plan.scale);
            plan.oy = uniform(augment_, 0.0, 1.0 - plan.scale);
        }
        if (plan.flip || plan.crop) b.boxes[s] = transform_boxes(b.boxes[s], plan);
    }

    b.images.resize(slots.size());
    parallel_for(slots.size(), config_.threads, [&](std::size_t s) {
        Tensor img = corpus_->image(slots[s].video, slots[s].frame_id);
        if (slots[s].plan.flip || slots[s].plan.crop) img = transform_image(img, slots[s].plan);
        b.images[s] = std::move(img);
    });

    if (config_.weights.gamma > 0) {
        const std::size_t count = n * config_.cotrain.stills_per_video;
        for (std::size_t i = 0; i < count; ++i) {
            auto still = generate_still(config_.scene, cotrain_);
            b.stills.push_back(std::move(still.image));
            b.still_labels.push_back(still.category);
        }
    }
    return b;
}

BatchLoss batch_loss(const ModelParams& params, const BatchInputs& b, const TrainConfig& config) {
    const std::size_t n = b.videos, l_count = b.shots, k_count = b.frames;
    if (n * l_count * k_count != b.images.size() || b.boxes.size() != b.images.size() || b.keys.size() != b.images.size())
        throw ShapeError("batch_loss", "batch holds " + std::to_string(b.images.size()) + " images for " +
                                           std::to_string(n) + " x " + std::to_string(l_count) + " x " +
                                           std::to_string(k_count));
    const TermWeights w = term_weights(config);
    BatchLoss out;
    StepLog& log = out.log;

    const GridBatch grids = encode_batch(b.images, params);
    const Tensor f = frame_representations(grids, params, false);

    EmbeddingSet frames;
    frames.embeddings = l2_normalize(f, 1);
    frames.normalized = true;
    frames.keys = b.keys;
    for (const auto& k : b.keys) frames.labels.push_back(static_cast<int>(k.video * l_count + k.shot));
    const LossTerm lf = frame_loss(frames, config.weights.margin_frame);

    // Shot representations per slot l: [N, repr].
    std::vector<Tensor> shots;
    for (std::size_t l = 0; l < l_count; ++l) {
        std::vector<Tensor> members;
        for (std::size_t k = 0; k < k_count; ++k) {
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < n; ++i) rows.push_back((i * l_count + l) * k_count + k);
            members.push_back(gather_rows(f, rows));
        }
        shots.push_back(aggregate_shot(members));
    }
    std::vector<Tensor> preds, targets;
    for (std::size_t prefix = 1; prefix < l_count; ++prefix) {
        const std::size_t m = std::min(config.prediction_steps, l_count - prefix);
        const auto p = predict_next_shots(std::span<const Tensor>(shots.data(), prefix), params, m);
        for (std::size_t k = 0; k < m; ++k) {
            preds.push_back(p[k]);
            targets.push_back(shots[prefix + k]);
        }
    }
    const Tensor ls = shot_infonce(preds, targets, params);

    std::vector<BoxRef> refs;
    for (std::size_t s = 0; s < b.images.size(); ++s)
        for (const auto& box : b.boxes[s]) refs.push_back({s, box, b.keys[s]});
    log.boxes = refs.size();
    LossTerm lo;
    GatheredBoxes gathered;
    if (!refs.empty()) {
        gathered = gather_box_embeddings(grids, refs, params, config.model.project_objects, config.normalize_objects,
                                         b.images[0].dim(0), b.images[0].dim(1));
        lo = object_loss(gathered.set, config.weights.margin_object, config.object_pool);
    } else {
        lo.value = Tensor::scalar(0.0);
        lo.empty = true;
    }

    Tensor& total = out.total;
    auto add_term = [&](double weight, const Tensor& term) {
        if (weight == 0.0) return;
        const Tensor t = scale(term, weight);
        total = total.defined() ? add(total, t) : t;
    };
    add_term(w.object, lo.value);
    add_term(w.frame, lf.value);
    add_term(w.shot, ls);
    if (w.bce > 0 && !refs.empty()) {
        const Tensor bce = object_bce(gathered.raw, gathered.set.labels, params);
        log.bce = bce.item();
        add_term(w.bce, bce);
    }
    if (w.supervised > 0 && !b.stills.empty()) {
        const GridBatch sg = encode_batch(b.stills, params);
        const Tensor sup = supervised_ce(pool_frames(sg), b.still_labels, params);
        log.supervised = sup.item();
        add_term(w.supervised, sup);
    }

    log.shot = ls.item();
    log.frame = lf.value.item();
    log.object = lo.value.item();
    log.object_empty = lo.empty;
    log.frame_triplets = lf.triplets;
    log.frame_skipped = lf.skipped;
    log.object_triplets = lo.triplets;
    log.object_skipped = lo.skipped;
    log.total = total.defined() ? total.item() : 0.0;
    return out;
}

StepLog Trainer::step() {
    const BatchInputs b = assemble();
    params_.zero_grad();
    BatchLoss loss = batch_loss(params_, b, config_);
    StepLog log = loss.log;
    log.lr = lr_at(step_, config_.optimizer.lr0, config_.optimizer.decay_steps, config_.optimizer.decay_factor);
    if (!std::isfinite(log.total))
        throw TrainingError("non-finite loss at step " + std::to_string(step_ + 1) + "; last checkpoint left untouched");

    if (loss.total.defined() && loss.total.requires_grad()) backward(loss.total);

    const auto& named = params_.named();
    for (const auto& [name, t] : named)
        if (t.has_grad())
            for (double g : t.grad())
                if (!std::isfinite(g))
                    throw TrainingError("non-finite gradient in " + name + " at step " + std::to_string(step_ + 1));
    std::vector<double> zeros;
    for (std::size_t i = 0; i < named.size(); ++i) {
        Tensor t = named[i].second;
        std::span<const double> g;
        if (t.has_grad()) {
            g = t.grad();
        } else {
            zeros.assign(t.numel(), 0.0);
            g = zeros;
        }
        sgd_momentum_step(t.leaf_data(), g, velocity_[i], log.lr, config_.optimizer.momentum, named[i].first);
    }
    ++step_;
    log.step = step_;
    return log;
}

fs::path Trainer::save_checkpoint() const {
    fs::create_directories(config_.out_dir);
    const fs::path path = fs::path(config_.out_dir) / ckpt_name(step_);
    auto entries = params_.to_entries();
    const auto& named = params_.named();
    for (std::size_t i = 0; i < named.size(); ++i)
        entries.push_back({"opt.v." + named[i].first, named[i].second.shape(), velocity_[i]});
    hvt1::write_file(path, entries);
    const json meta = {{"step", step_},
                       {"config_digest", config_digest_},
                       {"config", to_json(config_)},
                       {"rng",
                        {{"sampler", rng_state(sampler_)},
                         {"ablation", rng_state(ablation_)},
                         {"augment", rng_state(augment_)},
                         {"cotrain", rng_state(cotrain_)}}}};
    std::ofstream out(sidecar_path(path));
    out << meta.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + sidecar_path(path).string());
    return path;
}

RunReport Trainer::run(const std::function<void(const StepLog&)>& on_step) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = config_.out_dir;
    fs::create_directories(dir);
    {
        std::ofstream cfg(dir / "config.json");
        cfg << to_json(config_).dump(2) << '\n';
    }
    // Drop log lines past the resume point so the log matches an uninterrupted run.
    std::vector<std::string> kept;
    if (step_ > 0) {
        std::ifstream old(dir / "log.jsonl");
        for (std::string line; std::getline(old, line);) {
            if (line.empty()) continue;
            if (json::parse(line).at("step").get<std::size_t>() <= step_) kept.push_back(line);
        }
    }
    std::ofstream log_file(dir / "log.jsonl", std::ios::trunc);
    for (const auto& line : kept) log_file << line << '\n';

    RunReport report;
    StepLog acc;
    std::size_t acc_n = 0;
    std::optional<fs::path> last_saved;
    while (step_ < config_.total_steps) {
        const StepLog s = step();
        report.final_step = s;
        if (s.step % config_.log_every == 0) {
            log_file << s.to_json().dump() << '\n';
            log_file.flush();
        }
        if (on_step) on_step(s);
        accumulate(acc, s);
        ++acc_n;
        if (s.step % kDiagnosticInterval == 0 || s.step == config_.total_steps) {
            report.intervals.push_back(interval_mean(acc, acc_n, s.step));
            acc = StepLog{};
            acc_n = 0;
        }
        if (config_.checkpoint_every > 0 && s.step % config_.checkpoint_every == 0) last_saved = save_checkpoint();
    }
    if (!last_saved || last_saved->filename() != ckpt_name(step_)) last_saved = save_checkpoint();
    report.steps = step_;
    report.checkpoint = *last_saved;
    report.checkpoint_digest = checkpoint_digest(*last_saved);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

RunReport train(const TrainConfig& config, std::shared_ptr<const Corpus> corpus, const std::optional<fs::path>& resume) {
    Trainer trainer(config, std::move(corpus));
    if (resume) trainer.resume(*resume);
    return trainer.run();
}

RunReport train(const TrainConfig& config, const std::optional<fs::path>& resume) {
    if (config.corpus.empty()) throw TrainingError("config names no corpus");
    auto corpus = std::make_shared<const Corpus>(Corpus::load(config.corpus, config.corpus_options));
    return train(config, std::move(corpus), resume);
}

}  // namespace hiervid
