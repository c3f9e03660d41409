#include "hiervid/config.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "hiervid/rng.hpp"

namespace hiervid {

using nlohmann::json;

namespace {

std::string join_errors(const std::vector<std::string>& errors) {
    std::string s = "invalid configuration:";
    for (const auto& e : errors) s += "\n  " + e;
    return s;
}

/// Reads fields from one JSON object, recording type errors and unknown keys
/// under their dotted paths instead of throwing.
class Fields {
  public:
    Fields(const json& j, std::string path, std::vector<std::string>& errors)
        : j_(j), path_(std::move(path)), errors_(errors) {
        if (!j_.is_null() && !j_.is_object()) errors_.push_back(where("") + ": expected an object");
    }
    ~Fields() = default;

    std::string where(const std::string& key) const {
        if (key.empty()) return path_.empty() ? "<root>" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        if (!j_.is_object()) return nullptr;
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void num(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (v->is_number()) out = v->get<double>();
            else errors_.push_back(where(key) + ": expected a number");
        }
    }
    void count(const std::string& key, std::size_t& out) {
        if (const json* v = find(key)) {
            if (v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0))
                out = v->get<std::size_t>();
            else errors_.push_back(where(key) + ": expected a non-negative integer");
        }
    }
    void u64(const std::string& key, std::uint64_t& out) {
        if (const json* v = find(key)) {
            if (v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0))
                out = v->get<std::uint64_t>();
            else errors_.push_back(where(key) + ": expected a non-negative integer");
        }
    }
    void integer(const std::string& key, int& out) {
        if (const json* v = find(key)) {
            if (v->is_number_integer()) out = v->get<int>();
            else errors_.push_back(where(key) + ": expected an integer");
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (v->is_boolean()) out = v->get<bool>();
            else errors_.push_back(where(key) + ": expected a boolean");
        }
    }
    void text(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (v->is_string()) out = v->get<std::string>();
            else errors_.push_back(where(key) + ": expected a string");
        }
    }
    void counts(const std::string& key, std::vector<std::size_t>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) {
                errors_.push_back(where(key) + ": expected an array of non-negative integers");
                return;
            }
            out.clear();
            for (std::size_t i = 0; i < v->size(); ++i) {
                const json& e = (*v)[i];
                if (e.is_number_unsigned() || (e.is_number_integer() && e.get<std::int64_t>() >= 0))
                    out.push_back(e.get<std::size_t>());
                else errors_.push_back(where(key) + "[" + std::to_string(i) + "]: expected a non-negative integer");
            }
        }
    }
    const json& child(const std::string& key) {
        static const json null_json;
        const json* v = find(key);
        return v ? *v : null_json;
    }

    void check_unknown() {
        if (!j_.is_object()) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) errors_.push_back(where(it.key()) + ": unknown field");
    }

    void require(bool ok, const std::string& key, const std::string& message) {
        if (!ok) errors_.push_back(where(key) + ": " + message);
    }

  private:
    const json& j_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

void read_scene(const json& j, const std::string& path, SceneSpec& s, std::vector<std::string>& errors) {
    Fields f(j, path, errors);
    f.integer("num_categories", s.num_categories);
    f.integer("objects_min", s.objects_min);
    f.integer("objects_max", s.objects_max);
    f.num("scale_min", s.scale_min);
    f.num("scale_max", s.scale_max);
    f.num("max_speed", s.max_speed);
    f.num("camera_jitter", s.camera_jitter);
    f.boolean("background_solid", s.background_solid);
    f.boolean("background_gradient", s.background_gradient);
    f.boolean("background_noise", s.background_noise);
    f.integer("shot_length_min", s.shot_length_min);
    f.integer("shot_length_max", s.shot_length_max);
    f.integer("shots_min", s.shots_min);
    f.integer("shots_max", s.shots_max);
    f.count("image_size", s.image_size);
    f.count("channels", s.channels);
    f.check_unknown();
    f.require(s.num_categories >= 1, "num_categories", "must be at least 1");
    f.require(s.objects_min >= 1, "objects_min", "must be at least 1");
    f.require(s.objects_max >= s.objects_min, "objects_max", "must be >= objects_min");
    f.require(s.scale_min > 0 && s.scale_min <= 1, "scale_min", "must be in (0, 1]");
    f.require(s.scale_max >= s.scale_min && s.scale_max <= 1, "scale_max", "must be in [scale_min, 1]");
    f.require(s.max_speed >= 0, "max_speed", "must be non-negative");
    f.require(s.camera_jitter >= 0, "camera_jitter", "must be non-negative");
    f.require(s.background_solid || s.background_gradient || s.background_noise, "background_solid",
              "at least one background kind must be enabled");
    f.require(s.shot_length_min >= 1, "shot_length_min", "must be at least 1");
    f.require(s.shot_length_max >= s.shot_length_min, "shot_length_max", "must be >= shot_length_min");
    f.require(s.shots_min >= 1, "shots_min", "must be at least 1");
    f.require(s.shots_max >= s.shots_min, "shots_max", "must be >= shots_min");
    f.require(s.image_size >= 8, "image_size", "must be at least 8");
    f.require(s.channels == 3, "channels", "only 3-channel images are rendered");
}

void read_noise(const json& j, const std::string& path, DetectorNoise& n, std::vector<std::string>& errors) {
    Fields f(j, path, errors);
    f.num("label_flip_prob", n.label_flip_prob);
    f.num("box_jitter_std", n.box_jitter_std);
    f.num("miss_prob", n.miss_prob);
    f.num("score_correct_mean", n.score_correct_mean);
    f.num("score_correct_std", n.score_correct_std);
    f.num("score_flipped_mean", n.score_flipped_mean);
    f.num("score_flipped_std", n.score_flipped_std);
    f.check_unknown();
    f.require(n.label_flip_prob >= 0 && n.label_flip_prob <= 1, "label_flip_prob", "must be in [0, 1]");
    f.require(n.miss_prob >= 0 && n.miss_prob <= 1, "miss_prob", "must be in [0, 1]");
    f.require(n.box_jitter_std >= 0, "box_jitter_std", "must be non-negative");
    f.require(n.score_correct_std >= 0, "score_correct_std", "must be non-negative");
    f.require(n.score_flipped_std >= 0, "score_flipped_std", "must be non-negative");
}

void read_model(const json& j, const std::string& path, ModelConfig& m, std::vector<std::string>& errors) {
    Fields f(j, path, errors);
    f.count("image_size", m.image_size);
    f.count("channels", m.channels);
    f.count("stride", m.stride);
    f.count("grid_channels", m.grid_channels);
    f.count("blocks", m.blocks);
    f.count("mlp_hidden", m.mlp_hidden);
    f.count("embed_dim", m.embed_dim);
    f.count("head_hidden", m.head_hidden);
    f.count("lstm_hidden", m.lstm_hidden);
    f.integer("num_categories", m.num_categories);
    f.boolean("project_frames", m.project_frames);
    f.boolean("project_objects", m.project_objects);
    f.check_unknown();
    f.require(m.stride > 0 && m.image_size > 0 && m.image_size % m.stride == 0, "stride",
              "image_size must be a positive multiple of stride");
    f.require(m.channels > 0, "channels", "must be positive");
    f.require(m.grid_channels > 0, "grid_channels", "must be positive");
    f.require(m.mlp_hidden > 0, "mlp_hidden", "must be positive");
    f.require(m.embed_dim > 0, "embed_dim", "must be positive");
    f.require(m.head_hidden > 0, "head_hidden", "must be positive");
    f.require(m.lstm_hidden > 0, "lstm_hidden", "must be positive");
    f.require(m.num_categories >= 1, "num_categories", "must be at least 1");
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors) : std::runtime_error(join_errors(errors)), errors_(std::move(errors)) {}

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::random_labels: return "random_labels";
        case Ablation::random_boxes: return "random_boxes";
        case Ablation::random_both: return "random_both";
        case Ablation::bce_added: return "bce_added";
        case Ablation::bce_replaces_object: return "bce_replaces_object";
        case Ablation::object_only: return "object_only";
        case Ablation::baseline_vivi: return "baseline_vivi";
    }
    return "?";
}

Ablation parse_ablation(const std::string& name) {
    for (Ablation a : {Ablation::none, Ablation::random_labels, Ablation::random_boxes, Ablation::random_both,
                       Ablation::bce_added, Ablation::bce_replaces_object, Ablation::object_only, Ablation::baseline_vivi})
        if (name == ablation_name(a)) return a;
    throw std::invalid_argument("unknown ablation mode '" + name + "'");
}

json to_json(const SceneSpec& s) {
    return {{"num_categories", s.num_categories},
            {"objects_min", s.objects_min},
            {"objects_max", s.objects_max},
            {"scale_min", s.scale_min},
            {"scale_max", s.scale_max},
            {"max_speed", s.max_speed},
            {"camera_jitter", s.camera_jitter},
            {"background_solid", s.background_solid},
            {"background_gradient", s.background_gradient},
            {"background_noise", s.background_noise},
            {"shot_length_min", s.shot_length_min},
            {"shot_length_max", s.shot_length_max},
            {"shots_min", s.shots_min},
            {"shots_max", s.shots_max},
            {"image_size", s.image_size},
            {"channels", s.channels}};
}

json to_json(const DetectorNoise& n) {
    return {{"label_flip_prob", n.label_flip_prob},
            {"box_jitter_std", n.box_jitter_std},
            {"miss_prob", n.miss_prob},
            {"score_correct_mean", n.score_correct_mean},
            {"score_correct_std", n.score_correct_std},
            {"score_flipped_mean", n.score_flipped_mean},
            {"score_flipped_std", n.score_flipped_std}};
}

json to_json(const ModelConfig& m) {
    return {{"image_size", m.image_size},
            {"channels", m.channels},
            {"stride", m.stride},
            {"grid_channels", m.grid_channels},
            {"blocks", m.blocks},
            {"mlp_hidden", m.mlp_hidden},
            {"embed_dim", m.embed_dim},
            {"head_hidden", m.head_hidden},
            {"lstm_hidden", m.lstm_hidden},
            {"num_categories", m.num_categories},
            {"project_frames", m.project_frames},
            {"project_objects", m.project_objects}};
}

ModelConfig model_config_from_json(const json& j) {
    std::vector<std::string> errors;
    ModelConfig m;
    read_model(j, "model", m, errors);
    if (!errors.empty()) throw ConfigError(errors);
    return m;
}

TrainConfig train_config_from_json(const json& j) {
    std::vector<std::string> errors;
    TrainConfig c;
    Fields f(j, "", errors);
    f.text("corpus", c.corpus);
    {
        Fields o(f.child("corpus_options"), "corpus_options", errors);
        o.num("score_threshold", c.corpus_options.score_threshold);
        o.count("max_boxes", c.corpus_options.max_boxes);
        o.integer("num_categories", c.corpus_options.num_categories);
        o.check_unknown();
        o.require(c.corpus_options.score_threshold >= 0 && c.corpus_options.score_threshold <= 1, "score_threshold",
                  "must be in [0, 1]");
        o.require(c.corpus_options.max_boxes >= 1, "max_boxes", "must be at least 1");
        o.require(c.corpus_options.num_categories >= 1, "num_categories", "must be at least 1");
    }
    read_model(f.child("model"), "model", c.model, errors);
    f.count("videos_per_batch", c.videos_per_batch);
    f.count("shots_per_video", c.shots_per_video);
    f.count("frames_per_shot", c.frames_per_shot);
    f.count("prediction_steps", c.prediction_steps);
    {
        Fields w(f.child("weights"), "weights", errors);
        w.num("omega", c.weights.omega);
        w.num("beta", c.weights.beta);
        w.num("gamma", c.weights.gamma);
        w.num("margin_frame", c.weights.margin_frame);
        w.num("margin_object", c.weights.margin_object);
        w.num("bce_weight", c.weights.bce_weight);
        w.check_unknown();
        w.require(c.weights.omega >= 0, "omega", "must be non-negative");
        w.require(c.weights.beta >= 0, "beta", "must be non-negative");
        w.require(c.weights.gamma >= 0, "gamma", "must be non-negative");
        w.require(c.weights.margin_frame >= 0, "margin_frame", "must be non-negative");
        w.require(c.weights.margin_object >= 0, "margin_object", "must be non-negative");
        w.require(c.weights.bce_weight >= 0, "bce_weight", "must be non-negative");
    }
    {
        std::string name = ablation_name(c.ablation);
        f.text("ablation", name);
        try {
            c.ablation = parse_ablation(name);
        } catch (const std::invalid_argument& e) {
            errors.push_back(std::string("ablation: ") + e.what());
        }
        std::string pool = c.object_pool == ObjectPool::batch ? "batch" : "per_frame";
        f.text("object_pool", pool);
        if (pool == "batch") c.object_pool = ObjectPool::batch;
        else if (pool == "per_frame") c.object_pool = ObjectPool::per_frame;
        else errors.push_back("object_pool: expected \"batch\" or \"per_frame\"");
    }
    f.boolean("normalize_objects", c.normalize_objects);
    {
        Fields o(f.child("optimizer"), "optimizer", errors);
        o.num("lr0", c.optimizer.lr0);
        o.num("momentum", c.optimizer.momentum);
        o.counts("decay_steps", c.optimizer.decay_steps);
        o.num("decay_factor", c.optimizer.decay_factor);
        o.check_unknown();
        o.require(c.optimizer.lr0 > 0, "lr0", "must be positive");
        o.require(c.optimizer.momentum >= 0 && c.optimizer.momentum < 1, "momentum", "must be in [0, 1)");
        o.require(c.optimizer.decay_factor > 0, "decay_factor", "must be positive");
    }
    {
        Fields a(f.child("augment"), "augment", errors);
        a.boolean("flip", c.augment.flip);
        a.boolean("crop", c.augment.crop);
        a.num("crop_min_scale", c.augment.crop_min_scale);
        a.check_unknown();
        a.require(c.augment.crop_min_scale > 0 && c.augment.crop_min_scale <= 1, "crop_min_scale", "must be in (0, 1]");
    }
    {
        Fields ct(f.child("cotrain"), "cotrain", errors);
        ct.count("stills_per_video", c.cotrain.stills_per_video);
        ct.check_unknown();
    }
    read_scene(f.child("scene"), "scene", c.scene, errors);
    f.count("total_steps", c.total_steps);
    f.count("checkpoint_every", c.checkpoint_every);
    f.count("log_every", c.log_every);
    f.u64("seed", c.seed);
    f.count("threads", c.threads);
    f.text("out_dir", c.out_dir);
    f.check_unknown();

    f.require(c.videos_per_batch >= 2, "videos_per_batch", "must be at least 2 (InfoNCE needs negatives)");
    f.require(c.shots_per_video >= 2, "shots_per_video", "must be at least 2 (one context shot, one predicted)");
    f.require(c.frames_per_shot >= 1, "frames_per_shot", "must be at least 1");
    f.require(c.prediction_steps >= 1, "prediction_steps", "must be at least 1");
    f.require(c.threads >= 1, "threads", "must be at least 1");
    f.require(c.log_every >= 1, "log_every", "must be at least 1");
    const auto& d = c.optimizer.decay_steps;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const std::string p = "optimizer.decay_steps[" + std::to_string(i) + "]";
        if (i > 0 && d[i] <= d[i - 1]) errors.push_back(p + ": decay steps must be strictly increasing");
        if (d[i] >= c.total_steps)
            errors.push_back(p + ": decay step " + std::to_string(d[i]) + " must be < total_steps " +
                             std::to_string(c.total_steps));
    }
    if (c.model.num_categories != c.corpus_options.num_categories)
        errors.push_back("model.num_categories: must equal corpus_options.num_categories");
    if (c.weights.gamma > 0) {
        if (c.cotrain.stills_per_video == 0) errors.push_back("cotrain.stills_per_video: must be positive when weights.gamma > 0");
        if (c.scene.num_categories > c.model.num_categories)
            errors.push_back("scene.num_categories: exceeds model.num_categories");
        if (c.scene.image_size != c.model.image_size) errors.push_back("scene.image_size: must equal model.image_size");
    }
    if (!errors.empty()) throw ConfigError(errors);
    return c;
}

json to_json(const TrainConfig& c) {
    return {{"corpus", c.corpus},
            {"corpus_options",
             {{"score_threshold", c.corpus_options.score_threshold},
              {"max_boxes", c.corpus_options.max_boxes},
              {"num_categories", c.corpus_options.num_categories}}},
            {"model", to_json(c.model)},
            {"videos_per_batch", c.videos_per_batch},
            {"shots_per_video", c.shots_per_video},
            {"frames_per_shot", c.frames_per_shot},
            {"prediction_steps", c.prediction_steps},
            {"weights",
             {{"omega", c.weights.omega},
              {"beta", c.weights.beta},
              {"gamma", c.weights.gamma},
              {"margin_frame", c.weights.margin_frame},
              {"margin_object", c.weights.margin_object},
              {"bce_weight", c.weights.bce_weight}}},
            {"ablation", ablation_name(c.ablation)},
            {"object_pool", c.object_pool == ObjectPool::batch ? "batch" : "per_frame"},
            {"normalize_objects", c.normalize_objects},
            {"optimizer",
             {{"lr0", c.optimizer.lr0},
              {"momentum", c.optimizer.momentum},
              {"decay_steps", c.optimizer.decay_steps},
              {"decay_factor", c.optimizer.decay_factor}}},
            {"augment", {{"flip", c.augment.flip}, {"crop", c.augment.crop}, {"crop_min_scale", c.augment.crop_min_scale}}},
            {"cotrain", {{"stills_per_video", c.cotrain.stills_per_video}}},
            {"scene", to_json(c.scene)},
            {"total_steps", c.total_steps},
            {"checkpoint_every", c.checkpoint_every},
            {"log_every", c.log_every},
            {"seed", c.seed},
            {"threads", c.threads},
            {"out_dir", c.out_dir}};
}

GenerateConfig generate_config_from_json(const json& j) {
    std::vector<std::string> errors;
    GenerateConfig c;
    Fields f(j, "", errors);
    read_scene(f.child("scene"), "scene", c.scene, errors);
    read_noise(f.child("noise"), "noise", c.noise, errors);
    f.count("videos", c.videos);
    f.u64("seed", c.seed);
    f.text("id_prefix", c.id_prefix);
    f.boolean("apply_detector", c.apply_detector);
    f.check_unknown();
    f.require(c.videos >= 1, "videos", "must be at least 1");
    f.require(!c.id_prefix.empty(), "id_prefix", "must be non-empty");
    if (!errors.empty()) throw ConfigError(errors);
    return c;
}

json to_json(const GenerateConfig& c) {
    return {{"scene", to_json(c.scene)},
            {"noise", to_json(c.noise)},
            {"videos", c.videos},
            {"seed", c.seed},
            {"id_prefix", c.id_prefix},
            {"apply_detector", c.apply_detector}};
}

EvalConfig eval_config_from_json(const json& j) {
    std::vector<std::string> errors;
    EvalConfig c;
    for (auto k : {PerturbKind::gaussian_noise, PerturbKind::box_blur, PerturbKind::channel_shift})
        for (double level : perturb_levels(k)) c.perturbations.push_back({k, level});
    Fields f(j, "", errors);
    f.text("corpus", c.corpus);
    {
        Fields o(f.child("corpus_options"), "corpus_options", errors);
        o.num("score_threshold", c.corpus_options.score_threshold);
        o.count("max_boxes", c.corpus_options.max_boxes);
        o.integer("num_categories", c.corpus_options.num_categories);
        o.check_unknown();
        o.require(c.corpus_options.max_boxes >= 1, "max_boxes", "must be at least 1");
        o.require(c.corpus_options.num_categories >= 1, "num_categories", "must be at least 1");
    }
    {
        Fields n(f.child("nn"), "nn", errors);
        n.count("batches", c.nn.batches);
        n.count("videos_per_batch", c.nn.videos_per_batch);
        n.count("shots_per_video", c.nn.shots_per_video);
        n.count("frames_per_shot", c.nn.frames_per_shot);
        n.check_unknown();
        n.require(c.nn.batches >= 1, "batches", "must be at least 1");
        n.require(c.nn.videos_per_batch >= 1, "videos_per_batch", "must be at least 1");
        n.require(c.nn.shots_per_video >= 1, "shots_per_video", "must be at least 1");
        n.require(c.nn.frames_per_shot >= 1, "frames_per_shot", "must be at least 1");
    }
    {
        Fields p(f.child("probe"), "probe", errors);
        p.count("n_train", c.probe.n_train);
        p.count("n_val", c.probe.n_val);
        p.count("n_test", c.probe.n_test);
        if (const json* v = p.find("learning_rates")) {
            if (v->is_array() && !v->empty() && std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number() && e.get<double>() > 0; }))
                c.probe.learning_rates = v->get<std::vector<double>>();
            else
                errors.push_back("probe.learning_rates: expected a non-empty array of positive numbers");
        }
        if (const json* v = p.find("schedules")) {
            if (!v->is_array() || v->empty()) {
                errors.push_back("probe.schedules: expected a non-empty array");
            } else {
                c.probe.schedules.clear();
                for (std::size_t i = 0; i < v->size(); ++i) {
                    ProbeSchedule sch;
                    Fields s((*v)[i], "probe.schedules[" + std::to_string(i) + "]", errors);
                    s.count("steps", sch.steps);
                    s.count("decay_every", sch.decay_every);
                    s.check_unknown();
                    s.require(sch.steps >= 1, "steps", "must be at least 1");
                    c.probe.schedules.push_back(sch);
                }
            }
        }
        p.num("momentum", c.probe.momentum);
        p.num("decay_factor", c.probe.decay_factor);
        p.check_unknown();
        p.require(c.probe.n_train >= 2, "n_train", "must be at least 2");
        p.require(c.probe.n_val >= 1 && c.probe.n_val < c.probe.n_train, "n_val", "must be in [1, n_train)");
        p.require(c.probe.n_test >= 1, "n_test", "must be at least 1");
        p.require(c.probe.momentum >= 0 && c.probe.momentum < 1, "momentum", "must be in [0, 1)");
        p.require(c.probe.decay_factor > 0, "decay_factor", "must be positive");
    }
    read_scene(f.child("scene"), "scene", c.probe.scene, errors);
    if (const json* v = f.find("tasks")) {
        if (!v->is_array() || v->empty()) {
            errors.push_back("tasks: expected a non-empty array of task names");
        } else {
            c.tasks.clear();
            for (std::size_t i = 0; i < v->size(); ++i) {
                try {
                    c.tasks.push_back(parse_probe_task((*v)[i].get<std::string>()));
                } catch (const std::exception& e) {
                    errors.push_back("tasks[" + std::to_string(i) + "]: " + e.what());
                }
            }
        }
    }
    if (const json* v = f.find("perturbations")) {
        if (!v->is_array()) {
            errors.push_back("perturbations: expected an array");
        } else {
            c.perturbations.clear();
            for (std::size_t i = 0; i < v->size(); ++i) {
                const std::string path = "perturbations[" + std::to_string(i) + "]";
                Perturbation pt;
                std::string kind;
                Fields pf((*v)[i], path, errors);
                pf.text("kind", kind);
                pf.num("level", pt.level);
                pf.check_unknown();
                try {
                    pt.kind = parse_perturb(kind);
                    validate_perturbation(pt);
                    c.perturbations.push_back(pt);
                } catch (const std::exception& e) {
                    errors.push_back(path + ": " + e.what());
                }
            }
        }
    }
    f.count("stats_sample", c.stats_sample);
    f.u64("seed", c.seed);
    f.count("threads", c.threads);
    f.check_unknown();
    f.require(c.threads >= 1, "threads", "must be at least 1");
    if (!errors.empty()) throw ConfigError(errors);
    return c;
}

json to_json(const EvalConfig& c) {
    json schedules = json::array();
    for (const auto& s : c.probe.schedules) schedules.push_back({{"steps", s.steps}, {"decay_every", s.decay_every}});
    json tasks = json::array();
    for (auto t : c.tasks) tasks.push_back(probe_task_name(t));
    json perturbations = json::array();
    for (const auto& p : c.perturbations) perturbations.push_back({{"kind", perturb_name(p.kind)}, {"level", p.level}});
    return {{"corpus", c.corpus},
            {"corpus_options",
             {{"score_threshold", c.corpus_options.score_threshold},
              {"max_boxes", c.corpus_options.max_boxes},
              {"num_categories", c.corpus_options.num_categories}}},
            {"nn",
             {{"batches", c.nn.batches},
              {"videos_per_batch", c.nn.videos_per_batch},
              {"shots_per_video", c.nn.shots_per_video},
              {"frames_per_shot", c.nn.frames_per_shot}}},
            {"probe",
             {{"n_train", c.probe.n_train},
              {"n_val", c.probe.n_val},
              {"n_test", c.probe.n_test},
              {"learning_rates", c.probe.learning_rates},
              {"schedules", schedules},
              {"momentum", c.probe.momentum},
              {"decay_factor", c.probe.decay_factor}}},
            {"scene", to_json(c.probe.scene)},
            {"tasks", tasks},
            {"perturbations", perturbations},
            {"stats_sample", c.stats_sample},
            {"seed", c.seed},
            {"threads", c.threads}};
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError({path.string() + ": " + e.what()});
    }
}

std::string config_digest(const json& normalized) { return hex64(fnv1a64(normalized.dump())); }

ValidatedConfig validate_config(const std::filesystem::path& path) {
    const json normalized = to_json(train_config_from_json(read_json_file(path)));
    return {normalized, config_digest(normalized)};
}

}  // namespace hiervid
