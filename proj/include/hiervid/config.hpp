#pragma once
// Experiment configuration: defaults, JSON mapping and validation.
//
// Parsing never stops at the first problem; every violation is reported with
// the JSON path of the offending field.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiervid/encoder.hpp"
#include "hiervid/eval.hpp"
#include "hiervid/hierarchy.hpp"
#include "hiervid/losses.hpp"
#include "hiervid/synth.hpp"

namespace hiervid {

enum class Ablation {
    none,
    random_labels,
    random_boxes,
    random_both,
    bce_added,
    bce_replaces_object,
    object_only,
    baseline_vivi,
};

const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);  // throws std::invalid_argument

struct OptimizerConfig {
    double lr0 = 0.01;  // 0.1 lets unnormalized frame features blow up within ~60 steps
    double momentum = 0.9;
    std::vector<std::size_t> decay_steps{1500, 1833};
    double decay_factor = 0.1;
};

struct AugmentConfig {
    bool flip = false;
    bool crop = false;
    double crop_min_scale = 0.8;
};

struct CotrainConfig {
    std::size_t stills_per_video = 4;  // labeled stills per sampled video (1:4 by count)
};

struct TrainConfig {
    std::string corpus;  // manifest path
    CorpusOptions corpus_options;
    ModelConfig model;
    std::size_t videos_per_batch = 8;
    std::size_t shots_per_video = 2;
    std::size_t frames_per_shot = 4;
    std::size_t prediction_steps = 1;
    LossWeights weights;
    Ablation ablation = Ablation::none;
    ObjectPool object_pool = ObjectPool::batch;
    bool normalize_objects = true;
    OptimizerConfig optimizer;
    AugmentConfig augment;
    CotrainConfig cotrain;
    SceneSpec scene;  // source of labeled stills when cotraining
    std::size_t total_steps = 2000;
    std::size_t checkpoint_every = 0;  // 0: final checkpoint only
    std::size_t log_every = 1;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string out_dir = "run";
};

struct GenerateConfig {
    SceneSpec scene;
    DetectorNoise noise;
    std::size_t videos = 500;
    std::uint64_t seed = 0;
    std::string id_prefix = "vid";
    bool apply_detector = false;  // annotate during generation
};

/// Settings shared by the evaluation subcommands.
struct EvalConfig {
    std::string corpus;  // held-out manifest (eval-nn, stats)
    CorpusOptions corpus_options;
    NNEvalOptions nn;
    ProbeOptions probe;  // probe.scene describes the labeled stills
    std::vector<ProbeTask> tasks{ProbeTask::category, ProbeTask::count, ProbeTask::quadrant};
    std::vector<Perturbation> perturbations;  // default: every kind at every declared level
    std::size_t stats_sample = 100;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(std::vector<std::string> errors);
    const std::vector<std::string>& errors() const { return errors_; }

  private:
    std::vector<std::string> errors_;
};

/// Parses and validates; throws ConfigError carrying every violation.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
GenerateConfig generate_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GenerateConfig& c);

EvalConfig eval_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalConfig& c);

nlohmann::json to_json(const SceneSpec& s);
nlohmann::json to_json(const DetectorNoise& n);
nlohmann::json to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);

struct ValidatedConfig {
    nlohmann::json normalized;
    std::string digest;
};

/// Loads a train config file, fills defaults, checks invariants, and returns
/// the normalized form with its digest.
ValidatedConfig validate_config(const std::filesystem::path& path);

std::string config_digest(const nlohmann::json& normalized);

}  // namespace hiervid
