#pragma once
// Minibatch assembly, SGD with momentum, step-decay schedule, checkpoints and
// deterministic experiment runs.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiervid/config.hpp"
#include "hiervid/encoder.hpp"
#include "hiervid/hierarchy.hpp"
#include "hiervid/pooling.hpp"

namespace hiervid {

/// lr0 * factor^(number of boundaries b with step >= b).
double lr_at(std::size_t step, double lr0, std::span<const std::size_t> decay_steps, double factor);

class TrainingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// v <- mu v + g; w <- w - lr v. Throws TrainingError naming `name` and the
/// entry when a gradient is not finite; nothing is modified in that case.
void sgd_momentum_step(std::span<double> weights, std::span<const double> grads, std::span<double> velocity, double lr,
                       double momentum, const std::string& name = "param");

struct StepLog {
    std::size_t step = 0;  // number of updates applied after this step
    double lr = 0.0;
    double total = 0.0;
    double shot = 0.0;
    double frame = 0.0;
    double object = 0.0;
    double supervised = 0.0;
    double bce = 0.0;
    std::size_t frame_triplets = 0;
    std::size_t frame_skipped = 0;
    std::size_t object_triplets = 0;
    std::size_t object_skipped = 0;
    std::size_t boxes = 0;
    bool object_empty = false;

    nlohmann::json to_json() const;
};

/// Per-component weights the configured ablation applies to the total.
struct TermWeights {
    double object = 0.0;
    double frame = 0.0;
    double shot = 0.0;
    double supervised = 0.0;
    double bce = 0.0;
};
TermWeights term_weights(const TrainConfig& config);
/// Recombines logged components: sum of weight * component.
double weighted_total(const StepLog& log, const TermWeights& w);

/// One assembled minibatch: N videos x L shots x K frames in (video, shot,
/// frame) order, plus the optional labeled stills for cotraining.
struct BatchInputs {
    std::size_t videos = 0;
    std::size_t shots = 0;
    std::size_t frames = 0;
    std::vector<Tensor> images;
    std::vector<std::vector<DetectedBox>> boxes;  // per image
    std::vector<GroupKey> keys;                   // per image
    std::vector<Tensor> stills;
    std::vector<int> still_labels;
};

struct BatchLoss {
    Tensor total;  // undefined when every weighted term is absent
    StepLog log;   // components; step and lr left at zero
};

/// Encodes every frame once and evaluates the configured objective from the
/// shared grids.
BatchLoss batch_loss(const ModelParams& params, const BatchInputs& batch, const TrainConfig& config);

struct RunReport {
    std::size_t steps = 0;
    StepLog final_step;  // components of the last update (zeros when no step ran)
    double wall_seconds = 0.0;
    std::string checkpoint_digest;
    std::filesystem::path checkpoint;
    std::vector<StepLog> intervals;  // component means over each logging interval of 100 steps

    nlohmann::json to_json() const;
};

struct CheckpointMeta {
    std::size_t step = 0;
    std::string config_digest;
    nlohmann::json config;
    nlohmann::json rng_states;
};

struct LoadedCheckpoint {
    ModelParams params;
    std::vector<hvt1::Entry> velocity;  // `opt.v.<name>` entries
    CheckpointMeta meta;
};

/// Digest of a checkpoint's HVT1 bytes.
std::string checkpoint_digest(const std::filesystem::path& hvt_path);
/// Reads `ckpt_<step>.hvt` and its `.json` sidecar.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& hvt_path);
std::filesystem::path sidecar_path(const std::filesystem::path& hvt_path);

class Trainer {
  public:
    Trainer(TrainConfig config, std::shared_ptr<const Corpus> corpus);

    /// Restores parameters, optimizer state and every RNG stream.
    void resume(const std::filesystem::path& checkpoint);

    /// One minibatch update.
    StepLog step();
    /// Steps until total_steps, logging and checkpointing as configured.
    RunReport run(const std::function<void(const StepLog&)>& on_step = {});

    std::size_t current_step() const { return step_; }
    const ModelParams& params() const { return params_; }
    const TrainConfig& config() const { return config_; }
    const std::string& config_digest() const { return config_digest_; }

    /// Writes ckpt_<step>.hvt and its sidecar under out_dir; returns the .hvt path.
    std::filesystem::path save_checkpoint() const;

  private:
    BatchInputs assemble();

    TrainConfig config_;
    std::shared_ptr<const Corpus> corpus_;
    ModelParams params_;
    std::vector<std::vector<double>> velocity_;
    std::vector<std::size_t> candidates_;  // videos holding a valid episode
    std::size_t step_ = 0;
    std::string config_digest_;
    Rng sampler_;
    Rng ablation_;
    Rng augment_;
    Rng cotrain_;
};

/// Loads the configured corpus and runs a Trainer; writes config.json and
/// log.jsonl under out_dir.
RunReport train(const TrainConfig& config, const std::optional<std::filesystem::path>& resume = std::nullopt);
RunReport train(const TrainConfig& config, std::shared_ptr<const Corpus> corpus,
                const std::optional<std::filesystem::path>& resume = std::nullopt);

}  // namespace hiervid
