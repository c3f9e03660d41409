#pragma once
// Quantitative diagnostics: nearest-neighbour category match on box
// embeddings, Fisher's exact test, frozen-feature linear probes and
// robustness under image perturbations.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hiervid/encoder.hpp"
#include "hiervid/hierarchy.hpp"
#include "hiervid/synth.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Fisher's exact test

using Table2x2 = std::array<std::array<std::int64_t, 2>, 2>;

/// Two-sided p: total probability of the tables with the observed margins
/// that are no more likely than the observed one.
double fisher_exact_2x2(const Table2x2& table);

// ---------------------------------------------------------------------------
// Nearest-neighbour category match

/// Index of each row's nearest other row by Euclidean distance (ties to the lowest index).
std::vector<std::size_t> nearest_neighbors(std::span<const double> embeddings, std::size_t dim);

/// Fraction of rows whose nearest other row shares their label. Throws
/// std::invalid_argument with fewer than 2 rows.
double nn_match_fraction(std::span<const double> embeddings, std::size_t dim, std::span<const int> labels,
                         std::size_t* matches = nullptr);

/// Probability that a uniformly drawn other row shares the label:
/// sum_c n_c (n_c - 1) / (n (n - 1)).
double chance_match_level(std::span<const int> labels);

/// One frame per video by default: with several frames of a shot the nearest
/// neighbour of a box is nearly always the same object one frame away.
struct NNEvalOptions {
    std::size_t batches = 50;
    std::size_t videos_per_batch = 8;
    std::size_t shots_per_video = 1;
    std::size_t frames_per_shot = 1;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

struct NNResult {
    double fraction = 0.0;
    double chance = 0.0;
    std::size_t boxes = 0;
    std::size_t matches = 0;
};

/// Gathers every box of the sampled batches (raw grid cell r_b, L2-normalized)
/// and scores the nearest-neighbour category match. Videos are drawn without
/// replacement until the corpus is exhausted.
NNResult nn_class_match_fraction(const ModelParams& params, const Corpus& corpus, const NNEvalOptions& options);

// ---------------------------------------------------------------------------
// Linear probe

enum class ProbeTask { category, count, quadrant };
const char* probe_task_name(ProbeTask task);
ProbeTask parse_probe_task(const std::string& name);
std::size_t probe_classes(ProbeTask task, const SceneSpec& scene);
int probe_label(const StillSample& sample, ProbeTask task, const SceneSpec& scene);

struct ProbeSchedule {
    std::size_t steps = 1000;
    std::size_t decay_every = 300;
};

struct ProbeOptions {
    std::size_t n_train = 1000;
    std::size_t n_val = 200;  // carved from the end of the training set for selection
    std::size_t n_test = 2000;
    std::vector<double> learning_rates{0.1, 0.01};
    std::vector<ProbeSchedule> schedules{{1000, 300}, {250, 75}};
    double momentum = 0.9;
    double decay_factor = 0.1;
    SceneSpec scene;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

/// Row-major [rows, dim] feature matrix.
struct FeatureMatrix {
    std::vector<double> values;
    std::size_t rows = 0;
    std::size_t dim = 0;
};

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> inv_std;

    static Standardizer fit(const FeatureMatrix& x);
    FeatureMatrix apply(const FeatureMatrix& x) const;
};

struct LinearHead {
    std::vector<double> weights;  // [dim, classes]
    std::vector<double> bias;     // [classes]
    std::size_t dim = 0;
    std::size_t classes = 0;

    std::vector<int> predict(const FeatureMatrix& x) const;
};

/// Full-batch gradient descent with momentum on mean softmax cross-entropy;
/// the rate drops by `decay_factor` every `decay_every` steps.
LinearHead fit_linear_head(const FeatureMatrix& x, std::span<const int> labels, std::size_t classes, double lr,
                           const ProbeSchedule& schedule, double momentum, double decay_factor);
double accuracy(const LinearHead& head, const FeatureMatrix& x, std::span<const int> labels);

struct ProbeFit {
    Standardizer standardizer;
    LinearHead head;
    double chosen_lr = 0.0;
    std::size_t chosen_schedule = 0;
    double val_accuracy = 0.0;
    std::vector<double> val_grid;  // [lr][schedule]
};

/// Sweep on the first n_train - n_val rows, select on the last n_val (ties to
/// the lower learning rate, then the earlier schedule), refit on all rows.
ProbeFit fit_probe(const FeatureMatrix& train, std::span<const int> labels, std::size_t classes,
                   const ProbeOptions& options);

/// Mean-pooled grid features of a frozen encoder.
FeatureMatrix extract_features(const ModelParams& params, std::span<const Tensor> images, std::size_t threads = 1);

struct ProbeTaskData {
    std::vector<Tensor> train_images;
    std::vector<int> train_labels;
    std::vector<Tensor> test_images;
    std::vector<int> test_labels;
    std::size_t classes = 0;
};

/// Labeled stills drawn from seeds disjoint from any training corpus.
ProbeTaskData make_probe_task(ProbeTask task, const ProbeOptions& options);

struct ProbeResult {
    ProbeFit fit;
    double test_accuracy = 0.0;
    double chance = 0.0;
};

ProbeResult linear_probe_transfer(const ModelParams& params, ProbeTask task, const ProbeOptions& options);
ProbeResult linear_probe_transfer(const ModelParams& params, const ProbeTaskData& data, const ProbeOptions& options);

// ---------------------------------------------------------------------------
// Perturbations and robustness

enum class PerturbKind { gaussian_noise, box_blur, channel_shift };
const char* perturb_name(PerturbKind kind);
PerturbKind parse_perturb(const std::string& name);  // std::invalid_argument on unknown kind
/// Declared levels: noise sigma {0.05, 0.1, 0.2}, blur kernel {3, 5, 7}, shift {0.1, 0.2, 0.3}.
std::vector<double> perturb_levels(PerturbKind kind);

struct Perturbation {
    PerturbKind kind = PerturbKind::gaussian_noise;
    double level = 0.0;
};

/// Throws std::invalid_argument when the level is outside the kind's range:
/// sigma in [0, 1], odd kernel in [1, 15], shift in [0, 1].
void validate_perturbation(const Perturbation& p);
Tensor perturb_image(const Tensor& image, const Perturbation& p, Rng& rng);
/// Per-image streams derived from (seed, index); results are clamped to [0, 1].
std::vector<Tensor> perturb_dataset(std::span<const Tensor> images, const Perturbation& p, std::uint64_t seed,
                                    std::size_t threads = 1);

struct RobustnessRow {
    Perturbation perturbation;
    double clean_accuracy = 0.0;
    double perturbed_accuracy = 0.0;
    double delta = 0.0;  // clean - perturbed
};

/// Fits the probe on clean stills, then scores clean and perturbed test sets.
std::vector<RobustnessRow> robustness_delta(const ModelParams& params, ProbeTask task,
                                            std::span<const Perturbation> perturbations, const ProbeOptions& options);

}  // namespace hiervid
