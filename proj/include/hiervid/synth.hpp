#pragma once
// Synthetic annotated videos: moving shapes over per-shot backgrounds, a
// noisy detector simulation, and the label/box randomization ablations.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hiervid/hierarchy.hpp"
#include "hiervid/rng.hpp"

namespace hiervid {

enum class ShapeKind { disk, square, triangle, cross, ring, bar };
const char* shape_kind_name(ShapeKind kind);

/// Category c is drawn as shape kind c (mod 6).
ShapeKind shape_for_category(int category);

struct SceneSpec {
    int num_categories = 6;
    int objects_min = 1;
    int objects_max = 4;
    double scale_min = 0.15;  // object extent as a fraction of the image side
    double scale_max = 0.30;
    double max_speed = 2.0 / 64.0;  // normalized units per frame
    double camera_jitter = 0.2;     // per-shot offset applied to every object
    bool background_solid = true;
    bool background_gradient = true;
    bool background_noise = true;
    int shot_length_min = 4;
    int shot_length_max = 8;
    int shots_min = 2;
    int shots_max = 4;
    std::size_t image_size = 64;
    std::size_t channels = 3;

    /// Throws std::invalid_argument listing the first violated constraint.
    void validate() const;
};

struct DetectorNoise {
    double label_flip_prob = 0.1;
    double box_jitter_std = 0.02;
    double miss_prob = 0.1;
    double score_correct_mean = 0.8;
    double score_correct_std = 0.1;
    double score_flipped_mean = 0.3;
    double score_flipped_std = 0.1;

    /// Perfect detector: ground-truth boxes with score 1.
    static DetectorNoise identity();
    void validate() const;
};

constexpr double kMinBoxSide = 0.02;

AnnotatedVideo generate_video(const SceneSpec& spec, Rng& rng, const std::string& video_id);

/// Per-video seeds come from (seed, index) so the result does not depend on `threads`.
std::vector<AnnotatedVideo> generate_corpus(const SceneSpec& spec, std::size_t count, std::uint64_t seed,
                                            const std::string& id_prefix = "vid", std::size_t threads = 1);

/// Misses, jitter, label flips and score sampling, followed by filter_boxes.
AnnotatedVideo simulate_detector(const AnnotatedVideo& video, const DetectorNoise& noise, int num_categories,
                                 Rng& rng, double score_threshold = 0.05, std::size_t max_boxes = 5);

/// Replaces every box label with a uniform draw over all categories.
std::vector<DetectedBox> randomize_labels(std::span<const DetectedBox> boxes, int num_categories, Rng& rng);
AnnotatedVideo randomize_labels(const AnnotatedVideo& video, int num_categories, Rng& rng);

/// Replaces every rectangle with a uniform valid one (center uniform in the
/// frame, sides uniform in [0.05, 0.5], clamped); labels and scores stay.
std::vector<DetectedBox> randomize_boxes(std::span<const DetectedBox> boxes, Rng& rng);
AnnotatedVideo randomize_boxes(const AnnotatedVideo& video, Rng& rng);

/// Labeled single image used by the downstream probe tasks and cotraining.
struct StillSample {
    Tensor image;
    int category = 0;  // category of the largest object
    int count = 0;     // number of objects
    int quadrant = 0;  // quadrant of the largest object's center: 2*(y>=.5) + (x>=.5)
};

StillSample generate_still(const SceneSpec& spec, Rng& rng);
std::vector<StillSample> generate_stills(const SceneSpec& spec, std::size_t count, std::uint64_t seed,
                                         std::size_t threads = 1);

}  // namespace hiervid
