#pragma once
// Video -> shot -> frame -> object hierarchy, corpus access, detection
// filtering and episode sampling.

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/hvt1.hpp"
#include "hiervid/rng.hpp"
#include "hiervid/tensor.hpp"

namespace hiervid {

class CorpusError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class MissingFileError : public CorpusError {
  public:
    explicit MissingFileError(const std::filesystem::path& path)
        : CorpusError("missing file: " + path.string()), path_(path) {}
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

class ManifestError : public CorpusError {
  public:
    ManifestError(std::size_t line, const std::string& what)
        : CorpusError("manifest line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

class InvariantError : public CorpusError {
  public:
    InvariantError(const std::string& video_id, const std::string& what)
        : CorpusError("video " + video_id + ": " + what), video_id_(video_id) {}
    const std::string& video_id() const { return video_id_; }

  private:
    std::string video_id_;
};

class SamplingError : public CorpusError {
  public:
    using CorpusError::CorpusError;
};

/// Normalized image coordinates, origin top-left.
struct BBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }
    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    bool valid() const;

    bool operator==(const BBox&) const = default;
};

struct DetectedBox {
    int category_id = 0;
    double score = 1.0;
    BBox bbox;

    bool operator==(const DetectedBox&) const = default;
};

/// Throws InvariantError when the box violates its contract.
void validate_box(const DetectedBox& box, int num_categories, const std::string& video_id);

struct Frame {
    Tensor image;  // H x W x C, values in [0, 1]
    std::vector<DetectedBox> boxes;
    std::optional<int> frame_category;
};

struct Shot {
    std::vector<Frame> frames;
};

struct AnnotatedVideo {
    std::string video_id;
    std::vector<Shot> shots;

    std::vector<std::size_t> shot_lengths() const;
};

/// Sampled slice of one video: shot indices and, per sampled shot, frame
/// positions within that shot.
struct Episode {
    std::vector<std::size_t> shots;
    std::vector<std::vector<std::size_t>> frames;

    bool operator==(const Episode&) const = default;
};

/// Drops boxes scoring below `score_threshold`, sorts survivors by descending
/// score (stable, so ties keep input order) and keeps the first `max_boxes`.
std::vector<DetectedBox> filter_boxes(std::span<const DetectedBox> boxes, double score_threshold,
                                      std::size_t max_boxes);
Frame filter_boxes(const Frame& frame, double score_threshold, std::size_t max_boxes);

/// Uniform contiguous run of `num_shots` shots among runs whose shots all hold
/// at least `frames_per_shot` frames; then a sorted uniform subset of frames
/// inside each chosen shot.
Episode sample_episode(std::span<const std::size_t> shot_lengths, std::size_t num_shots,
                       std::size_t frames_per_shot, Rng& rng, const std::string& video_id = "");
Episode sample_episode(const AnnotatedVideo& video, std::size_t num_shots, std::size_t frames_per_shot, Rng& rng);

// ---------------------------------------------------------------------------
// Corpus

struct CorpusOptions {
    double score_threshold = 0.05;
    std::size_t max_boxes = 5;
    int num_categories = 6;
};

/// Per-video annotation as listed in the manifest (no pixels).
struct VideoRecord {
    std::string video_id;
    std::filesystem::path frames_file;
    std::vector<std::vector<std::size_t>> shots;  // frame ids per shot
    std::map<std::size_t, std::vector<DetectedBox>> boxes;  // by frame id
    std::vector<int> frame_categories;  // by frame id; empty when absent

    std::vector<std::size_t> shot_lengths() const;
    std::size_t frame_id(std::size_t shot, std::size_t position) const { return shots.at(shot).at(position); }
    const std::vector<DetectedBox>& boxes_of(std::size_t frame_id) const;
    std::optional<int> category_of(std::size_t frame_id) const;
};

/// Read-only collection of annotated videos. Pixel data is fetched lazily,
/// either from HVT1 frame files or from in-memory videos.
class Corpus {
  public:
    static Corpus load(const std::filesystem::path& manifest, const CorpusOptions& options = {});
    static Corpus from_videos(std::vector<AnnotatedVideo> videos, const CorpusOptions& options = {});

    std::size_t size() const { return records_.size(); }
    const VideoRecord& record(std::size_t video) const { return records_.at(video); }
    const CorpusOptions& options() const { return options_; }

    /// Frame pixels by manifest frame id, validated against the corpus image shape.
    Tensor image(std::size_t video, std::size_t frame_id) const;
    Frame frame(std::size_t video, std::size_t frame_id) const;
    AnnotatedVideo video(std::size_t video) const;

  private:
    Corpus() = default;
    const hvt1::Reader& reader(std::size_t video) const;

    CorpusOptions options_;
    std::vector<VideoRecord> records_;
    std::vector<AnnotatedVideo> memory_;
    std::shared_ptr<std::mutex> mutex_ = std::make_shared<std::mutex>();
    mutable std::map<std::size_t, std::shared_ptr<hvt1::Reader>> readers_;
    mutable std::optional<Shape> image_shape_;
};

/// Writes `manifest.jsonl` plus one `<video_id>.hvt` frame container per video.
void write_corpus(const std::filesystem::path& dir, std::span<const AnnotatedVideo> videos);

struct CategoryStats {
    int category = 0;
    double video_fraction = 0.0;
    std::optional<double> mean_recurrence;  // absent when the category never appears
};

struct CorpusStats {
    std::size_t videos_sampled = 0;
    std::size_t videos_skipped = 0;  // no valid episode
    std::vector<CategoryStats> categories;
    std::vector<double> score_edges;       // upper bin edges
    std::vector<double> score_cumulative;  // fraction of boxes with score < edge
};

CorpusStats corpus_stats(const Corpus& corpus, std::size_t sample_size, std::size_t num_shots,
                         std::size_t frames_per_shot, Rng& rng);

}  // namespace hiervid
