#include "hiervid/hierarchy.hpp"

#include <algorithm>
#include <numeric>

namespace hiervid {

bool BBox::valid() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    return in01(x_min) && in01(y_min) && in01(x_max) && in01(y_max) && x_min < x_max && y_min < y_max;
}

void validate_box(const DetectedBox& box, int num_categories, const std::string& video_id) {
    if (box.category_id < 0 || box.category_id >= num_categories)
        throw InvariantError(video_id, "box category " + std::to_string(box.category_id) + " outside [0, " +
                                           std::to_string(num_categories) + ")");
    if (!(box.score >= 0.0 && box.score <= 1.0))
        throw InvariantError(video_id, "box score " + std::to_string(box.score) + " outside [0, 1]");
    if (!box.bbox.valid())
        throw InvariantError(video_id, "degenerate or out-of-range box (" + std::to_string(box.bbox.x_min) + ", " +
                                           std::to_string(box.bbox.y_min) + ", " + std::to_string(box.bbox.x_max) +
                                           ", " + std::to_string(box.bbox.y_max) + ")");
}

std::vector<std::size_t> AnnotatedVideo::shot_lengths() const {
    std::vector<std::size_t> out;
    for (const auto& s : shots) out.push_back(s.frames.size());
    return out;
}

std::vector<DetectedBox> filter_boxes(std::span<const DetectedBox> boxes, double score_threshold,
                                      std::size_t max_boxes) {
    std::vector<DetectedBox> kept;
    for (const auto& b : boxes)
        if (b.score >= score_threshold) kept.push_back(b);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    if (kept.size() > max_boxes) kept.resize(max_boxes);
    return kept;
}

Frame filter_boxes(const Frame& frame, double score_threshold, std::size_t max_boxes) {
    Frame out = frame;
    out.boxes = filter_boxes(frame.boxes, score_threshold, max_boxes);
    return out;
}

Episode sample_episode(std::span<const std::size_t> shot_lengths, std::size_t num_shots,
                       std::size_t frames_per_shot, Rng& rng, const std::string& video_id) {
    if (num_shots == 0 || frames_per_shot == 0) throw SamplingError("episode needs at least one shot and one frame");
    std::vector<std::size_t> starts;
    if (shot_lengths.size() >= num_shots) {
        for (std::size_t s = 0; s + num_shots <= shot_lengths.size(); ++s) {
            bool ok = true;
            for (std::size_t l = s; l < s + num_shots && ok; ++l) ok = shot_lengths[l] >= frames_per_shot;
            if (ok) starts.push_back(s);
        }
    }
    if (starts.empty())
        throw SamplingError("video " + video_id + ": no run of " + std::to_string(num_shots) + " shots with >= " +
                            std::to_string(frames_per_shot) + " frames each");
    const auto start = starts[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(starts.size()) - 1))];
    Episode ep;
    for (std::size_t l = 0; l < num_shots; ++l) {
        const std::size_t shot = start + l;
        std::vector<std::size_t> all(shot_lengths[shot]);
        std::iota(all.begin(), all.end(), 0);
        std::vector<std::size_t> picked;
        std::sample(all.begin(), all.end(), std::back_inserter(picked), frames_per_shot, rng);
        std::sort(picked.begin(), picked.end());
        ep.shots.push_back(shot);
        ep.frames.push_back(std::move(picked));
    }
    return ep;
}

Episode sample_episode(const AnnotatedVideo& video, std::size_t num_shots, std::size_t frames_per_shot, Rng& rng) {
    const auto lengths = video.shot_lengths();
    return sample_episode(lengths, num_shots, frames_per_shot, rng, video.video_id);
}

CorpusStats corpus_stats(const Corpus& corpus, std::size_t sample_size, std::size_t num_shots,
                         std::size_t frames_per_shot, Rng& rng) {
    if (sample_size > corpus.size()) throw SamplingError("sample size exceeds corpus size");
    const int nc = corpus.options().num_categories;
    std::vector<std::size_t> ids(corpus.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::vector<std::size_t> chosen;
    std::sample(ids.begin(), ids.end(), std::back_inserter(chosen), sample_size, rng);

    CorpusStats stats;
    std::vector<std::size_t> appear(static_cast<std::size_t>(nc), 0);
    std::vector<std::size_t> instances(static_cast<std::size_t>(nc), 0);
    std::vector<double> scores;
    for (auto v : chosen) {
        const auto& rec = corpus.record(v);
        const auto lengths = rec.shot_lengths();
        Episode ep;
        try {
            ep = sample_episode(lengths, num_shots, frames_per_shot, rng, rec.video_id);
        } catch (const SamplingError&) {
            ++stats.videos_skipped;
            continue;
        }
        ++stats.videos_sampled;
        std::vector<std::size_t> count(static_cast<std::size_t>(nc), 0);
        for (std::size_t l = 0; l < ep.shots.size(); ++l)
            for (auto pos : ep.frames[l])
                for (const auto& b : rec.boxes_of(rec.frame_id(ep.shots[l], pos))) {
                    ++count[static_cast<std::size_t>(b.category_id)];
                    scores.push_back(b.score);
                }
        for (int c = 0; c < nc; ++c) {
            const auto k = static_cast<std::size_t>(c);
            if (count[k] > 0) {
                ++appear[k];
                instances[k] += count[k];
            }
        }
    }
    for (int c = 0; c < nc; ++c) {
        const auto k = static_cast<std::size_t>(c);
        CategoryStats cs;
        cs.category = c;
        cs.video_fraction = stats.videos_sampled ? static_cast<double>(appear[k]) / static_cast<double>(stats.videos_sampled) : 0.0;
        if (appear[k] > 0) cs.mean_recurrence = static_cast<double>(instances[k]) / static_cast<double>(appear[k]);
        stats.categories.push_back(cs);
    }
    // Cumulative score histogram in 0.05 steps; the last bin is closed at 1.
    for (int i = 1; i <= 20; ++i) {
        const double edge = static_cast<double>(i) / 20.0;
        std::size_t below = 0;
        for (double s : scores) below += (i == 20 ? s <= edge : s < edge) ? 1 : 0;
        stats.score_edges.push_back(edge);
        stats.score_cumulative.push_back(scores.empty() ? 0.0 : static_cast<double>(below) / static_cast<double>(scores.size()));
    }
    return stats;
}

}  // namespace hiervid
