#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "hiervid/hierarchy.hpp"

namespace hiervid {

namespace {

using nlohmann::json;

std::string frame_entry_name(std::size_t frame_id) { return "frame_" + std::to_string(frame_id); }

VideoRecord parse_record(const json& j, std::size_t line, const std::filesystem::path& base, const CorpusOptions& options) {
    VideoRecord rec;
    try {
        rec.video_id = j.at("video_id").get<std::string>();
        rec.frames_file = base / j.at("frames_file").get<std::string>();
        for (const auto& shot : j.at("shots")) rec.shots.push_back(shot.get<std::vector<std::size_t>>());
        if (j.contains("boxes")) {
            for (const auto& b : j.at("boxes")) {
                if (!b.is_array() || b.size() != 7) throw ManifestError(line, "box record must have 7 fields");
                DetectedBox box;
                const auto frame_id = b[0].get<std::size_t>();
                box.category_id = b[1].get<int>();
                box.score = b[2].get<double>();
                box.bbox = {b[3].get<double>(), b[4].get<double>(), b[5].get<double>(), b[6].get<double>()};
                rec.boxes[frame_id].push_back(box);
            }
        }
        if (j.contains("frame_categories")) rec.frame_categories = j.at("frame_categories").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw ManifestError(line, e.what());
    }

    std::set<std::size_t> frame_ids;
    if (rec.shots.empty()) throw InvariantError(rec.video_id, "video has no shots");
    for (const auto& shot : rec.shots) {
        if (shot.empty()) throw InvariantError(rec.video_id, "empty shot");
        for (auto f : shot)
            if (!frame_ids.insert(f).second) throw InvariantError(rec.video_id, "frame id listed twice: " + std::to_string(f));
    }
    for (const auto& [frame_id, boxes] : rec.boxes) {
        if (!frame_ids.count(frame_id))
            throw InvariantError(rec.video_id, "box refers to unknown frame " + std::to_string(frame_id));
        for (const auto& b : boxes) validate_box(b, options.num_categories, rec.video_id);
    }
    if (!rec.frame_categories.empty()) {
        for (auto f : frame_ids)
            if (f >= rec.frame_categories.size())
                throw InvariantError(rec.video_id, "frame_categories shorter than frame ids");
        for (int c : rec.frame_categories)
            if (c < 0 || c >= options.num_categories) throw InvariantError(rec.video_id, "frame category out of range");
    }
    // Offline annotation step: filter detections once, at load time.
    for (auto& [frame_id, boxes] : rec.boxes) boxes = filter_boxes(boxes, options.score_threshold, options.max_boxes);
    return rec;
}

}  // namespace

std::vector<std::size_t> VideoRecord::shot_lengths() const {
    std::vector<std::size_t> out;
    for (const auto& s : shots) out.push_back(s.size());
    return out;
}

const std::vector<DetectedBox>& VideoRecord::boxes_of(std::size_t frame_id) const {
    static const std::vector<DetectedBox> none;
    auto it = boxes.find(frame_id);
    return it == boxes.end() ? none : it->second;
}

std::optional<int> VideoRecord::category_of(std::size_t frame_id) const {
    if (frame_id < frame_categories.size()) return frame_categories[frame_id];
    return std::nullopt;
}

Corpus Corpus::load(const std::filesystem::path& manifest, const CorpusOptions& options) {
    std::ifstream in(manifest);
    if (!in) throw MissingFileError(manifest);
    Corpus corpus;
    corpus.options_ = options;
    const auto base = manifest.parent_path();
    std::set<std::string> ids;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw ManifestError(line, e.what());
        }
        auto rec = parse_record(j, line, base, options);
        if (!ids.insert(rec.video_id).second) throw InvariantError(rec.video_id, "duplicate video_id");
        if (!std::filesystem::exists(rec.frames_file)) throw MissingFileError(rec.frames_file);
        corpus.records_.push_back(std::move(rec));
    }
    return corpus;
}

Corpus Corpus::from_videos(std::vector<AnnotatedVideo> videos, const CorpusOptions& options) {
    Corpus corpus;
    corpus.options_ = options;
    std::set<std::string> ids;
    for (auto& v : videos) {
        if (!ids.insert(v.video_id).second) throw InvariantError(v.video_id, "duplicate video_id");
        VideoRecord rec;
        rec.video_id = v.video_id;
        std::size_t next = 0;
        bool has_categories = false;
        for (auto& shot : v.shots) {
            if (shot.frames.empty()) throw InvariantError(v.video_id, "empty shot");
            std::vector<std::size_t> ids_in_shot;
            for (auto& f : shot.frames) {
                for (const auto& b : f.boxes) validate_box(b, options.num_categories, v.video_id);
                f.boxes = filter_boxes(f.boxes, options.score_threshold, options.max_boxes);
                if (!f.boxes.empty()) rec.boxes[next] = f.boxes;
                has_categories = has_categories || f.frame_category.has_value();
                ids_in_shot.push_back(next++);
            }
            rec.shots.push_back(std::move(ids_in_shot));
        }
        if (has_categories)
            for (const auto& shot : v.shots)
                for (const auto& f : shot.frames) rec.frame_categories.push_back(f.frame_category.value_or(0));
        corpus.records_.push_back(std::move(rec));
    }
    corpus.memory_ = std::move(videos);
    return corpus;
}

const hvt1::Reader& Corpus::reader(std::size_t video) const {
    std::lock_guard lock(*mutex_);
    auto it = readers_.find(video);
    if (it == readers_.end()) {
        const auto& path = records_.at(video).frames_file;
        if (!std::filesystem::exists(path)) throw MissingFileError(path);
        it = readers_.emplace(video, std::make_shared<hvt1::Reader>(path)).first;
    }
    return *it->second;
}

Tensor Corpus::image(std::size_t video, std::size_t frame_id) const {
    const auto& rec = records_.at(video);
    Tensor img;
    if (!memory_.empty()) {
        std::size_t next = 0;
        for (const auto& shot : memory_.at(video).shots)
            for (const auto& f : shot.frames)
                if (next++ == frame_id) img = f.image;
        if (!img.defined()) throw InvariantError(rec.video_id, "unknown frame id " + std::to_string(frame_id));
    } else {
        const auto& r = reader(video);
        const auto name = frame_entry_name(frame_id);
        if (!r.contains(name)) throw InvariantError(rec.video_id, "frames file lacks entry " + name);
        auto entry = r.read(name);
        img = Tensor::from(entry.shape, std::move(entry.values));
    }
    if (img.rank() != 3) throw InvariantError(rec.video_id, "frame image must be H x W x C");
    {
        std::lock_guard lock(*mutex_);
        if (!image_shape_) image_shape_ = img.shape();
        if (*image_shape_ != img.shape())
            throw InvariantError(rec.video_id, "frame image shape " + shape_str(img.shape()) +
                                                   " differs from corpus shape " + shape_str(*image_shape_));
    }
    for (double v : img.data())
        if (v < 0.0 || v > 1.0) throw InvariantError(rec.video_id, "pixel value outside [0, 1]");
    return img;
}

Frame Corpus::frame(std::size_t video, std::size_t frame_id) const {
    const auto& rec = records_.at(video);
    Frame f;
    f.image = image(video, frame_id);
    f.boxes = rec.boxes_of(frame_id);
    f.frame_category = rec.category_of(frame_id);
    return f;
}

AnnotatedVideo Corpus::video(std::size_t video) const {
    const auto& rec = records_.at(video);
    AnnotatedVideo out;
    out.video_id = rec.video_id;
    for (const auto& shot : rec.shots) {
        Shot s;
        for (auto fid : shot) s.frames.push_back(frame(video, fid));
        out.shots.push_back(std::move(s));
    }
    return out;
}

void write_corpus(const std::filesystem::path& dir, std::span<const AnnotatedVideo> videos) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
    if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.jsonl").string());
    for (const auto& v : videos) {
        std::vector<hvt1::Entry> entries;
        json shots = json::array();
        json boxes = json::array();
        std::vector<int> categories;
        bool has_categories = false;
        std::size_t next = 0;
        for (const auto& shot : v.shots) {
            json ids = json::array();
            for (const auto& f : shot.frames) {
                const std::size_t id = next++;
                ids.push_back(id);
                entries.push_back({frame_entry_name(id), f.image.shape(),
                                   std::vector<double>(f.image.data().begin(), f.image.data().end())});
                for (const auto& b : f.boxes)
                    boxes.push_back(json::array({id, b.category_id, b.score, b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max}));
                categories.push_back(f.frame_category.value_or(0));
                has_categories = has_categories || f.frame_category.has_value();
            }
            shots.push_back(std::move(ids));
        }
        const std::string file = v.video_id + ".hvt";
        hvt1::write_file(dir / file, entries);
        json rec = {{"video_id", v.video_id}, {"frames_file", file}, {"shots", shots}, {"boxes", boxes}};
        if (has_categories) rec["frame_categories"] = categories;
        manifest << rec.dump() << '\n';
    }
}

}  // namespace hiervid
