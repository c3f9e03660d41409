#include "hiervid/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "hiervid/parallel.hpp"

namespace hiervid {

namespace {

struct SceneObject {
    int category = 0;
    std::array<double, 3> color{};
    double scale = 0.2;  // full extent, normalized
    double cx = 0.5;
    double cy = 0.5;
    double vx = 0.0;
    double vy = 0.0;
};

// Shape membership in object-local coordinates scaled to the half extent.
bool inside(ShapeKind kind, double u, double v) {
    switch (kind) {
        case ShapeKind::disk: return u * u + v * v <= 1.0;
        case ShapeKind::square: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
        case ShapeKind::triangle: return v <= 0.8 && v >= -0.8 && std::abs(u) <= 0.9 * (v + 0.8) / 1.6;
        case ShapeKind::cross:
            return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
        case ShapeKind::ring: {
            const double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.55 * 0.55;
        }
        case ShapeKind::bar: return std::abs(u) <= 1.0 && std::abs(v) <= 0.3;
    }
    return false;
}

// Half extents of each shape in local units: (x, y).
std::array<double, 2> extent(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::disk:
        case ShapeKind::ring:
        case ShapeKind::cross: return {1.0, 1.0};
        case ShapeKind::square: return {0.8, 0.8};
        case ShapeKind::triangle: return {0.9, 0.8};
        case ShapeKind::bar: return {1.0, 0.3};
    }
    return {1.0, 1.0};
}

BBox box_of(const SceneObject& o) {
    const auto e = extent(shape_for_category(o.category));
    const double half = 0.5 * o.scale;
    BBox b{o.cx - e[0] * half, o.cy - e[1] * half, o.cx + e[0] * half, o.cy + e[1] * half};
    b.x_min = std::clamp(b.x_min, 0.0, 1.0);
    b.y_min = std::clamp(b.y_min, 0.0, 1.0);
    b.x_max = std::clamp(b.x_max, 0.0, 1.0);
    b.y_max = std::clamp(b.y_max, 0.0, 1.0);
    return b;
}

// Reflects a coordinate (and its velocity) into [lo, hi].
void reflect(double& p, double& v, double lo, double hi) {
    for (int guard = 0; guard < 8 && (p < lo || p > hi); ++guard) {
        if (p < lo) {
            p = 2.0 * lo - p;
            v = -v;
        } else if (p > hi) {
            p = 2.0 * hi - p;
            v = -v;
        }
    }
    p = std::clamp(p, lo, hi);
}

constexpr double kCenterLo = 0.1;
constexpr double kCenterHi = 0.9;

std::array<double, 3> random_color(Rng& rng) { return {uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)}; }

std::vector<double> make_background(const SceneSpec& spec, Rng& rng) {
    const std::size_t n = spec.image_size;
    const std::size_t c = spec.channels;
    std::vector<int> kinds;
    if (spec.background_solid) kinds.push_back(0);
    if (spec.background_gradient) kinds.push_back(1);
    if (spec.background_noise) kinds.push_back(2);
    const int kind = kinds[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(kinds.size()) - 1))];
    std::vector<double> bg(n * n * c);
    std::array<double, 3> a = random_color(rng);
    std::array<double, 3> b = random_color(rng);
    const double angle = uniform(rng, 0.0, 2.0 * M_PI);
    const double dx = std::cos(angle), dy = std::sin(angle);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t k = ch % 3;
                double v = a[k];
                if (kind == 1) {
                    const double t = 0.5 + 0.5 * ((x / double(n) - 0.5) * dx + (y / double(n) - 0.5) * dy) * 1.41421356;
                    v = a[k] + (b[k] - a[k]) * std::clamp(t, 0.0, 1.0);
                } else if (kind == 2) {
                    v = a[k] + uniform(rng, -0.15, 0.15);
                }
                bg[(y * n + x) * c + ch] = std::clamp(v, 0.0, 1.0);
            }
    return bg;
}

Tensor render(const SceneSpec& spec, const std::vector<double>& background, const std::vector<SceneObject>& objects) {
    const std::size_t n = spec.image_size;
    const std::size_t c = spec.channels;
    std::vector<double> img = background;
    for (const auto& o : objects) {
        const ShapeKind kind = shape_for_category(o.category);
        const double half = 0.5 * o.scale;
        const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor((o.cx - half) * n)));
        const auto x1 = static_cast<std::size_t>(std::min(double(n - 1), std::ceil((o.cx + half) * n)));
        const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor((o.cy - half) * n)));
        const auto y1 = static_cast<std::size_t>(std::min(double(n - 1), std::ceil((o.cy + half) * n)));
        for (std::size_t y = y0; y <= y1; ++y)
            for (std::size_t x = x0; x <= x1; ++x) {
                const double u = ((x + 0.5) / n - o.cx) / half;
                const double v = ((y + 0.5) / n - o.cy) / half;
                if (!inside(kind, u, v)) continue;
                for (std::size_t ch = 0; ch < c; ++ch) img[(y * n + x) * c + ch] = o.color[ch % 3];
            }
    }
    return Tensor::from({n, n, c}, std::move(img));
}

std::vector<SceneObject> make_objects(const SceneSpec& spec, Rng& rng) {
    const int count = static_cast<int>(uniform_int(rng, spec.objects_min, spec.objects_max));
    std::vector<SceneObject> objects;
    for (int i = 0; i < count; ++i) {
        SceneObject o;
        o.category = static_cast<int>(uniform_int(rng, 0, spec.num_categories - 1));
        o.color = random_color(rng);
        o.scale = uniform(rng, spec.scale_min, spec.scale_max);
        o.cx = uniform(rng, kCenterLo, kCenterHi);
        o.cy = uniform(rng, kCenterLo, kCenterHi);
        const double speed = spec.max_speed > 0.0 ? uniform(rng, 0.0, spec.max_speed) : 0.0;
        const double dir = uniform(rng, 0.0, 2.0 * M_PI);
        o.vx = speed * std::cos(dir);
        o.vy = speed * std::sin(dir);
        objects.push_back(o);
    }
    return objects;
}

int largest_category(const std::vector<SceneObject>& objects, std::size_t* index = nullptr) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < objects.size(); ++i)
        if (objects[i].scale > objects[best].scale) best = i;
    if (index) *index = best;
    return objects[best].category;
}

BBox clamp_min_side(BBox b) {
    auto fix = [](double& lo, double& hi) {
        lo = std::clamp(lo, 0.0, 1.0);
        hi = std::clamp(hi, 0.0, 1.0);
        if (lo > hi) std::swap(lo, hi);
        if (hi - lo < kMinBoxSide) {
            const double mid = std::clamp(0.5 * (lo + hi), kMinBoxSide / 2, 1.0 - kMinBoxSide / 2);
            lo = mid - kMinBoxSide / 2;
            hi = mid + kMinBoxSide / 2;
        }
    };
    fix(b.x_min, b.x_max);
    fix(b.y_min, b.y_max);
    return b;
}

template <class F>
AnnotatedVideo map_boxes(const AnnotatedVideo& video, F&& fn) {
    AnnotatedVideo out = video;
    for (auto& shot : out.shots)
        for (auto& frame : shot.frames) frame.boxes = fn(std::span<const DetectedBox>(frame.boxes));
    return out;
}

void check_prob(const char* name, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("detector noise: ") + name + " must lie in [0, 1]");
}

}  // namespace

const char* shape_kind_name(ShapeKind kind) {
    static constexpr const char* names[] = {"disk", "square", "triangle", "cross", "ring", "bar"};
    return names[static_cast<int>(kind)];
}

ShapeKind shape_for_category(int category) { return static_cast<ShapeKind>(((category % 6) + 6) % 6); }

void SceneSpec::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("scene spec: " + m); };
    if (num_categories < 1 || num_categories > 6) fail("num_categories must be in [1, 6] (one shape kind each)");
    if (objects_min < 1 || objects_max < objects_min) fail("need 1 <= objects_min <= objects_max");
    if (!(scale_min > 0.0) || scale_max < scale_min || scale_max > 1.0) fail("need 0 < scale_min <= scale_max <= 1");
    if (max_speed < 0.0) fail("max_speed must be >= 0");
    if (camera_jitter < 0.0) fail("camera_jitter must be >= 0");
    if (!background_solid && !background_gradient && !background_noise) fail("at least one background kind required");
    if (shot_length_min < 1 || shot_length_max < shot_length_min) fail("need 1 <= shot_length_min <= shot_length_max");
    if (shots_min < 1 || shots_max < shots_min) fail("need 1 <= shots_min <= shots_max");
    if (image_size < 1 || channels < 1) fail("image_size and channels must be positive");
}

DetectorNoise DetectorNoise::identity() {
    DetectorNoise n;
    n.label_flip_prob = 0.0;
    n.box_jitter_std = 0.0;
    n.miss_prob = 0.0;
    n.score_correct_mean = 1.0;
    n.score_correct_std = 0.0;
    n.score_flipped_mean = 1.0;
    n.score_flipped_std = 0.0;
    return n;
}

void DetectorNoise::validate() const {
    check_prob("label_flip_prob", label_flip_prob);
    check_prob("miss_prob", miss_prob);
    check_prob("score_correct_mean", score_correct_mean);
    check_prob("score_flipped_mean", score_flipped_mean);
    if (box_jitter_std < 0.0 || score_correct_std < 0.0 || score_flipped_std < 0.0)
        throw std::invalid_argument("detector noise: standard deviations must be >= 0");
}

AnnotatedVideo generate_video(const SceneSpec& spec, Rng& rng, const std::string& video_id) {
    spec.validate();
    AnnotatedVideo video;
    video.video_id = video_id;
    const auto base = make_objects(spec, rng);
    const int category = largest_category(base);
    const int num_shots = static_cast<int>(uniform_int(rng, spec.shots_min, spec.shots_max));
    for (int s = 0; s < num_shots; ++s) {
        const auto background = make_background(spec, rng);
        const double ox = uniform(rng, -spec.camera_jitter, spec.camera_jitter);
        const double oy = uniform(rng, -spec.camera_jitter, spec.camera_jitter);
        auto objects = base;
        for (auto& o : objects) {
            o.cx += ox;
            o.cy += oy;
            reflect(o.cx, o.vx, kCenterLo, kCenterHi);
            reflect(o.cy, o.vy, kCenterLo, kCenterHi);
        }
        const int length = static_cast<int>(uniform_int(rng, spec.shot_length_min, spec.shot_length_max));
        Shot shot;
        for (int f = 0; f < length; ++f) {
            if (f > 0)
                for (auto& o : objects) {
                    o.cx += o.vx;
                    o.cy += o.vy;
                    reflect(o.cx, o.vx, kCenterLo, kCenterHi);
                    reflect(o.cy, o.vy, kCenterLo, kCenterHi);
                }
            Frame frame;
            frame.image = render(spec, background, objects);
            for (const auto& o : objects) frame.boxes.push_back({o.category, 1.0, box_of(o)});
            frame.frame_category = category;
            shot.frames.push_back(std::move(frame));
        }
        video.shots.push_back(std::move(shot));
    }
    return video;
}

std::vector<AnnotatedVideo> generate_corpus(const SceneSpec& spec, std::size_t count, std::uint64_t seed,
                                            const std::string& id_prefix, std::size_t threads) {
    std::vector<AnnotatedVideo> videos(count);
    parallel_for(count, threads, [&](std::size_t i) {
        Rng rng = make_rng(seed, "video", i);
        char id[32];
        std::snprintf(id, sizeof id, "%06zu", i);
        videos[i] = generate_video(spec, rng, id_prefix + id);
    });
    return videos;
}

AnnotatedVideo simulate_detector(const AnnotatedVideo& video, const DetectorNoise& noise, int num_categories,
                                 Rng& rng, double score_threshold, std::size_t max_boxes) {
    noise.validate();
    return map_boxes(video, [&](std::span<const DetectedBox> boxes) {
        std::vector<DetectedBox> out;
        for (const auto& gt : boxes) {
            if (bernoulli(rng, noise.miss_prob)) continue;
            DetectedBox b = gt;
            if (noise.box_jitter_std > 0.0) {
                b.bbox.x_min += normal(rng, 0.0, noise.box_jitter_std);
                b.bbox.y_min += normal(rng, 0.0, noise.box_jitter_std);
                b.bbox.x_max += normal(rng, 0.0, noise.box_jitter_std);
                b.bbox.y_max += normal(rng, 0.0, noise.box_jitter_std);
                b.bbox = clamp_min_side(b.bbox);
            }
            const bool flip = num_categories > 1 && bernoulli(rng, noise.label_flip_prob);
            if (flip) {
                // uniform over the other categories
                int c = static_cast<int>(uniform_int(rng, 0, num_categories - 2));
                if (c >= gt.category_id) ++c;
                b.category_id = c;
            }
            const double mean = flip ? noise.score_flipped_mean : noise.score_correct_mean;
            const double sd = flip ? noise.score_flipped_std : noise.score_correct_std;
            b.score = std::clamp(normal(rng, mean, sd), 0.0, 1.0);
            out.push_back(b);
        }
        return filter_boxes(out, score_threshold, max_boxes);
    });
}

std::vector<DetectedBox> randomize_labels(std::span<const DetectedBox> boxes, int num_categories, Rng& rng) {
    std::vector<DetectedBox> out(boxes.begin(), boxes.end());
    for (auto& b : out) b.category_id = static_cast<int>(uniform_int(rng, 0, num_categories - 1));
    return out;
}

AnnotatedVideo randomize_labels(const AnnotatedVideo& video, int num_categories, Rng& rng) {
    return map_boxes(video, [&](std::span<const DetectedBox> b) { return randomize_labels(b, num_categories, rng); });
}

std::vector<DetectedBox> randomize_boxes(std::span<const DetectedBox> boxes, Rng& rng) {
    std::vector<DetectedBox> out(boxes.begin(), boxes.end());
    for (auto& b : out) {
        const double cx = uniform(rng, 0.0, 1.0);
        const double cy = uniform(rng, 0.0, 1.0);
        const double w = uniform(rng, 0.05, 0.5);
        const double h = uniform(rng, 0.05, 0.5);
        b.bbox = clamp_min_side({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
    }
    return out;
}

AnnotatedVideo randomize_boxes(const AnnotatedVideo& video, Rng& rng) {
    return map_boxes(video, [&](std::span<const DetectedBox> b) { return randomize_boxes(b, rng); });
}

StillSample generate_still(const SceneSpec& spec, Rng& rng) {
    spec.validate();
    const auto objects = make_objects(spec, rng);
    const auto background = make_background(spec, rng);
    StillSample s;
    s.image = render(spec, background, objects);
    std::size_t idx = 0;
    s.category = largest_category(objects, &idx);
    s.count = static_cast<int>(objects.size());
    s.quadrant = 2 * (objects[idx].cy >= 0.5 ? 1 : 0) + (objects[idx].cx >= 0.5 ? 1 : 0);
    return s;
}

std::vector<StillSample> generate_stills(const SceneSpec& spec, std::size_t count, std::uint64_t seed,
                                         std::size_t threads) {
    std::vector<StillSample> out(count);
    parallel_for(count, threads, [&](std::size_t i) {
        Rng rng = make_rng(seed, "still", i);
        out[i] = generate_still(spec, rng);
    });
    return out;
}

}  // namespace hiervid
