#include "hiervid/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "hiervid/ops.hpp"

namespace hiervid {

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (stride == 0 || image_size == 0 || image_size % stride != 0)
        fail("image_size " + std::to_string(image_size) + " must be a positive multiple of stride " + std::to_string(stride));
    if (channels == 0 || grid_channels == 0 || mlp_hidden == 0 || embed_dim == 0 || head_hidden == 0 || lstm_hidden == 0)
        fail("all layer widths must be positive");
    if (num_categories < 1) fail("num_categories must be positive");
}

namespace {

Tensor normal_leaf(Rng& rng, Shape shape, double stddev) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = normal(rng, 0.0, stddev);
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor const_leaf(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    p.config_ = config;
    Rng rng = make_rng(seed, "init");
    const std::size_t cg = config.grid_channels;
    const std::size_t pd = config.stride * config.stride * config.channels;
    const std::size_t r = config.repr_dim();
    const std::size_t h = config.lstm_hidden;
    const auto nc = static_cast<std::size_t>(config.num_categories);
    auto add = [&](std::string name, Tensor t) { p.params_.emplace_back(std::move(name), std::move(t)); };
    auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

    add("patch.w", normal_leaf(rng, {pd, cg}, 2.0 * fan(pd)));
    add("patch.b", const_leaf({cg}, 0.0));
    for (std::size_t b = 0; b < config.blocks; ++b) {
        const std::string k = "block" + std::to_string(b);
        add(k + ".gate", const_leaf({}, 0.5));
        add(k + ".mlp1.w", normal_leaf(rng, {cg, config.mlp_hidden}, std::sqrt(2.0) * fan(cg)));
        add(k + ".mlp1.b", const_leaf({config.mlp_hidden}, 0.0));
        add(k + ".mlp2.w", normal_leaf(rng, {config.mlp_hidden, cg}, 0.5 * fan(config.mlp_hidden)));
        add(k + ".mlp2.b", const_leaf({cg}, 0.0));
    }
    auto head = [&](const std::string& prefix, std::size_t in, std::size_t out) {
        add(prefix + ".w1", normal_leaf(rng, {in, config.head_hidden}, std::sqrt(2.0) * fan(in)));
        add(prefix + ".b1", const_leaf({config.head_hidden}, 0.0));
        add(prefix + ".w2", normal_leaf(rng, {config.head_hidden, out}, fan(config.head_hidden)));
        add(prefix + ".b2", const_leaf({out}, 0.0));
    };
    if (config.project_frames) head("head.frame", cg, config.embed_dim);
    if (config.project_objects) head("head.object", cg, config.embed_dim);

    add("lstm.wx", normal_leaf(rng, {r, 4 * h}, fan(r)));
    add("lstm.wh", normal_leaf(rng, {h, 4 * h}, fan(h)));
    std::vector<double> bias(4 * h, 0.0);
    for (std::size_t i = h; i < 2 * h; ++i) bias[i] = 1.0;  // forget gate
    add("lstm.b", Tensor::from({4 * h}, std::move(bias), true));
    add("lstm.out.w", normal_leaf(rng, {h, r}, fan(h)));
    add("lstm.out.b", const_leaf({r}, 0.0));
    add("critic.B", normal_leaf(rng, {r, r}, fan(r)));

    add("head.supervised.w", normal_leaf(rng, {cg, nc}, fan(cg)));
    add("head.supervised.b", const_leaf({nc}, 0.0));
    add("head.bce.w", normal_leaf(rng, {cg, nc}, fan(cg)));
    add("head.bce.b", const_leaf({nc}, 0.0));
    return p;
}

ModelParams ModelParams::from_entries(const ModelConfig& config, const std::vector<hvt1::Entry>& entries) {
    ModelParams p = init(config, 0);
    for (auto& [name, tensor] : p.params_) {
        const hvt1::Entry* found = nullptr;
        for (const auto& e : entries)
            if (e.name == name) found = &e;
        if (!found) throw std::runtime_error("checkpoint lacks parameter " + name);
        if (found->shape != tensor.shape())
            throw std::runtime_error("checkpoint parameter " + name + " has shape " + shape_str(found->shape) +
                                     ", model expects " + shape_str(tensor.shape()));
        tensor = Tensor::from(found->shape, found->values, true);
    }
    return p;
}

const Tensor& ModelParams::get(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return t;
    throw std::out_of_range("no parameter named " + name);
}

bool ModelParams::contains(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return true;
    return false;
}

std::vector<Tensor> ModelParams::tensors() const {
    std::vector<Tensor> out;
    for (const auto& [n, t] : params_) out.push_back(t);
    return out;
}

std::vector<hvt1::Entry> ModelParams::to_entries() const {
    std::vector<hvt1::Entry> out;
    for (const auto& [n, t] : params_) out.push_back({n, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
    return out;
}

void ModelParams::zero_grad() {
    for (auto& [n, t] : params_) t.zero_grad();
}

ModelParams ModelParams::frozen() const {
    ModelParams p;
    p.config_ = config_;
    for (const auto& [n, t] : params_) p.params_.emplace_back(n, t.detach());
    return p;
}

GridBatch encode_batch(std::span<const Tensor> images, const ModelParams& params) {
    const auto& cfg = params.config();
    if (images.empty()) throw ShapeError("encode_grid", "no images");
    std::vector<Tensor> stacked;
    stacked.reserve(images.size());
    for (const auto& img : images) {
        if (img.rank() != 3 || img.dim(2) != cfg.channels)
            throw ShapeError("encode_grid", "image shape " + shape_str(img.shape()) + " incompatible with " +
                                                std::to_string(cfg.channels) + " channels");
        if (img.dim(0) % cfg.stride != 0 || img.dim(1) % cfg.stride != 0)
            throw ShapeError("encode_grid", "image " + shape_str(img.shape()) + " not divisible by stride " +
                                                std::to_string(cfg.stride));
        stacked.push_back(reshape(img, {1, img.dim(0), img.dim(1), img.dim(2)}));
    }
    const Tensor batch = stacked.size() == 1 ? stacked[0] : concat(stacked, 0);
    GridBatch g;
    g.frames = images.size();
    g.height = batch.dim(1) / cfg.stride;
    g.width = batch.dim(2) / cfg.stride;
    g.channels = cfg.grid_channels;

    Tensor x = add(matmul(patchify(batch, cfg.stride), params.get("patch.w")), params.get("patch.b"));
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string k = "block" + std::to_string(b);
        const Tensor y = add(x, mul(neighbor_mean(x, g.frames, g.height, g.width), params.get(k + ".gate")));
        const Tensor hidden = relu(add(matmul(y, params.get(k + ".mlp1.w")), params.get(k + ".mlp1.b")));
        x = add(y, add(matmul(hidden, params.get(k + ".mlp2.w")), params.get(k + ".mlp2.b")));
    }
    g.values = x;
    return g;
}

FeatureGrid encode_grid(const Tensor& image, const ModelParams& params) {
    const auto g = encode_batch(std::span<const Tensor>(&image, 1), params);
    return {reshape(g.values, {g.height, g.width, g.channels})};
}

Tensor pool_frames(const GridBatch& grids) {
    return mean(reshape(grids.values, {grids.frames, grids.height * grids.width, grids.channels}), 1);
}

Tensor apply_head(const Tensor& x, const ModelParams& params, const std::string& prefix) {
    const Tensor hidden = relu(add(matmul(x, params.get(prefix + ".w1")), params.get(prefix + ".b1")));
    return add(matmul(hidden, params.get(prefix + ".w2")), params.get(prefix + ".b2"));
}

Tensor frame_representations(const GridBatch& grids, const ModelParams& params, bool normalize) {
    Tensor f = pool_frames(grids);
    if (params.config().project_frames) f = apply_head(f, params, "head.frame");
    return normalize ? l2_normalize(f, 1) : f;
}

Tensor frame_embed(const FeatureGrid& grid, const ModelParams& params, bool normalize) {
    const auto& s = grid.values.shape();
    if (s.size() != 3) throw ShapeError("frame_embed", "grid must be H' x W' x C', got " + shape_str(s));
    GridBatch g{reshape(grid.values, {s[0] * s[1], s[2]}), 1, s[0], s[1], s[2]};
    return reshape(frame_representations(g, params, normalize), {params.config().repr_dim()});
}

Tensor aggregate_shot(std::span<const Tensor> frame_embeddings) {
    if (frame_embeddings.empty()) throw ShapeError("aggregate_shot", "empty frame list");
    Tensor acc = frame_embeddings[0];
    for (std::size_t i = 1; i < frame_embeddings.size(); ++i) acc = add(acc, frame_embeddings[i]);
    return scale(acc, 1.0 / static_cast<double>(frame_embeddings.size()));
}

std::vector<Tensor> predict_next_shots(std::span<const Tensor> shot_reps, const ModelParams& params, std::size_t m) {
    if (shot_reps.empty()) throw ShapeError("predict_next_shots", "empty shot prefix");
    if (m == 0) throw ShapeError("predict_next_shots", "need at least one prediction step");
    const std::size_t h = params.config().lstm_hidden;
    const bool vector_input = shot_reps[0].rank() == 1;
    auto as_batch = [&](const Tensor& t) { return vector_input ? reshape(t, {1, t.dim(0)}) : t; };
    const std::size_t batch = as_batch(shot_reps[0]).dim(0);

    Tensor hidden = Tensor::zeros({batch, h});
    Tensor cell = Tensor::zeros({batch, h});
    const Tensor& wx = params.get("lstm.wx");
    const Tensor& wh = params.get("lstm.wh");
    const Tensor& bias = params.get("lstm.b");
    auto step = [&](const Tensor& input) {
        const Tensor gates = add(add(matmul(input, wx), matmul(hidden, wh)), bias);
        const Tensor i = sigmoid(slice(gates, 1, 0, h));
        const Tensor f = sigmoid(slice(gates, 1, h, 2 * h));
        const Tensor g = tanh(slice(gates, 1, 2 * h, 3 * h));
        const Tensor o = sigmoid(slice(gates, 1, 3 * h, 4 * h));
        cell = add(mul(f, cell), mul(i, g));
        hidden = mul(o, tanh(cell));
        return add(matmul(hidden, params.get("lstm.out.w")), params.get("lstm.out.b"));
    };
    Tensor prediction;
    for (const auto& s : shot_reps) prediction = step(as_batch(s));
    std::vector<Tensor> out{prediction};
    while (out.size() < m) out.push_back(step(out.back()));
    if (vector_input)
        for (auto& t : out) t = reshape(t, {t.dim(1)});
    return out;
}

Tensor critic_score(const Tensor& prediction, const Tensor& target, const ModelParams& params) {
    const Tensor& b = params.get("critic.B");
    if (prediction.rank() != 1 || target.rank() != 1 || prediction.dim(0) != b.dim(0) || target.dim(0) != b.dim(1))
        throw ShapeError("critic_score", "expected vectors of length " + std::to_string(b.dim(0)) + " and " +
                                             std::to_string(b.dim(1)) + ", got " + shape_str(prediction.shape()) +
                                             " and " + shape_str(target.shape()));
    const Tensor left = matmul(reshape(prediction, {1, prediction.dim(0)}), b);
    return reshape(matmul(left, reshape(target, {target.dim(0), 1})), {});
}

Tensor critic_matrix(const Tensor& predictions, const Tensor& targets, const ModelParams& params) {
    return matmul(matmul(predictions, params.get("critic.B")), transpose(targets));
}

Tensor supervised_logits(const Tensor& pooled, const ModelParams& params) {
    return add(matmul(pooled, params.get("head.supervised.w")), params.get("head.supervised.b"));
}

Tensor bce_logits(const Tensor& box_features, const ModelParams& params) {
    return add(matmul(box_features, params.get("head.bce.w")), params.get("head.bce.b"));
}

}  // namespace hiervid
