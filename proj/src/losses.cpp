#include "hiervid/losses.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "hiervid/kernels.hpp"
#include "hiervid/ops.hpp"

namespace hiervid {

void LossWeights::validate() const {
    if (omega < 0 || beta < 0 || gamma < 0 || margin_frame < 0 || margin_object < 0 || bce_weight < 0)
        throw std::invalid_argument("loss weights and margins must be non-negative");
}

Tensor infonce_from_scores(std::span<const Tensor> score_matrices) {
    if (score_matrices.empty()) throw ShapeError("shot_infonce", "no prediction slots");
    Tensor total;
    std::size_t terms = 0;
    for (const auto& s : score_matrices) {
        if (s.rank() != 2 || s.dim(0) != s.dim(1)) throw ShapeError("shot_infonce", "score matrix must be square, got " + shape_str(s.shape()));
        const std::size_t n = s.dim(0);
        if (n < 2) throw ShapeError("shot_infonce", "need at least 2 videos in the batch");
        std::vector<double> eye(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
        const Tensor positive = sum(mul(s, Tensor::from({n, n}, std::move(eye))), 1);
        // Row i: logsumexp_j (g_ij - g_ii) - ln N. Entry (j, i) of the transpose
        // minus g_ii; a uniform critic then gives exactly log N - log N.
        const Tensor centered = sub(transpose(s), positive);
        const Tensor per_row = add_scalar(logsumexp(centered, 0), -std::log(static_cast<double>(n)));
        const Tensor slot = sum(per_row);
        total = total.defined() ? add(total, slot) : slot;
        terms += n;
    }
    return scale(total, 1.0 / static_cast<double>(terms));
}

Tensor shot_infonce(std::span<const Tensor> predictions, std::span<const Tensor> targets, const ModelParams& params) {
    if (predictions.size() != targets.size())
        throw ShapeError("shot_infonce", std::to_string(predictions.size()) + " prediction slots vs " +
                                             std::to_string(targets.size()) + " target slots");
    std::vector<Tensor> scores;
    for (std::size_t k = 0; k < predictions.size(); ++k) {
        if (predictions[k].shape() != targets[k].shape()) throw ShapeError("shot_infonce", predictions[k].shape(), targets[k].shape());
        scores.push_back(critic_matrix(predictions[k], targets[k], params));
    }
    return infonce_from_scores(scores);
}

std::vector<AnchorPositive> same_label_pairs(std::span<const int> labels, std::span<const std::size_t> pools) {
    std::vector<AnchorPositive> pairs;
    for (std::size_t a = 0; a < labels.size(); ++a)
        for (std::size_t p = 0; p < labels.size(); ++p)
            if (a != p && labels[a] == labels[p] && (pools.empty() || pools[a] == pools[p])) pairs.push_back({a, p});
    return pairs;
}

MiningResult semi_hard_mine(std::span<const double> embeddings, std::size_t dim, std::span<const int> labels,
                            std::span<const AnchorPositive> pairs, std::span<const std::size_t> pools) {
    const std::size_t n = labels.size();
    if (embeddings.size() != n * dim) throw ShapeError("semi_hard_mine", "embedding buffer does not match labels");
    // Squared distances from each anchor row, computed on demand.
    std::vector<std::vector<double>> dist(n);
    auto row = [&](std::size_t a) -> const std::vector<double>& {
        if (dist[a].empty()) {
            dist[a].resize(n);
            kernels::sq_dist_rows(embeddings, embeddings.subspan(a * dim, dim), dist[a]);
        }
        return dist[a];
    };
    MiningResult out;
    for (const auto& pr : pairs) {
        const auto& d = row(pr.anchor);
        const double dap = d[pr.positive];
        std::size_t semi = n, far = n;
        for (std::size_t c = 0; c < n; ++c) {
            if (labels[c] == labels[pr.anchor]) continue;
            if (!pools.empty() && pools[c] != pools[pr.anchor]) continue;
            if (d[c] > dap && (semi == n || d[c] < d[semi])) semi = c;
            if (far == n || d[c] > d[far]) far = c;
        }
        if (far == n) {
            ++out.skipped;
            continue;
        }
        out.triplets.push_back({pr.anchor, pr.positive, semi != n ? semi : far});
    }
    return out;
}

LossTerm triplet_loss(const Tensor& embeddings, std::span<const Triplet> triplets, double margin) {
    LossTerm term;
    if (triplets.empty()) {
        term.value = Tensor::scalar(0.0);
        term.empty = true;
        return term;
    }
    std::vector<std::size_t> a, p, n;
    for (const auto& t : triplets) {
        a.push_back(t.anchor);
        p.push_back(t.positive);
        n.push_back(t.negative);
    }
    const Tensor ea = gather_rows(embeddings, a);
    const Tensor ap = sub(ea, gather_rows(embeddings, p));
    const Tensor an = sub(ea, gather_rows(embeddings, n));
    const Tensor dap = sum(mul(ap, ap), 1);
    const Tensor dan = sum(mul(an, an), 1);
    term.value = mean(relu(add_scalar(sub(dap, dan), margin)));
    term.triplets = triplets.size();
    return term;
}

namespace {

LossTerm mined_loss(const EmbeddingSet& set, double margin, std::span<const std::size_t> pools) {
    LossTerm term;
    std::set<int> distinct(set.labels.begin(), set.labels.end());
    if (distinct.size() < 2 || !set.embeddings.defined()) {
        term.value = Tensor::scalar(0.0);
        term.empty = true;
        return term;
    }
    const auto pairs = same_label_pairs(set.labels, pools);
    const auto mined = semi_hard_mine(set.embeddings.data(), set.embeddings.dim(1), set.labels, pairs, pools);
    term = triplet_loss(set.embeddings, mined.triplets, margin);
    term.skipped = mined.skipped;
    return term;
}

}  // namespace

LossTerm frame_loss(const EmbeddingSet& frames, double margin) { return mined_loss(frames, margin, {}); }

LossTerm object_loss(const EmbeddingSet& boxes, double margin, ObjectPool pool) {
    if (pool == ObjectPool::batch) return mined_loss(boxes, margin, {});
    std::vector<std::size_t> ids;
    std::vector<GroupKey> seen;
    for (const auto& k : boxes.keys) {
        std::size_t id = 0;
        while (id < seen.size() && !(seen[id] == k)) ++id;
        if (id == seen.size()) seen.push_back(k);
        ids.push_back(id);
    }
    return mined_loss(boxes, margin, ids);
}

double combined_loss(double object, double frame, double shot, const LossWeights& weights) {
    return weights.omega * object + frame + weights.beta * shot;
}

Tensor combined_loss(const Tensor& object, const Tensor& frame, const Tensor& shot, const LossWeights& weights) {
    return add(add(scale(object, weights.omega), frame), scale(shot, weights.beta));
}

namespace {

Tensor one_hot(std::span<const int> labels, std::size_t classes, const char* op) {
    std::vector<double> t(labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw std::out_of_range(std::string(op) + ": label " + std::to_string(labels[i]) + " outside [0, " +
                                    std::to_string(classes) + ")");
        t[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor::from({labels.size(), classes}, std::move(t));
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw ShapeError("cross_entropy", "logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) + " labels");
    const Tensor target = one_hot(labels, logits.dim(1), "cross_entropy");
    return mean(sub(logsumexp(logits, 1), sum(mul(logits, target), 1)));
}

Tensor supervised_ce(const Tensor& pooled, std::span<const int> labels, const ModelParams& params) {
    return cross_entropy(supervised_logits(pooled, params), labels);
}

Tensor binary_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw ShapeError("binary_cross_entropy", "logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) + " labels");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    const Tensor target = one_hot(labels, c, "binary_cross_entropy");
    // softplus(z) = logsumexp([0, z]) keeps saturated logits finite.
    const Tensor z = reshape(logits, {n, c, 1});
    const Tensor pair[] = {Tensor::zeros({n, c, 1}), z};
    const Tensor softplus = logsumexp(concat(pair, 2), 2);
    return mean(sub(softplus, mul(logits, target)));
}

Tensor object_bce(const Tensor& box_features, std::span<const int> labels, const ModelParams& params) {
    return binary_cross_entropy(bce_logits(box_features, params), labels);
}

}  // namespace hiervid
