#pragma once
// Shot-level InfoNCE, frame- and object-level semi-hard triplet losses, and
// the combined and supervised objectives.

#include <cstddef>
#include <span>
#include <vector>

#include "hiervid/encoder.hpp"
#include "hiervid/pooling.hpp"
#include "hiervid/tensor.hpp"

namespace hiervid {

struct LossWeights {
    double omega = 5.0;   // object loss
    double beta = 0.04;   // shot loss
    double gamma = 0.0;   // supervised cotraining term
    double margin_frame = 0.2;
    double margin_object = 0.2;
    double bce_weight = 0.1;

    void validate() const;
};

/// Mean over all (video, slot) terms of
///   -log( exp(S[i][i]) / ((1/N) sum_j exp(S[i][j])) )
/// for each N x N critic score matrix S (rows: predictions, columns: targets).
Tensor infonce_from_scores(std::span<const Tensor> score_matrices);

/// predictions[k] and targets[k] are [N, d] for the same shot slot; the
/// critic compares every prediction with every target in that slot.
Tensor shot_infonce(std::span<const Tensor> predictions, std::span<const Tensor> targets, const ModelParams& params);

struct Triplet {
    std::size_t anchor = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;
    bool operator==(const Triplet&) const = default;
};

struct AnchorPositive {
    std::size_t anchor = 0;
    std::size_t positive = 0;
};

struct MiningResult {
    std::vector<Triplet> triplets;
    std::size_t skipped = 0;  // pairs without any differing-label candidate
};

/// Ordered pairs (a, p), a != p, with equal labels and (when `pools` is
/// non-empty) equal pool ids.
std::vector<AnchorPositive> same_label_pairs(std::span<const int> labels, std::span<const std::size_t> pools = {});

/// For each pair: the closest differing-label candidate strictly farther than
/// the positive; failing that, the farthest one. Ties go to the lowest row.
/// Candidates are restricted to the anchor's pool when `pools` is non-empty.
MiningResult semi_hard_mine(std::span<const double> embeddings, std::size_t dim, std::span<const int> labels,
                            std::span<const AnchorPositive> pairs, std::span<const std::size_t> pools = {});

struct LossTerm {
    Tensor value;           // scalar
    bool empty = false;     // no usable triplets / pairs: value is a constant 0
    std::size_t triplets = 0;
    std::size_t skipped = 0;
};

/// Mean over triplets of max(|a-p|^2 - |a-n|^2 + margin, 0).
LossTerm triplet_loss(const Tensor& embeddings, std::span<const Triplet> triplets, double margin);

/// Labels are shot ids; positives are frames of the same shot, negatives any other shot in the batch.
LossTerm frame_loss(const EmbeddingSet& frames, double margin);

enum class ObjectPool { batch, per_frame };

/// Labels are categories; positives share a category, negatives differ.
LossTerm object_loss(const EmbeddingSet& boxes, double margin, ObjectPool pool = ObjectPool::batch);

double combined_loss(double object, double frame, double shot, const LossWeights& weights);
Tensor combined_loss(const Tensor& object, const Tensor& frame, const Tensor& shot, const LossWeights& weights);

/// Mean of -log softmax(logits)[label] over rows.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Affine head + softmax cross-entropy on pooled frame features.
Tensor supervised_ce(const Tensor& pooled, std::span<const int> labels, const ModelParams& params);

/// Mean over rows and categories of sigmoid binary cross-entropy against one-hot targets.
Tensor binary_cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor object_bce(const Tensor& box_features, std::span<const int> labels, const ModelParams& params);

}  // namespace hiervid
