#pragma once
// Grid encoder and the heads built on top of it.
//
// The encoder maps an H x W x C image to an (H/s) x (W/s) x C' feature grid:
// an affine patch embedding followed by `blocks` mixing blocks, each
//     y = x + gate * mean3x3(x)
//     z = y + W2 relu(W1 y + b1) + b2
// so a grid cell only sees pixels within `blocks` cells of its own patch.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hiervid/hvt1.hpp"
#include "hiervid/rng.hpp"
#include "hiervid/tensor.hpp"

namespace hiervid {

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t channels = 3;
    std::size_t stride = 8;
    std::size_t grid_channels = 64;  // C'
    std::size_t blocks = 2;
    std::size_t mlp_hidden = 64;
    std::size_t embed_dim = 32;  // d
    std::size_t head_hidden = 64;
    std::size_t lstm_hidden = 32;
    int num_categories = 6;
    /// Frame triplet loss on the projected embedding (true) or on pooled grid features.
    bool project_frames = true;
    /// Box embeddings pass through the object head before the triplet loss.
    bool project_objects = true;

    std::size_t grid_size() const { return image_size / stride; }
    /// Dimension of frame representations f, shot representations s and predictions.
    std::size_t repr_dim() const { return project_frames ? embed_dim : grid_channels; }
    void validate() const;
};

/// All learnable weights, held as named requires_grad leaves in a fixed order.
class ModelParams {
  public:
    static ModelParams init(const ModelConfig& config, std::uint64_t seed);
    static ModelParams from_entries(const ModelConfig& config, const std::vector<hvt1::Entry>& entries);

    const ModelConfig& config() const { return config_; }
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor>>& named() const { return params_; }
    std::vector<Tensor> tensors() const;

    std::vector<hvt1::Entry> to_entries() const;
    void zero_grad();
    /// Copy whose tensors do not require gradients; forward passes on it build no graph.
    ModelParams frozen() const;

  private:
    ModelConfig config_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

/// Feature grids for a batch of frames, stored as [frames * H' * W', C'] rows
/// in (frame, row, col) order.
struct GridBatch {
    Tensor values;
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;

    std::size_t row_of(std::size_t frame, std::size_t r, std::size_t c) const { return (frame * height + r) * width + c; }
};

struct FeatureGrid {
    Tensor values;  // H' x W' x C'
};

GridBatch encode_batch(std::span<const Tensor> images, const ModelParams& params);
FeatureGrid encode_grid(const Tensor& image, const ModelParams& params);

/// Mean over grid cells: [frames, C'].
Tensor pool_frames(const GridBatch& grids);
/// Two-layer head `prefix` (`prefix.w1` ... `prefix.b2`) applied row-wise.
Tensor apply_head(const Tensor& x, const ModelParams& params, const std::string& prefix);

/// Frame representation per frame: [frames, repr_dim]. Normalized rows when requested.
Tensor frame_representations(const GridBatch& grids, const ModelParams& params, bool normalize);
/// Single-grid form of frame_representations.
Tensor frame_embed(const FeatureGrid& grid, const ModelParams& params, bool normalize);

/// Arithmetic mean of a non-empty list of equally sized vectors.
Tensor aggregate_shot(std::span<const Tensor> frame_embeddings);

/// Runs the LSTM over s_1..s_l (each [batch, repr]) and emits m predictions,
/// feeding each prediction back as the next input.
std::vector<Tensor> predict_next_shots(std::span<const Tensor> shot_reps, const ModelParams& params, std::size_t m);

/// g(pred, target) = pred^T B target for single vectors.
Tensor critic_score(const Tensor& prediction, const Tensor& target, const ModelParams& params);
/// All-pairs critic: [batch, batch] with entry (i, j) = g(pred_i, target_j).
Tensor critic_matrix(const Tensor& predictions, const Tensor& targets, const ModelParams& params);

/// Affine classifier logits on pooled features: [frames, num_categories].
Tensor supervised_logits(const Tensor& pooled, const ModelParams& params);
/// Affine BCE-head logits on raw box features: [boxes, num_categories].
Tensor bce_logits(const Tensor& box_features, const ModelParams& params);

}  // namespace hiervid
