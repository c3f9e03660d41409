#pragma once
// Box representations read from the feature grid: each box maps to the grid
// cell under its center pixel.

#include <cstddef>
#include <span>
#include <vector>

#include "hiervid/encoder.hpp"
#include "hiervid/hierarchy.hpp"

namespace hiervid {

struct GridCell {
    std::size_t row = 0;
    std::size_t col = 0;
    bool operator==(const GridCell&) const = default;
};

/// Center pixel (i, j) = ((y_min+y_max)/2 * H, (x_min+x_max)/2 * W) maps to
/// (floor(i H'/H), floor(j W'/W)), clamped to the grid.
GridCell box_to_cell(const BBox& box, std::size_t height, std::size_t width, std::size_t grid_height,
                     std::size_t grid_width);

struct GroupKey {
    std::size_t video = 0;
    std::size_t shot = 0;
    std::size_t frame = 0;
    bool operator==(const GroupKey&) const = default;
};

/// Embeddings with one label per row. Labels are categories for the object
/// loss and shot ids for the frame loss.
struct EmbeddingSet {
    Tensor embeddings;  // [n, d]
    std::vector<int> labels;
    std::vector<GroupKey> keys;
    bool normalized = false;

    std::size_t size() const { return labels.size(); }
};

/// A box attached to a frame of a GridBatch.
struct BoxRef {
    std::size_t frame = 0;  // index into the GridBatch
    DetectedBox box;
    GroupKey key;
};

struct GatheredBoxes {
    Tensor raw;          // [n, C'] grid cells
    EmbeddingSet set;    // projected / normalized per options
};

/// r_b = grid[cell(b)], optionally through the object head, optionally L2-normalized.
GatheredBoxes gather_box_embeddings(const GridBatch& grids, std::span<const BoxRef> boxes, const ModelParams& params,
                                    bool project, bool normalize, std::size_t image_height, std::size_t image_width);

}  // namespace hiervid
