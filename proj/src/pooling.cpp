#include "hiervid/pooling.hpp"

#include <algorithm>
#include <cmath>

#include "hiervid/ops.hpp"

namespace hiervid {

GridCell box_to_cell(const BBox& box, std::size_t height, std::size_t width, std::size_t grid_height,
                     std::size_t grid_width) {
    if (!box.valid()) throw ShapeError("box_to_cell", "degenerate bounding box");
    const double i = box.center_y() * static_cast<double>(height);
    const double j = box.center_x() * static_cast<double>(width);
    auto cell = [](double pixel, std::size_t full, std::size_t grid) {
        const double v = std::floor(pixel * static_cast<double>(grid) / static_cast<double>(full));
        return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(grid - 1)));
    };
    return {cell(i, height, grid_height), cell(j, width, grid_width)};
}

GatheredBoxes gather_box_embeddings(const GridBatch& grids, std::span<const BoxRef> boxes, const ModelParams& params,
                                    bool project, bool normalize, std::size_t image_height, std::size_t image_width) {
    GatheredBoxes out;
    if (boxes.empty()) return out;
    std::vector<std::size_t> rows;
    rows.reserve(boxes.size());
    for (const auto& b : boxes) {
        if (b.frame >= grids.frames) throw ShapeError("gather_box_embeddings", "box refers to a frame outside the batch");
        const auto cell = box_to_cell(b.box.bbox, image_height, image_width, grids.height, grids.width);
        rows.push_back(grids.row_of(b.frame, cell.row, cell.col));
        out.set.labels.push_back(b.box.category_id);
        out.set.keys.push_back(b.key);
    }
    out.raw = gather_rows(grids.values, rows);
    Tensor e = project ? apply_head(out.raw, params, "head.object") : out.raw;
    if (normalize) e = l2_normalize(e, 1);
    out.set.embeddings = e;
    out.set.normalized = normalize;
    return out;
}

}  // namespace hiervid
