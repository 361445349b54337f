#pragma once

#include "redformer/detection_types.hpp"
#include "redformer/geometry.hpp"
#include "redformer/png_io.hpp"

#include <span>

namespace redformer::viz {

// Top-down image of one frame: x (forward) points up, y (left) points left,
// ego at the centre. Ground truth footprints in green, predictions with
// confidence >= min_confidence in red, each with a heading tick.
png::RgbImage render_bev(const geometry::BevGridSpec& grid, std::span<const Annotation> ground_truth,
                         std::span<const Detection> predictions, double min_confidence = 0.3,
                         int pixels_per_cell = 8);

}  // namespace redformer::viz
