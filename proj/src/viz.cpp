#include "redformer/viz.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace redformer::viz {

namespace {

using Rgb = std::array<std::uint8_t, 3>;

class Canvas {
 public:
  Canvas(const geometry::BevGridSpec& grid, int ppc)
      : grid_(grid), scale_(ppc / grid.cell_size) {
    img_.width = grid.y_cells * ppc;
    img_.height = grid.x_cells * ppc;
    img_.rgb.assign(static_cast<std::size_t>(img_.width) * img_.height * 3, 24);
  }

  void pixel(int r, int c, const Rgb& color) {
    if (r < 0 || c < 0 || r >= img_.height || c >= img_.width) return;
    const auto o = static_cast<std::size_t>(3 * (r * img_.width + c));
    img_.rgb[o] = color[0];
    img_.rgb[o + 1] = color[1];
    img_.rgb[o + 2] = color[2];
  }

  // Ego metres to fractional pixel coordinates (row, col).
  std::pair<double, double> to_pixel(double x, double y) const {
    return {(grid_.half_extent_x() - x) * scale_, (grid_.half_extent_y() - y) * scale_};
  }

  void line(double x0, double y0, double x1, double y1, const Rgb& color) {
    const auto [r0, c0] = to_pixel(x0, y0);
    const auto [r1, c1] = to_pixel(x1, y1);
    const int n = static_cast<int>(std::ceil(std::max(std::abs(r1 - r0), std::abs(c1 - c0)))) + 1;
    for (int k = 0; k <= n; ++k) {
      const double t = static_cast<double>(k) / n;
      pixel(static_cast<int>(std::floor(r0 + t * (r1 - r0))), static_cast<int>(std::floor(c0 + t * (c1 - c0))), color);
    }
  }

  void box(const Box3D& b, const Rgb& color) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = 0.5 * b.size.x(), hw = 0.5 * b.size.y();
    const std::array<std::pair<double, double>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
    std::array<std::pair<double, double>, 4> w;
    for (std::size_t k = 0; k < 4; ++k)
      w[k] = {b.center.x() + c * local[k].first - s * local[k].second,
              b.center.y() + s * local[k].first + c * local[k].second};
    for (std::size_t k = 0; k < 4; ++k) line(w[k].first, w[k].second, w[(k + 1) % 4].first, w[(k + 1) % 4].second, color);
    line(b.center.x(), b.center.y(), b.center.x() + c * hl, b.center.y() + s * hl, color);
  }

  png::RgbImage take() { return std::move(img_); }
  const png::RgbImage& image() const { return img_; }

 private:
  geometry::BevGridSpec grid_;
  double scale_;
  png::RgbImage img_;
};

}  // namespace

png::RgbImage render_bev(const geometry::BevGridSpec& grid, std::span<const Annotation> ground_truth,
                         std::span<const Detection> predictions, double min_confidence, int pixels_per_cell) {
  if (!grid.valid() || pixels_per_cell <= 0) throw std::invalid_argument("render_bev: bad grid or scale");
  Canvas canvas(grid, pixels_per_cell);
  const Rgb grid_color{48, 48, 48};
  for (int i = 0; i <= grid.x_cells; i += 4) {
    const double x = -grid.half_extent_x() + i * grid.cell_size;
    canvas.line(x, -grid.half_extent_y(), x, grid.half_extent_y(), grid_color);
  }
  for (int j = 0; j <= grid.y_cells; j += 4) {
    const double y = -grid.half_extent_y() + j * grid.cell_size;
    canvas.line(-grid.half_extent_x(), y, grid.half_extent_x(), y, grid_color);
  }
  Box3D ego;
  ego.size = Eigen::Vector3d(4.0, 1.8, 1.5);
  canvas.box(ego, {230, 230, 230});
  for (const auto& a : ground_truth) canvas.box(a.box, {60, 220, 90});
  for (const auto& d : predictions)
    if (d.confidence >= min_confidence) canvas.box(d.box, {235, 60, 50});
  return canvas.take();
}

}  // namespace redformer::viz
