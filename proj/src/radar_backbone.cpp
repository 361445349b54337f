#include "redformer/radar_backbone.hpp"

#include "redformer/params.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace redformer::radar {

std::size_t PointCloudSet::total_points() const {
  std::size_t n = 0;
  for (const auto& c : clouds) n += c.size();
  return n;
}

long SaliencyGrid::total() const {
  long n = 0;
  for (int c : counts) n += c;
  return n;
}

SaliencyGrid build_saliency(const PointCloudSet& clouds, const geometry::SensorRig& rig,
                            const geometry::BevGridSpec& grid) {
  SaliencyGrid sal{grid.x_cells, grid.y_cells,
                   std::vector<int>(static_cast<std::size_t>(grid.cell_count()), 0)};
  for (std::size_t s = 0; s < clouds.clouds.size(); ++s) {
    if (clouds.clouds[s].empty()) continue;
    if (s >= rig.radar_poses.size())
      throw ConfigError("build_saliency: no pose for radar sensor " + std::to_string(s));
    const auto& pose = rig.radar_poses[s];
    for (const auto& p : clouds.clouds[s]) {
      if (auto cell = geometry::bev_cell_of(pose.apply(p.position), grid))
        ++sal.counts[static_cast<std::size_t>(grid.flat(cell->i, cell->j))];
    }
  }
  return sal;
}

EmbeddingTable EmbeddingTable::init(int capacity, int channels, std::mt19937_64& rng) {
  if (capacity < 1 || channels < 1) throw ConfigError("EmbeddingTable: capacity and channels must be positive");
  return {ag::Var::leaf(params::normal(capacity + 1, channels, 0.02, rng), true)};
}

GatedUnitParams GatedUnitParams::init(int channels, std::mt19937_64& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(channels));
  GatedUnitParams p;
  p.w1 = ag::Var::leaf(params::normal(channels, channels, sd, rng), true);
  p.b1 = ag::Var::leaf(ag::Matrix::Zero(1, channels), true);
  p.w2 = ag::Var::leaf(params::normal(channels, channels, sd, rng), true);
  p.b2 = ag::Var::leaf(ag::Matrix::Zero(1, channels), true);
  return p;
}

std::vector<int> saliency_tokens(const SaliencyGrid& sal, int capacity) {
  std::vector<int> tokens(sal.counts.size());
  std::transform(sal.counts.begin(), sal.counts.end(), tokens.begin(),
                 [capacity](int c) { return std::clamp(c, 0, capacity); });
  return tokens;
}

ag::Var embed_saliency(const SaliencyGrid& sal, const EmbeddingTable& table) {
  return ag::gather_rows(table.table, saliency_tokens(sal, table.capacity()));
}

ag::Var gated_unit(const ag::Var& embedded, const GatedUnitParams& params) {
  if (embedded.cols() != params.w1.rows() || embedded.cols() != params.w2.rows())
    throw std::invalid_argument("gated_unit: channel mismatch");
  auto gate = ag::sigmoid(ag::add_bias(ag::matmul(embedded, params.w1), params.b1));
  auto signal = ag::tanh(ag::add_bias(ag::matmul(embedded, params.w2), params.b2));
  return ag::mul(gate, signal);
}

}  // namespace redformer::radar
