#pragma once

#include "redformer/autograd.hpp"
#include "redformer/geometry.hpp"

#include <random>
#include <stdexcept>
#include <vector>

namespace redformer::radar {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RadarPoint {
  geometry::Vec3 position = geometry::Vec3::Zero();  // sensor frame, m
  double radial_velocity = 0.0;                      // m/s
  double cross_section = 0.0;                        // dB

  bool operator==(const RadarPoint&) const = default;
};

// One sweep per sensor; clouds[i] belongs to rig.radar_poses[i].
struct PointCloudSet {
  std::vector<std::vector<RadarPoint>> clouds;

  std::size_t total_points() const;
  bool operator==(const PointCloudSet&) const = default;
};

// Per-cell radar point counts, row-major over (i, j).
struct SaliencyGrid {
  int x_cells = 0;
  int y_cells = 0;
  std::vector<int> counts;

  int at(int i, int j) const { return counts[static_cast<std::size_t>(i * y_cells + j)]; }
  long total() const;
  bool operator==(const SaliencyGrid&) const = default;
};

SaliencyGrid build_saliency(const PointCloudSet& clouds, const geometry::SensorRig& rig,
                            const geometry::BevGridSpec& grid);

// Learnable dictionary mapping clamped counts 0..K to C-vectors.
struct EmbeddingTable {
  ag::Var table;  // (K + 1) x C

  int capacity() const { return static_cast<int>(table.rows()) - 1; }
  int channels() const { return static_cast<int>(table.cols()); }
  static EmbeddingTable init(int capacity, int channels, std::mt19937_64& rng);
};

// Weights are stored input-major (C_in x C_out), applied as row-vector * W.
struct GatedUnitParams {
  ag::Var w1, b1;  // sigmoid branch
  ag::Var w2, b2;  // tanh branch

  static GatedUnitParams init(int channels, std::mt19937_64& rng);
};

// Clamped token per cell: min(count, K).
std::vector<int> saliency_tokens(const SaliencyGrid& sal, int capacity);

// (X*Y) x C: each cell replaced by its table row.
ag::Var embed_saliency(const SaliencyGrid& sal, const EmbeddingTable& table);

// e = sigmoid(E W1 + b1) * tanh(E W2 + b2), per cell. Result is the Radar BEV.
ag::Var gated_unit(const ag::Var& embedded, const GatedUnitParams& params);

}  // namespace redformer::radar
