#pragma once

#include "redformer/config.hpp"
#include "redformer/model.hpp"

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace redformer::checkpoint {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepLoss {
  int step = 0;
  double l_det = 0.0;
  double l_rain = 0.0;
  double l_tod = 0.0;
  double l_joint = 0.0;

  bool operator==(const StepLoss&) const = default;
};

struct Checkpoint {
  model::ModelParams params;
  config::TrainConfig config;
  geometry::BevGridSpec grid;
  int step = 0;
  std::vector<StepLoss> history;
};

inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;

// Layout: 8-byte magic "RDFCKPT\0", u32 schema version, u64 header length,
// JSON header (config, grid, dims, step, loss history, parameter census),
// then every census tensor as row-major little-endian float32.
void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

}  // namespace redformer::checkpoint
