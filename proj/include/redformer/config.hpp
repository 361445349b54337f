#pragma once

#include "redformer/detection_model.hpp"
#include "redformer/model.hpp"
#include "redformer/synthetic_data.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace redformer::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Optimizer { sgd, adam };

// Keys accepted in a training config file (flat `key = value`, '#' comments):
//   lr               learning rate, > 0
//   steps            optimizer steps, > 0
//   batch_size       scenes per step; gradients are averaged over their frames
//   seed             parameter init and scene order
//   with_rb          radar backbone on/off (true/false)
//   with_mtl         rain and time-of-day heads on/off
//   capacity_k       embedding dictionary capacity K
//   optimizer        sgd | adam
//   channels, layers, heads, queries   model size
//   lambda_cls, lambda_box, no_object_weight   detection loss weights
//   grad_clip        global gradient-norm clip, 0 disables
//   early_stop       stop on a smoothed-loss plateau (true/false)
//   data             dataset directory (optional; the CLI flag wins)
// Grid and rig come from the dataset index.
struct TrainConfig {
  double lr = 1e-3;
  int steps = 2000;
  int batch_size = 1;
  std::uint64_t seed = 0;
  bool with_rb = true;
  bool with_mtl = true;
  int capacity_k = 10;
  Optimizer optimizer = Optimizer::sgd;
  int channels = 32;
  int layers = 2;
  int heads = 4;
  int queries = 20;
  detection::LossWeights loss;
  double grad_clip = 0.0;
  bool early_stop = false;
  std::string data;

  void validate() const;
  model::ModelDims dims(const geometry::BevGridSpec& grid) const;
  bool operator==(const TrainConfig&) const;
};

// Ordered key -> value pairs from `key = value` text. Duplicate keys and
// malformed lines raise ConfigError with the line number.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source);

TrainConfig parse_train_config(const std::string& text, const std::string& source = "<memory>");
TrainConfig load_train_config(const std::filesystem::path& path);
std::string to_text(const TrainConfig& config);

// Scene generator config in the same format; keys match SceneConfig fields.
data::SceneConfig parse_scene_config(const std::string& text, const std::string& source = "<memory>");
data::SceneConfig load_scene_config(const std::filesystem::path& path);

std::string optimizer_name(Optimizer o);

}  // namespace redformer::config
