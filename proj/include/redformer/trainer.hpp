#pragma once

#include "redformer/checkpoint.hpp"
#include "redformer/config.hpp"
#include "redformer/metrics.hpp"
#include "redformer/model.hpp"
#include "redformer/synthetic_data.hpp"

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace redformer::trainer {

// Raised when a loss term turns non-finite; the message names the term.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using checkpoint::StepLoss;

class Trainer {
 public:
  Trainer(const config::TrainConfig& config, const geometry::SensorRig& rig, const geometry::BevGridSpec& grid);
  Trainer(const config::TrainConfig& config, model::ModelParams params, const geometry::SensorRig& rig,
          const geometry::BevGridSpec& grid);

  // One update over every frame of `scenes`, each scene in temporal order
  // with the previous BEV carried (detached). Losses are averaged over frames.
  StepLoss step(std::span<const data::Scene* const> scenes);
  // One update on a single frame without temporal history.
  StepLoss step_frame(const data::FrameRecord& frame);

  // Losses of a frame without updating.
  StepLoss frame_loss(const data::FrameRecord& frame) const;

  // Groups the optimizer updates; disabled modules are frozen.
  bool group_enabled(const std::string& group) const;

  const model::Model& model() const { return model_; }
  const config::TrainConfig& config() const { return config_; }
  const std::vector<StepLoss>& history() const { return history_; }
  int steps_done() const { return steps_; }
  checkpoint::Checkpoint snapshot() const;

 private:
  struct FrameTerms {
    ag::Var l_det, l_rain, l_tod, l_joint;
  };
  FrameTerms frame_terms(const data::FrameRecord& frame, const std::optional<ag::Matrix>& aligned_prev,
                         ag::Matrix* bev_out) const;
  void apply_update();
  StepLoss finish_step(StepLoss acc, int frames);

  config::TrainConfig config_;
  model::Model model_;
  std::vector<model::NamedTensor> census_;
  std::vector<ag::Matrix> adam_m_, adam_v_;
  std::vector<StepLoss> history_;
  int steps_ = 0;
};

struct TrainOptions {
  std::function<void(const StepLoss&)> on_step;
  std::string split = "train";
};

// Fixed step budget over the split; scenes are visited in a seeded
// per-epoch shuffle, `batch_size` scenes per step.
checkpoint::Checkpoint train(const config::TrainConfig& config, const data::SceneDataset& dataset,
                             const TrainOptions& options = {});

// True when the window-20 mean joint loss changed by less than 1e-4
// (relative) over the last 50 steps.
bool plateaued(const std::vector<StepLoss>& history);

struct EvalResult {
  metrics::MetricsReport report;
  std::vector<metrics::FramePredictions> predictions;  // every frame of the split
};

// Scene-by-scene inference on `split`, then metrics on the chosen subset.
EvalResult evaluate_checkpoint(const checkpoint::Checkpoint& ckpt, const data::SceneDataset& dataset,
                               metrics::Subset subset, const std::string& split = "val");

// Inference once, metrics for every subset.
std::vector<std::pair<metrics::Subset, metrics::MetricsReport>> evaluate_subsets(
    const checkpoint::Checkpoint& ckpt, const data::SceneDataset& dataset, std::span<const metrics::Subset> subsets,
    const std::string& split = "val");

struct SubsetScores {
  std::vector<double> nds;  // per seed
  std::vector<double> map;
  double median_nds = 0.0;
  double median_map = 0.0;
};

struct AblationRow {
  bool with_rb = true;
  bool with_mtl = true;
  int capacity_k = 10;
  std::map<metrics::Subset, SubsetScores> scores;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;    // +RB+MTL, +RB-MTL, -RB+MTL, -RB-MTL
  std::vector<AblationRow> k_sweep;  // full model at each K
};

struct AblationOptions {
  std::vector<int> k_values;  // empty: no sweep
  int concurrency = 1;        // training runs in flight at once
  std::function<void(const std::string&)> log;
};

AblationTable ablation_suite(const config::TrainConfig& base, const data::SceneDataset& dataset,
                             std::span<const std::uint64_t> seeds, const AblationOptions& options = {});

std::string ablation_to_json(const AblationTable& table);

double median(std::vector<double> v);

}  // namespace redformer::trainer
