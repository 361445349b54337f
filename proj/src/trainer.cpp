#include "redformer/trainer.hpp"

#include "redformer/params.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <random>

namespace redformer::trainer {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr std::size_t kSmoothWindow = 20;
constexpr std::size_t kPlateauSpan = 50;
constexpr double kPlateauTol = 1e-4;

void check_finite(const ag::Var& v, const char* term, const std::string& frame_id) {
  if (!std::isfinite(v.scalar()))
    throw TrainingError("non-finite " + std::string(term) + " on frame '" + frame_id + "'");
}

const std::vector<metrics::Subset> kAllSubsets{metrics::Subset::all, metrics::Subset::rain, metrics::Subset::night};

}  // namespace

Trainer::Trainer(const config::TrainConfig& config, const geometry::SensorRig& rig,
                 const geometry::BevGridSpec& grid)
    : Trainer(config, model::ModelParams::init(config.dims(grid), config.seed), rig, grid) {}

Trainer::Trainer(const config::TrainConfig& config, model::ModelParams params, const geometry::SensorRig& rig,
                 const geometry::BevGridSpec& grid)
    : config_(config), model_(std::move(params), rig, grid, config.with_rb) {
  config_.validate();
  census_ = model_.params().census();
  for (const auto& t : census_) {
    adam_m_.push_back(ag::Matrix::Zero(t.var.rows(), t.var.cols()));
    adam_v_.push_back(ag::Matrix::Zero(t.var.rows(), t.var.cols()));
  }
}

bool Trainer::group_enabled(const std::string& group) const {
  if (!config_.with_rb && (group == "embedding" || group == "gated_unit")) return false;
  if (!config_.with_mtl && (group == "rain_head" || group == "tod_head")) return false;
  return true;
}

Trainer::FrameTerms Trainer::frame_terms(const data::FrameRecord& frame,
                                         const std::optional<ag::Matrix>& aligned_prev, ag::Matrix* bev_out) const {
  const auto out = model_.forward(frame, aligned_prev);
  if (bev_out) *bev_out = out.bev.value();
  FrameTerms t;
  t.l_det = detection::detection_loss(out.raw, frame.annotations, config_.loss, model_.grid());
  check_finite(t.l_det, "l_det", frame.frame_id);
  if (config_.with_mtl) {
    t.l_rain = detection::binary_ce(out.context.rain_logit, frame.rain);
    t.l_tod = detection::binary_ce(out.context.night_logit, frame.night);
    check_finite(t.l_rain, "l_rain", frame.frame_id);
    check_finite(t.l_tod, "l_tod", frame.frame_id);
    t.l_joint = ag::add(ag::add(t.l_det, t.l_rain), t.l_tod);
  } else {
    t.l_rain = ag::Var::constant(ag::Matrix::Zero(1, 1));
    t.l_tod = ag::Var::constant(ag::Matrix::Zero(1, 1));
    t.l_joint = t.l_det;
  }
  return t;
}

StepLoss Trainer::frame_loss(const data::FrameRecord& frame) const {
  const auto t = frame_terms(frame, std::nullopt, nullptr);
  const auto b = detection::joint_loss(t.l_det.scalar(), t.l_rain.scalar(), t.l_tod.scalar());
  return {steps_, b.l_det, b.l_rain, b.l_tod, b.l_joint};
}

StepLoss Trainer::step(std::span<const data::Scene* const> scenes) {
  int frames = 0;
  for (const auto* s : scenes) frames += static_cast<int>(s->frames.size());
  if (frames == 0) throw std::invalid_argument("Trainer::step: no frames");
  StepLoss acc;
  for (const auto* scene : scenes) {
    std::optional<ag::Matrix> prev;
    for (std::size_t f = 0; f < scene->frames.size(); ++f) {
      std::optional<ag::Matrix> aligned;
      if (prev) aligned = model_.align(*prev, scene->frames[f - 1], scene->frames[f]);
      ag::Matrix bev;
      const auto t = frame_terms(scene->frames[f], aligned, &bev);
      ag::backward(ag::scale(t.l_joint, 1.0 / frames));
      acc.l_det += t.l_det.scalar();
      acc.l_rain += t.l_rain.scalar();
      acc.l_tod += t.l_tod.scalar();
      prev = std::move(bev);
    }
  }
  return finish_step(acc, frames);
}

StepLoss Trainer::step_frame(const data::FrameRecord& frame) {
  const auto t = frame_terms(frame, std::nullopt, nullptr);
  ag::backward(t.l_joint);
  StepLoss acc{0, t.l_det.scalar(), t.l_rain.scalar(), t.l_tod.scalar(), 0.0};
  return finish_step(acc, 1);
}

StepLoss Trainer::finish_step(StepLoss acc, int frames) {
  apply_update();
  ++steps_;
  const auto b = detection::joint_loss(acc.l_det / frames, acc.l_rain / frames, acc.l_tod / frames);
  StepLoss out{steps_, b.l_det, b.l_rain, b.l_tod, b.l_joint};
  history_.push_back(out);
  return out;
}

void Trainer::apply_update() {
  double factor = 1.0;
  if (config_.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& t : census_)
      if (group_enabled(t.group) && t.var.has_grad()) sq += t.var.grad().squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) factor = config_.grad_clip / norm;
  }
  const int step = steps_ + 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, step);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, step);
  for (std::size_t k = 0; k < census_.size(); ++k) {
    auto& var = census_[k].var;
    if (!group_enabled(census_[k].group) || !var.has_grad()) {
      var.zero_grad();
      continue;
    }
    const ag::Matrix g = var.grad() * factor;
    auto& value = var.mutable_value();
    if (config_.optimizer == config::Optimizer::sgd) {
      value -= config_.lr * g;
    } else {
      adam_m_[k] = kAdamBeta1 * adam_m_[k] + (1.0 - kAdamBeta1) * g;
      adam_v_[k] = kAdamBeta2 * adam_v_[k] + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
      value.array() -= config_.lr * (adam_m_[k].array() / bc1) / ((adam_v_[k].array() / bc2).sqrt() + kAdamEps);
    }
    params::round_to_float(value);
    var.zero_grad();
  }
}

checkpoint::Checkpoint Trainer::snapshot() const {
  return {model_.params().clone(), config_, model_.grid(), steps_, history_};
}

bool plateaued(const std::vector<StepLoss>& h) {
  if (h.size() < kSmoothWindow + kPlateauSpan) return false;
  auto window_mean = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - kSmoothWindow; i < end; ++i) s += h[i].l_joint;
    return s / kSmoothWindow;
  };
  const double now = window_mean(h.size());
  const double then = window_mean(h.size() - kPlateauSpan);
  return std::abs(now - then) < kPlateauTol * std::max(std::abs(then), 1e-12);
}

checkpoint::Checkpoint train(const config::TrainConfig& config, const data::SceneDataset& dataset,
                             const TrainOptions& options) {
  config.validate();
  const auto scenes = dataset.split(options.split);
  if (scenes.empty()) throw metrics::DataError("dataset has no '" + options.split + "' scenes");
  Trainer trainer(config, dataset.rig, dataset.grid);

  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    0x6f7264u};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t pos = order.size();

  std::vector<const data::Scene*> batch;
  for (int s = 0; s < config.steps; ++s) {
    batch.clear();
    for (int b = 0; b < config.batch_size; ++b) {
      if (pos == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        pos = 0;
      }
      batch.push_back(scenes[order[pos++]]);
    }
    const auto loss = trainer.step(batch);
    if (options.on_step) options.on_step(loss);
    if (config.early_stop && plateaued(trainer.history())) break;
  }
  return trainer.snapshot();
}

std::vector<std::pair<metrics::Subset, metrics::MetricsReport>> evaluate_subsets(
    const checkpoint::Checkpoint& ckpt, const data::SceneDataset& dataset, std::span<const metrics::Subset> subsets,
    const std::string& split) {
  if (ckpt.grid.x_cells != dataset.grid.x_cells || ckpt.grid.y_cells != dataset.grid.y_cells ||
      ckpt.grid.cell_size != dataset.grid.cell_size)
    throw metrics::DataError("checkpoint grid does not match the dataset grid");
  const model::Model model(ckpt.params, dataset.rig, dataset.grid, ckpt.config.with_rb);
  std::vector<metrics::FramePredictions> preds;
  for (const auto* scene : dataset.split(split)) {
    const auto dets = model.infer_scene(*scene);
    for (std::size_t f = 0; f < dets.size(); ++f) preds.push_back({scene->frames[f].frame_id, dets[f]});
  }
  const auto gts = dataset.ground_truth(split);
  std::vector<std::pair<metrics::Subset, metrics::MetricsReport>> out;
  for (const auto subset : subsets) {
    const auto picked = metrics::filter_subset(gts, subset);
    out.emplace_back(subset, metrics::evaluate(preds, picked));
  }
  return out;
}

EvalResult evaluate_checkpoint(const checkpoint::Checkpoint& ckpt, const data::SceneDataset& dataset,
                               metrics::Subset subset, const std::string& split) {
  if (ckpt.grid.x_cells != dataset.grid.x_cells || ckpt.grid.y_cells != dataset.grid.y_cells ||
      ckpt.grid.cell_size != dataset.grid.cell_size)
    throw metrics::DataError("checkpoint grid does not match the dataset grid");
  const model::Model model(ckpt.params, dataset.rig, dataset.grid, ckpt.config.with_rb);
  EvalResult r;
  for (const auto* scene : dataset.split(split)) {
    const auto dets = model.infer_scene(*scene);
    for (std::size_t f = 0; f < dets.size(); ++f) r.predictions.push_back({scene->frames[f].frame_id, dets[f]});
  }
  const auto gts = metrics::filter_subset(dataset.ground_truth(split), subset);
  r.report = metrics::evaluate(r.predictions, gts);
  return r;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

AblationTable ablation_suite(const config::TrainConfig& base, const data::SceneDataset& dataset,
                             std::span<const std::uint64_t> seeds, const AblationOptions& options) {
  if (seeds.empty()) throw std::invalid_argument("ablation_suite: no seeds");
  if (options.concurrency < 1) throw std::invalid_argument("ablation_suite: concurrency must be >= 1");
  AblationTable table;
  table.seeds.assign(seeds.begin(), seeds.end());

  struct Job {
    std::size_t row;
    bool sweep;
    config::TrainConfig cfg;
  };
  std::vector<Job> jobs;
  const std::array<std::pair<bool, bool>, 4> toggles{{{true, true}, {true, false}, {false, true}, {false, false}}};
  for (std::size_t r = 0; r < toggles.size(); ++r) {
    table.rows.push_back({toggles[r].first, toggles[r].second, base.capacity_k, {}});
    for (const auto seed : seeds) {
      auto cfg = base;
      cfg.with_rb = toggles[r].first;
      cfg.with_mtl = toggles[r].second;
      cfg.seed = seed;
      jobs.push_back({r, false, cfg});
    }
  }
  for (std::size_t r = 0; r < options.k_values.size(); ++r) {
    table.k_sweep.push_back({true, true, options.k_values[r], {}});
    for (const auto seed : seeds) {
      auto cfg = base;
      cfg.with_rb = cfg.with_mtl = true;
      cfg.capacity_k = options.k_values[r];
      cfg.seed = seed;
      jobs.push_back({r, true, cfg});
    }
  }

  using Result = std::vector<std::pair<metrics::Subset, metrics::MetricsReport>>;
  auto run = [&dataset](const config::TrainConfig& cfg) -> Result {
    const auto ckpt = train(cfg, dataset);
    return evaluate_subsets(ckpt, dataset, kAllSubsets);
  };
  std::vector<Result> results(jobs.size());
  for (std::size_t start = 0; start < jobs.size(); start += static_cast<std::size_t>(options.concurrency)) {
    const std::size_t end = std::min(jobs.size(), start + static_cast<std::size_t>(options.concurrency));
    std::vector<std::future<Result>> inflight;
    for (std::size_t j = start; j < end; ++j)
      inflight.push_back(std::async(options.concurrency > 1 ? std::launch::async : std::launch::deferred, run,
                                    std::cref(jobs[j].cfg)));
    for (std::size_t j = start; j < end; ++j) {
      results[j] = inflight[j - start].get();
      if (options.log) {
        const auto& c = jobs[j].cfg;
        std::string line = "rb=" + std::to_string(c.with_rb) + " mtl=" + std::to_string(c.with_mtl) +
                           " k=" + std::to_string(c.capacity_k) + " seed=" + std::to_string(c.seed);
        for (const auto& [subset, rep] : results[j])
          line += " " + std::string(metrics::subset_name(subset)) + ":NDS=" + std::to_string(rep.nds);
        options.log(line);
      }
    }
  }

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    auto& row = jobs[j].sweep ? table.k_sweep[jobs[j].row] : table.rows[jobs[j].row];
    for (const auto& [subset, rep] : results[j]) {
      row.scores[subset].nds.push_back(rep.nds);
      row.scores[subset].map.push_back(rep.map);
    }
  }
  for (auto* rows : {&table.rows, &table.k_sweep})
    for (auto& row : *rows)
      for (auto& [subset, s] : row.scores) {
        s.median_nds = median(s.nds);
        s.median_map = median(s.map);
      }
  return table;
}

std::string ablation_to_json(const AblationTable& table) {
  using json = nlohmann::json;
  auto rows_json = [](const std::vector<AblationRow>& rows) {
    json out = json::array();
    for (const auto& row : rows) {
      json subsets = json::object();
      for (const auto& [subset, s] : row.scores)
        subsets[std::string(metrics::subset_name(subset))] = {
            {"NDS", s.median_nds}, {"mAP", s.median_map}, {"NDS_per_seed", s.nds}, {"mAP_per_seed", s.map}};
      out.push_back(
          {{"with_rb", row.with_rb}, {"with_mtl", row.with_mtl}, {"capacity_k", row.capacity_k}, {"subsets", subsets}});
    }
    return out;
  };
  json out = {{"schema_version", metrics::kSchemaVersion},
              {"seeds", table.seeds},
              {"subsets", {"all", "rain", "night"}},
              {"metrics", {"NDS", "mAP"}},
              {"ablation", rows_json(table.rows)}};
  if (!table.k_sweep.empty()) out["k_sweep"] = rows_json(table.k_sweep);
  return out.dump(2) + "\n";
}

}  // namespace redformer::trainer
