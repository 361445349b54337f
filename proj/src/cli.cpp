#include "redformer/cli.hpp"

#include "redformer/checkpoint.hpp"
#include "redformer/config.hpp"
#include "redformer/metrics.hpp"
#include "redformer/synthetic_data.hpp"
#include "redformer/trainer.hpp"
#include "redformer/viz.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <ostream>
#include <sstream>

namespace redformer::cli {

namespace {

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw CLI::ValidationError("--summary", "cannot parse '" + item + "'");
    }
    if (used != item.size()) throw CLI::ValidationError("--summary", "cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

metrics::Subset subset_of(const std::string& name) { return *metrics::parse_subset(name); }

std::string format_nds(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Camera-radar BEV detector: data generation, training, evaluation"};
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);
  const std::vector<std::string> subset_names{"all", "rain", "night"};

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::string gen_config, gen_out;
  int gen_scenes = 0, gen_val = -1;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  gen->add_option("--config", gen_config, "Scene config file (key = value)")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--scenes", gen_scenes, "Total scene count")->required()->check(CLI::PositiveNumber);
  gen->add_option("--val-scenes", gen_val, "Validation scenes (default: a sixth of the total)");
  gen->add_option("--seed", gen_seed, "Master seed (overrides the config)")->each([&](const std::string&) {
    gen_seed_set = true;
  });

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_data, tr_config, tr_out;
  int tr_log_every = 0;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--config", tr_config, "Train config file (key = value)")->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--log-every", tr_log_every, "Print losses every N steps (0: silent)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  std::string ev_data, ev_ckpt, ev_subset = "all", ev_report, ev_pred;
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--subset", ev_subset, "all | rain | night")->check(CLI::IsMember(subset_names));
  ev->add_option("--report", ev_report, "Metrics report (JSON)")->required();
  ev->add_option("--pred-out", ev_pred, "Also write predictions (JSON)");

  // nds
  auto* nd = app.add_subcommand("nds", "Standalone metrics from prediction and ground-truth files");
  std::string nd_pred, nd_gt, nd_report, nd_summary, nd_subset = "all";
  auto* o_pred = nd->add_option("--pred", nd_pred, "Predictions (JSON)");
  auto* o_gt = nd->add_option("--gt", nd_gt, "Ground truth (JSON)");
  nd->add_option("--subset", nd_subset, "all | rain | night")->check(CLI::IsMember(subset_names));
  nd->add_option("--report", nd_report, "Metrics report (JSON)");
  auto* o_summary =
      nd->add_option("--summary", nd_summary, "Score precomputed mAP,mATE,mASE,mAOE,mAVE,mAAE instead of files");
  o_pred->needs(o_gt);
  o_gt->needs(o_pred);
  o_summary->excludes(o_pred)->excludes(o_gt);

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and evaluate the four module toggles per seed");
  std::string ab_data, ab_config, ab_report, ab_seeds = "0,1,2", ab_k;
  int ab_jobs = 1;
  ab->add_option("--data", ab_data, "Dataset directory")->required();
  ab->add_option("--config", ab_config, "Base train config")->check(CLI::ExistingFile);
  ab->add_option("--seeds", ab_seeds, "Comma-separated seeds");
  ab->add_option("--report", ab_report, "Ablation report (JSON)")->required();
  ab->add_option("--k-sweep", ab_k, "Comma-separated capacities, e.g. 10,20,30");
  ab->add_option("--jobs", ab_jobs, "Concurrent training runs")->check(CLI::PositiveNumber);

  // viz
  auto* vz = app.add_subcommand("viz", "Render ground truth vs predictions for one frame");
  std::string vz_data, vz_ckpt, vz_frame, vz_out;
  double vz_min_conf = 0.3;
  vz->add_option("--data", vz_data, "Dataset directory")->required();
  vz->add_option("--ckpt", vz_ckpt, "Checkpoint")->required();
  vz->add_option("--frame", vz_frame, "Frame id")->required();
  vz->add_option("--out", vz_out, "Output PNG")->required();
  vz->add_option("--min-confidence", vz_min_conf, "Hide predictions below this confidence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      data::SceneConfig cfg = gen_config.empty() ? data::SceneConfig{} : config::load_scene_config(gen_config);
      if (gen_seed_set) cfg.seed = gen_seed;
      const int val = gen_val >= 0 ? gen_val : gen_scenes / 6;
      if (val > gen_scenes) {
        err << "--val-scenes exceeds --scenes\n" << gen->help();
        return kExitUsage;
      }
      const auto ds =
          data::generate_dataset(cfg, gen_scenes - val, val, geometry::default_rig(cfg.image_width, cfg.image_height));
      data::write_dataset(ds, gen_out);
      out << "wrote " << ds.scenes.size() << " scenes (" << gen_scenes - val << " train, " << val << " val) to "
          << gen_out << "\n";
    } else if (*tr) {
      const auto cfg = tr_config.empty() ? config::TrainConfig{} : config::load_train_config(tr_config);
      const auto ds = data::read_dataset(tr_data);
      trainer::TrainOptions opts;
      if (tr_log_every > 0)
        opts.on_step = [&](const trainer::StepLoss& s) {
          if (s.step % tr_log_every == 0)
            out << "step " << s.step << " l_det " << s.l_det << " l_rain " << s.l_rain << " l_tod " << s.l_tod
                << " l_joint " << s.l_joint << "\n";
        };
      const auto ckpt = trainer::train(cfg, ds, opts);
      checkpoint::save(ckpt, tr_out);
      out << "trained " << ckpt.step << " steps; checkpoint " << tr_out << "\n";
    } else if (*ev) {
      const auto ckpt = checkpoint::load(ev_ckpt);
      const auto ds = data::read_dataset(ev_data);
      const auto r = trainer::evaluate_checkpoint(ckpt, ds, subset_of(ev_subset));
      metrics::write_text(ev_report, metrics::report_to_json(r.report));
      if (!ev_pred.empty()) metrics::write_text(ev_pred, metrics::predictions_to_json(r.predictions));
      out << "subset " << ev_subset << ": " << r.report.frame_count << " frames, NDS " << format_nds(r.report.nds)
          << ", mAP " << format_nds(r.report.map) << (r.report.empty ? " (empty)" : "") << "\n";
    } else if (*nd) {
      metrics::MetricsReport report;
      if (!nd_summary.empty()) {
        const auto v = parse_doubles(nd_summary);
        if (v.size() != 6) {
          err << "--summary needs six values: mAP,mATE,mASE,mAOE,mAVE,mAAE\n" << nd->help();
          return kExitUsage;
        }
        report.map = v[0];
        for (std::size_t k = 0; k < 5; ++k) report.mtp[k] = v[k + 1];
        report.nds = metrics::nds(report.map, report.mtp);
      } else if (!nd_pred.empty()) {
        const auto preds = metrics::read_predictions(nd_pred);
        const auto gts = metrics::filter_subset(metrics::read_ground_truth(nd_gt), subset_of(nd_subset));
        report = metrics::evaluate(preds, gts);
      } else {
        err << "nds needs --pred and --gt, or --summary\n" << nd->help();
        return kExitUsage;
      }
      if (!nd_report.empty()) metrics::write_text(nd_report, metrics::report_to_json(report));
      out << "NDS " << format_nds(report.nds) << "\n";
    } else if (*ab) {
      const auto cfg = ab_config.empty() ? config::TrainConfig{} : config::load_train_config(ab_config);
      std::vector<std::uint64_t> seeds;
      for (double s : parse_doubles(ab_seeds)) {
        if (s < 0 || s != std::floor(s)) {
          err << "--seeds must be non-negative integers\n";
          return kExitUsage;
        }
        seeds.push_back(static_cast<std::uint64_t>(s));
      }
      trainer::AblationOptions opts;
      opts.concurrency = ab_jobs;
      if (!ab_k.empty())
        for (double k : parse_doubles(ab_k)) opts.k_values.push_back(static_cast<int>(k));
      opts.log = [&](const std::string& line) { out << line << "\n"; };
      const auto ds = data::read_dataset(ab_data);
      const auto table = trainer::ablation_suite(cfg, ds, seeds, opts);
      metrics::write_text(ab_report, trainer::ablation_to_json(table));
      out << "wrote " << ab_report << "\n";
    } else if (*vz) {
      const auto ckpt = checkpoint::load(vz_ckpt);
      const auto ds = data::read_dataset(vz_data);
      for (const auto& scene : ds.scenes)
        for (std::size_t f = 0; f < scene.frames.size(); ++f) {
          if (scene.frames[f].frame_id != vz_frame) continue;
          const model::Model m(ckpt.params, ds.rig, ds.grid, ckpt.config.with_rb);
          const auto dets = m.infer_scene(scene);
          png::write(vz_out, viz::render_bev(ds.grid, scene.frames[f].annotations, dets[f], vz_min_conf));
          out << "wrote " << vz_out << "\n";
          return kExitOk;
        }
      err << "frame '" << vz_frame << "' not found in " << vz_data << "\n";
      return kExitData;
    }
  } catch (const CLI::ValidationError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace redformer::cli
