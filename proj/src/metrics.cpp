#include "redformer/metrics.hpp"

#include "redformer/geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace redformer::metrics {

using nlohmann::json;

void EvalConfig::validate() const {
  if (thresholds.empty()) throw std::invalid_argument("EvalConfig: no distance thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0)) throw std::invalid_argument("EvalConfig: thresholds must be positive");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
      throw std::invalid_argument("EvalConfig: thresholds must be strictly increasing");
  }
  if (!(tp_threshold > 0.0)) throw std::invalid_argument("EvalConfig: TP threshold must be positive");
}

namespace {

double center_distance(const Box3D& a, const Box3D& b) { return (a.center.head<2>() - b.center.head<2>()).norm(); }

std::vector<std::size_t> confidence_order(std::span<const Detection> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });
  return order;
}

}  // namespace

MatchResult match_detections(std::span<const Detection> preds, std::span<const Annotation> gts, double threshold) {
  MatchResult out;
  out.is_tp.assign(preds.size(), false);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t p : confidence_order(preds)) {
    double best = std::numeric_limits<double>::infinity();
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double d = center_distance(preds[p].box, gts[g].box);
      if (d < best) {
        best = d;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best < threshold) {
      taken[static_cast<std::size_t>(best_gt)] = true;
      out.is_tp[p] = true;
      out.pairs.emplace_back(static_cast<int>(p), best_gt);
    }
  }
  return out;
}

double average_precision(const std::vector<bool>& tp, std::size_t gt_count) {
  if (gt_count == 0 || tp.empty()) return 0.0;
  std::vector<double> precision(tp.size()), recall(tp.size());
  double tps = 0.0, fps = 0.0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    (tp[k] ? tps : fps) += 1.0;
    precision[k] = tps / (tps + fps);
    recall[k] = tps / static_cast<double>(gt_count);
  }
  // Precision envelope: best precision at any recall >= r.
  for (std::size_t k = tp.size() - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
  double total = 0.0;
  std::size_t k = 0;
  for (int step = 0; step <= 100; ++step) {
    const double r = step / 100.0;
    while (k < tp.size() && recall[k] < r - 1e-12) ++k;
    if (k == tp.size()) break;
    total += precision[k];
  }
  return total / 101.0;
}

double translation_error(const Box3D& pred, const Box3D& gt) { return center_distance(pred, gt); }

double scale_error(const Box3D& pred, const Box3D& gt) {
  const double inter = pred.size.cwiseMin(gt.size).prod();
  const double uni = pred.size.prod() + gt.size.prod() - inter;
  return 1.0 - inter / uni;
}

double orientation_error(const Box3D& pred, const Box3D& gt) {
  return std::abs(geometry::wrap_angle(pred.yaw - gt.yaw));
}

double velocity_error(const Box3D& pred, const Box3D& gt) { return (pred.velocity - gt.velocity).norm(); }

TpErrors tp_metrics(std::span<const std::pair<Detection, Annotation>> pairs) {
  if (pairs.empty()) return {1.0, 1.0, 1.0, 1.0, 1.0};
  TpErrors sum{};
  for (const auto& [d, a] : pairs) {
    sum[kTranslation] += translation_error(d.box, a.box);
    sum[kScale] += scale_error(d.box, a.box);
    sum[kOrientation] += orientation_error(d.box, a.box);
    sum[kVelocity] += velocity_error(d.box, a.box);
    sum[kAttribute] += d.attribute == a.attribute ? 0.0 : 1.0;
  }
  for (auto& s : sum) s /= static_cast<double>(pairs.size());
  return sum;
}

double nds(double map, const TpErrors& mtps) {
  if (!(map >= 0.0 && map <= 1.0)) throw std::invalid_argument("nds: mAP must lie in [0, 1]");
  double score = 0.5 * map;
  for (double m : mtps) score += 0.1 * std::max(1.0 - m, 0.0);
  return score;
}

std::optional<Subset> parse_subset(std::string_view name) {
  if (name == "all") return Subset::all;
  if (name == "rain") return Subset::rain;
  if (name == "night") return Subset::night;
  return std::nullopt;
}

std::string_view subset_name(Subset s) {
  switch (s) {
    case Subset::all: return "all";
    case Subset::rain: return "rain";
    case Subset::night: return "night";
  }
  return "all";
}

std::vector<FrameGroundTruth> filter_subset(std::span<const FrameGroundTruth> frames, Subset subset) {
  std::vector<FrameGroundTruth> out;
  for (const auto& f : frames) {
    if (!f.rain || !f.night) throw DataError("filter_subset: frame '" + f.frame_id + "' has no rain/night label");
    const bool keep = subset == Subset::all || (subset == Subset::rain && *f.rain == 1) ||
                      (subset == Subset::night && *f.night == 1);
    if (keep) out.push_back(f);
  }
  return out;
}

MetricsReport evaluate(std::span<const FramePredictions> preds, std::span<const FrameGroundTruth> gts,
                       const EvalConfig& config) {
  config.validate();
  MetricsReport report;
  report.frame_count = gts.size();
  report.thresholds = config.thresholds;

  std::unordered_map<std::string, const FramePredictions*> by_frame;
  for (const auto& p : preds) by_frame[p.frame_id] = &p;

  for (ObjectClass cls : config.classes) {
    const std::size_t nt = config.thresholds.size();
    std::vector<std::vector<std::pair<double, std::size_t>>> pooled(nt);  // (confidence, global index)
    std::vector<std::vector<bool>> pooled_tp(nt);
    std::vector<std::pair<Detection, Annotation>> tp_pairs;
    std::size_t gt_count = 0, pred_count = 0;

    for (const auto& frame : gts) {
      std::vector<Annotation> frame_gts;
      for (const auto& a : frame.annotations)
        if (a.class_id == cls) frame_gts.push_back(a);
      std::vector<Detection> frame_preds;
      if (auto it = by_frame.find(frame.frame_id); it != by_frame.end())
        for (const auto& d : it->second->detections)
          if (d.class_id == cls) frame_preds.push_back(d);
      gt_count += frame_gts.size();
      pred_count += frame_preds.size();

      auto& flags_by_threshold = report.frame_tp[frame.frame_id][cls];
      for (std::size_t t = 0; t < nt; ++t) {
        const auto m = match_detections(frame_preds, frame_gts, config.thresholds[t]);
        flags_by_threshold.push_back(m.is_tp);
        for (std::size_t p = 0; p < frame_preds.size(); ++p) {
          pooled[t].emplace_back(frame_preds[p].confidence, pooled_tp[t].size());
          pooled_tp[t].push_back(m.is_tp[p]);
        }
      }
      const auto m = match_detections(frame_preds, frame_gts, config.tp_threshold);
      for (const auto& [p, g] : m.pairs)
        tp_pairs.emplace_back(frame_preds[static_cast<std::size_t>(p)], frame_gts[static_cast<std::size_t>(g)]);
    }
    if (gt_count == 0 && pred_count == 0) continue;

    std::vector<double> aps;
    for (std::size_t t = 0; t < nt; ++t) {
      auto& entries = pooled[t];
      std::stable_sort(entries.begin(), entries.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      std::vector<bool> flags;
      flags.reserve(entries.size());
      for (const auto& e : entries) flags.push_back(pooled_tp[t][e.second]);
      aps.push_back(average_precision(flags, gt_count));
    }
    report.classes.push_back(cls);
    report.ap[cls] = aps;
    report.class_tp[cls] = tp_metrics(tp_pairs);
  }

  if (report.classes.empty()) {
    report.empty = true;
    report.map = 0.0;
    report.mtp = {1.0, 1.0, 1.0, 1.0, 1.0};
    report.nds = nds(0.0, report.mtp);
    return report;
  }
  double ap_sum = 0.0;
  std::size_t ap_n = 0;
  TpErrors tp_sum{};
  for (ObjectClass cls : report.classes) {
    for (double a : report.ap[cls]) {
      ap_sum += a;
      ++ap_n;
    }
    for (int m = 0; m < 5; ++m) tp_sum[m] += report.class_tp[cls][m];
  }
  report.map = ap_sum / static_cast<double>(ap_n);
  for (int m = 0; m < 5; ++m) report.mtp[m] = tp_sum[m] / static_cast<double>(report.classes.size());
  report.nds = nds(report.map, report.mtp);
  return report;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

struct JsonContext {
  std::string source;

  [[noreturn]] void fail(const std::string& path, const std::string& what) const {
    throw ParseError(source + ": field '" + path + "': " + what);
  }

  const json& field(const json& obj, const std::string& key, const std::string& path) const {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path + "." + key, "missing");
    return *it;
  }

  double number(const json& v, const std::string& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(path, "must be finite");
    return x;
  }

  template <int N>
  Eigen::Matrix<double, N, 1> vec(const json& v, const std::string& path) const {
    if (!v.is_array() || v.size() != N) fail(path, "expected an array of " + std::to_string(N) + " numbers");
    Eigen::Matrix<double, N, 1> out;
    for (int i = 0; i < N; ++i) out(i) = number(v[static_cast<std::size_t>(i)], path + "[" + std::to_string(i) + "]");
    return out;
  }

  int flag(const json& v, const std::string& path) const {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) fail(path, "expected 0 or 1");
    return v.get<int>();
  }

  std::string string(const json& v, const std::string& path) const {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }

  Box3D box(const json& obj, const std::string& path) const {
    Box3D b;
    b.center = vec<3>(field(obj, "center", path), path + ".center");
    b.size = vec<3>(field(obj, "size", path), path + ".size");
    if (!(b.size.array() > 0.0).all()) fail(path + ".size", "dimensions must be positive");
    b.yaw = number(field(obj, "yaw", path), path + ".yaw");
    b.velocity = vec<2>(field(obj, "velocity", path), path + ".velocity");
    return b;
  }

  ObjectClass object_class(const json& obj, const std::string& path) const {
    const auto name = string(field(obj, "class", path), path + ".class");
    auto c = parse_class(name);
    if (!c) fail(path + ".class", "unknown class '" + name + "'");
    return *c;
  }

  Attribute attribute(const json& obj, const std::string& path) const {
    const auto name = string(field(obj, "attribute", path), path + ".attribute");
    auto a = parse_attribute(name);
    if (!a) fail(path + ".attribute", "unknown attribute '" + name + "'");
    return *a;
  }

  const json& list(const json& root, const char* key) const {
    if (root.is_array()) return root;
    if (root.is_object()) {
      if (auto it = root.find("schema_version"); it != root.end()) {
        if (!it->is_number_integer() || it->get<int>() != kSchemaVersion)
          fail("schema_version", "unsupported schema version (expected " + std::to_string(kSchemaVersion) + ")");
      }
      const auto& l = field(root, key, "$");
      if (!l.is_array()) fail(std::string("$.") + key, "expected an array");
      return l;
    }
    fail("$", "expected an array or an object");
  }
};

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    throw ParseError(source + ": line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
  }
}

json box_json(const Box3D& b) {
  return {{"center", {b.center.x(), b.center.y(), b.center.z()}},
          {"size", {b.size.x(), b.size.y(), b.size.z()}},
          {"yaw", b.yaw},
          {"velocity", {b.velocity.x(), b.velocity.y()}}};
}

}  // namespace

std::vector<FrameGroundTruth> parse_ground_truth(const std::string& text, const std::string& source) {
  const JsonContext ctx{source};
  const json root = parse_json(text, source);
  const json& frames = ctx.list(root, "frames");
  std::vector<FrameGroundTruth> out;
  std::set<std::string> ids;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const std::string path = "frames[" + std::to_string(f) + "]";
    const json& jf = frames[f];
    FrameGroundTruth frame;
    frame.frame_id = ctx.string(ctx.field(jf, "frame_id", path), path + ".frame_id");
    if (!ids.insert(frame.frame_id).second) ctx.fail(path + ".frame_id", "duplicate frame id '" + frame.frame_id + "'");
    if (jf.contains("rain")) frame.rain = ctx.flag(jf["rain"], path + ".rain");
    if (jf.contains("night")) frame.night = ctx.flag(jf["night"], path + ".night");
    const json& anns = ctx.field(jf, "annotations", path);
    if (!anns.is_array()) ctx.fail(path + ".annotations", "expected an array");
    for (std::size_t a = 0; a < anns.size(); ++a) {
      const std::string ap = path + ".annotations[" + std::to_string(a) + "]";
      Annotation ann;
      ann.class_id = ctx.object_class(anns[a], ap);
      ann.box = ctx.box(anns[a], ap);
      ann.attribute = ctx.attribute(anns[a], ap);
      frame.annotations.push_back(ann);
    }
    out.push_back(std::move(frame));
  }
  return out;
}

std::vector<FramePredictions> parse_predictions(const std::string& text, const std::string& source) {
  const JsonContext ctx{source};
  const json root = parse_json(text, source);
  const json& frames = ctx.list(root, "predictions");
  std::vector<FramePredictions> out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const std::string path = "predictions[" + std::to_string(f) + "]";
    const json& jf = frames[f];
    FramePredictions frame;
    frame.frame_id = ctx.string(ctx.field(jf, "frame_id", path), path + ".frame_id");
    const json& dets = ctx.field(jf, "detections", path);
    if (!dets.is_array()) ctx.fail(path + ".detections", "expected an array");
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const std::string dp = path + ".detections[" + std::to_string(d) + "]";
      Detection det;
      det.class_id = ctx.object_class(dets[d], dp);
      det.confidence = ctx.number(ctx.field(dets[d], "confidence", dp), dp + ".confidence");
      det.box = ctx.box(dets[d], dp);
      det.attribute = ctx.attribute(dets[d], dp);
      frame.detections.push_back(std::move(det));
    }
    out.push_back(std::move(frame));
  }
  return out;
}

std::string ground_truth_to_json(std::span<const FrameGroundTruth> frames) {
  json jf = json::array();
  for (const auto& f : frames) {
    json anns = json::array();
    for (const auto& a : f.annotations) {
      json ja = box_json(a.box);
      ja["class"] = std::string(class_name(a.class_id));
      ja["attribute"] = std::string(attribute_name(a.attribute));
      anns.push_back(std::move(ja));
    }
    json frame = {{"frame_id", f.frame_id}, {"annotations", std::move(anns)}};
    if (f.rain) frame["rain"] = *f.rain;
    if (f.night) frame["night"] = *f.night;
    jf.push_back(std::move(frame));
  }
  return json{{"schema_version", kSchemaVersion}, {"frames", std::move(jf)}}.dump(1);
}

std::string predictions_to_json(std::span<const FramePredictions> preds) {
  json jp = json::array();
  for (const auto& f : preds) {
    json dets = json::array();
    for (const auto& d : f.detections) {
      json jd = box_json(d.box);
      jd["class"] = std::string(class_name(d.class_id));
      jd["confidence"] = d.confidence;
      jd["attribute"] = std::string(attribute_name(d.attribute));
      dets.push_back(std::move(jd));
    }
    jp.push_back({{"frame_id", f.frame_id}, {"detections", std::move(dets)}});
  }
  return json{{"schema_version", kSchemaVersion}, {"predictions", std::move(jp)}}.dump(1);
}

std::string report_to_json(const MetricsReport& r) {
  json ap = json::object();
  json tp = json::object();
  for (ObjectClass c : r.classes) {
    const std::string name(class_name(c));
    json per = json::object();
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      std::ostringstream key;
      key << r.thresholds[t];
      per[key.str()] = r.ap.at(c)[t];
    }
    ap[name] = std::move(per);
    const auto& e = r.class_tp.at(c);
    tp[name] = {{"ATE", e[kTranslation]}, {"ASE", e[kScale]}, {"AOE", e[kOrientation]},
                {"AVE", e[kVelocity]}, {"AAE", e[kAttribute]}};
  }
  json classes = json::array();
  for (ObjectClass c : r.classes) classes.push_back(std::string(class_name(c)));
  json j = {{"schema_version", kSchemaVersion},
            {"frame_count", r.frame_count},
            {"empty", r.empty},
            {"classes", classes},
            {"thresholds", r.thresholds},
            {"ap", ap},
            {"class_tp_errors", tp},
            {"mAP", r.map},
            {"mATE", r.mtp[kTranslation]},
            {"mASE", r.mtp[kScale]},
            {"mAOE", r.mtp[kOrientation]},
            {"mAVE", r.mtp[kVelocity]},
            {"mAAE", r.mtp[kAttribute]},
            {"NDS", r.nds}};
  return j.dump(2);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<FrameGroundTruth> read_ground_truth(const std::filesystem::path& path) {
  return parse_ground_truth(read_text(path), path.string());
}

std::vector<FramePredictions> read_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_text(path), path.string());
}

MetricsReport evaluate_files(const std::filesystem::path& preds, const std::filesystem::path& gts,
                             const EvalConfig& config) {
  const auto p = read_predictions(preds);
  const auto g = read_ground_truth(gts);
  return evaluate(p, g, config);
}

}  // namespace redformer::metrics
