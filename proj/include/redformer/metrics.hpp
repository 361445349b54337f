#pragma once

#include "redformer/detection_types.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace redformer::metrics {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  std::vector<double> thresholds{0.5, 1.0, 2.0, 4.0};  // m, strictly increasing
  double tp_threshold = 2.0;                           // m
  std::vector<ObjectClass> classes{ObjectClass::vehicle, ObjectClass::motorcycle, ObjectClass::pedestrian,
                                   ObjectClass::barrier};

  void validate() const;
};

struct FrameGroundTruth {
  std::string frame_id;
  std::optional<int> rain;   // w(t)
  std::optional<int> night;  // T(t)
  std::vector<Annotation> annotations;
};

struct FramePredictions {
  std::string frame_id;
  std::vector<Detection> detections;
};

// Order of the five true-positive error metrics.
enum TpMetric : int { kTranslation = 0, kScale, kOrientation, kVelocity, kAttribute };
using TpErrors = std::array<double, 5>;

struct MatchResult {
  std::vector<bool> is_tp;                // indexed like the input predictions
  std::vector<std::pair<int, int>> pairs;  // (prediction, ground truth)
};

// Single frame, single class. Predictions are visited by descending
// confidence (ties by input order); each takes the nearest unmatched ground
// truth whose ground-plane centre distance is below `threshold`.
MatchResult match_detections(std::span<const Detection> preds, std::span<const Annotation> gts, double threshold);

// `tp` is ordered by descending confidence. 101-point interpolated AP.
double average_precision(const std::vector<bool>& tp, std::size_t gt_count);

double translation_error(const Box3D& pred, const Box3D& gt);
double scale_error(const Box3D& pred, const Box3D& gt);
double orientation_error(const Box3D& pred, const Box3D& gt);
double velocity_error(const Box3D& pred, const Box3D& gt);

// Mean of each error over the pairs; every metric is 1.0 when `pairs` is empty.
TpErrors tp_metrics(std::span<const std::pair<Detection, Annotation>> pairs);

// 0.5 * mAP + sum 0.1 * max(1 - mTP, 0).
double nds(double map, const TpErrors& mtps);

enum class Subset { all, rain, night };
std::optional<Subset> parse_subset(std::string_view name);
std::string_view subset_name(Subset s);

// Frames whose label matches the subset; throws DataError on an unlabeled frame.
std::vector<FrameGroundTruth> filter_subset(std::span<const FrameGroundTruth> frames, Subset subset);

struct MetricsReport {
  std::size_t frame_count = 0;
  bool empty = false;  // no frames, or no class with ground truth or predictions
  std::vector<ObjectClass> classes;                     // classes entering the means
  std::vector<double> thresholds;
  std::map<ObjectClass, std::vector<double>> ap;        // per threshold
  std::map<ObjectClass, TpErrors> class_tp;
  double map = 0.0;
  TpErrors mtp{1.0, 1.0, 1.0, 1.0, 1.0};
  double nds = 0.0;
  // Per-frame TP flags at each threshold, keyed by frame id then class.
  std::map<std::string, std::map<ObjectClass, std::vector<std::vector<bool>>>> frame_tp;
};

MetricsReport evaluate(std::span<const FramePredictions> preds, std::span<const FrameGroundTruth> gts,
                       const EvalConfig& config = {});

// JSON schemas (see README). Parsing accepts either a bare array or an object
// carrying schema_version plus "frames" / "predictions".
inline constexpr int kSchemaVersion = 1;
std::vector<FrameGroundTruth> parse_ground_truth(const std::string& text, const std::string& source = "<memory>");
std::vector<FramePredictions> parse_predictions(const std::string& text, const std::string& source = "<memory>");
std::string ground_truth_to_json(std::span<const FrameGroundTruth> frames);
std::string predictions_to_json(std::span<const FramePredictions> preds);
std::string report_to_json(const MetricsReport& report);

std::vector<FrameGroundTruth> read_ground_truth(const std::filesystem::path& path);
std::vector<FramePredictions> read_predictions(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

MetricsReport evaluate_files(const std::filesystem::path& preds, const std::filesystem::path& gts,
                             const EvalConfig& config = {});

}  // namespace redformer::metrics
