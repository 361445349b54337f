#pragma once

#include "redformer/autograd.hpp"
#include "redformer/detection_types.hpp"
#include "redformer/geometry.hpp"

#include <random>
#include <span>
#include <utility>
#include <vector>

namespace redformer::detection {

// Regression layout: x, y (cell units), z (m), log l, log w, log h, sin yaw,
// cos yaw, vx, vy (m/s).
inline constexpr int kBoxParams = 10;
// Centre offsets are bounded to +-kOffsetSpan cells around the attention reference.
inline constexpr double kOffsetSpan = 2.0;

struct DecoderParams {
  ag::Var object_queries;  // N_q x C
  ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
  ag::Var w_cls, b_cls;  // C x (classes + 1)
  ag::Var w_box, b_box;  // C x 10

  int num_queries() const { return static_cast<int>(object_queries.rows()); }
  static DecoderParams init(int num_queries, int channels, std::mt19937_64& rng);
};

struct ContextParams {
  ag::Var w_rain, b_rain;    // C x 1, 1 x 1
  ag::Var w_night, b_night;  // C x 1, 1 x 1

  static ContextParams init(int channels, std::mt19937_64& rng);
};

struct RawDetections {
  ag::Var class_logits;  // N_q x (classes + 1)
  ag::Var boxes;         // N_q x 10, regression layout
  ag::Matrix reference;  // N_q x 2, attention-weighted cell centre (m)
};

// One cross-attention layer from object queries to the flattened BEV, then
// class and box branches. Predicted centres are the attention-weighted
// reference point plus a sigmoid-bounded offset.
RawDetections decode_objects(const ag::Var& bev, const DecoderParams& params, const geometry::BevGridSpec& grid);

// Converts raw outputs into boxes with probabilities and confidences.
std::vector<Detection> to_detections(const RawDetections& raw, const geometry::BevGridSpec& grid);

// Regression target for a ground-truth box.
Eigen::Matrix<double, 1, kBoxParams> encode_box(const Box3D& box, const geometry::BevGridSpec& grid);
Box3D decode_box(const Eigen::Matrix<double, 1, kBoxParams>& params, const geometry::BevGridSpec& grid);

struct ContextPrediction {
  ag::Var rain_logit;   // 1 x 1
  ag::Var night_logit;  // 1 x 1
};

ContextPrediction predict_context(const ag::Var& bev, const ContextParams& params);

using Assignment = std::vector<std::pair<int, int>>;  // (row, col), sorted by row

// Minimum-cost one-to-one assignment of size min(rows, cols). Among optimal
// assignments the one with the lexicographically smallest sorted pair list
// is returned.
Assignment hungarian_match(const Eigen::MatrixXd& cost);

struct LossWeights {
  double cls = 1.0;
  double box = 5.0;
  double no_object = 0.1;  // relative class weight of the no-object target
};

// Matching cost: cls * -log p(class) + box * L1(box params).
Eigen::MatrixXd match_cost(const RawDetections& raw, std::span<const Annotation> annotations,
                           const LossWeights& w, const geometry::BevGridSpec& grid);

// Set-to-set detection loss. Classification is a weighted mean over all
// queries (no-object targets weighted by w.no_object); the box L1 over
// matched pairs is normalized by max(N_k, 1).
ag::Var detection_loss(const RawDetections& raw, std::span<const Annotation> annotations, const LossWeights& w,
                       const geometry::BevGridSpec& grid, Assignment* matching = nullptr);

// Numerically stable binary cross-entropy on a logit.
double binary_ce(double logit, int label);
ag::Var binary_ce(const ag::Var& logit, int label);

struct LossBreakdown {
  double l_det = 0.0;
  double l_rain = 0.0;
  double l_tod = 0.0;
  double l_joint = 0.0;
};

LossBreakdown joint_loss(double l_det, double l_rain, double l_tod);

}  // namespace redformer::detection
