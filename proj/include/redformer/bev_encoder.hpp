#pragma once

#include "redformer/autograd.hpp"
#include "redformer/geometry.hpp"
#include "redformer/radar_backbone.hpp"

#include <memory>
#include <optional>
#include <random>
#include <vector>

namespace redformer::encoder {

// One camera image as (H*W) x 3, row-major pixels, values in [0,1].
struct CameraImage {
  int height = 0;
  int width = 0;
  ag::Matrix pixels;
};

struct ConvStage {
  ag::Var weight;  // (9 * C_in) x C_out
  ag::Var bias;    // 1 x C_out
  int stride = 1;
};

// Three 3x3 conv stages (stride 2, 2, 1) with ReLU: 3 -> C/2 -> C -> C at 1/4 resolution.
struct ImageBackboneParams {
  std::vector<ConvStage> stages;

  static ImageBackboneParams init(int channels, std::mt19937_64& rng);
};

inline constexpr int kFeatureStride = 4;

// Per-camera feature maps stacked as (N_c * h * w) x C; camera k occupies
// rows [k*h*w, (k+1)*h*w), pixel (y, x) at row offset y*w + x.
struct ImageFeatureSet {
  int cameras = 0;
  int height = 0;  // feature-map rows, H / 4
  int width = 0;   // feature-map cols, W / 4
  ag::Var features;
};

ImageFeatureSet extract_image_features(const std::vector<CameraImage>& images,
                                       const ImageBackboneParams& params);

struct AttentionParams {
  ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;

  int channels() const { return static_cast<int>(wq.rows()); }
  static AttentionParams init(int channels, int heads, std::mt19937_64& rng);
};

struct FeedForwardParams {
  ag::Var w1, b1, w2, b2;

  static FeedForwardParams init(int channels, int hidden, std::mt19937_64& rng);
};

struct EncoderLayerParams {
  AttentionParams temporal;
  AttentionParams spatial;
  FeedForwardParams ffn;
};

struct EncoderParams {
  ImageBackboneParams backbone;
  ag::Var pos_embed;  // (X*Y) x C, shared across layers
  std::vector<EncoderLayerParams> layers;
};

ag::Var make_bev_queries(const ag::Var& radar_bev, const ag::Var& pos_embed);

// Resamples the previous BEV (cells x C) into the current ego frame.
// `prev_from_curr` maps current-ego coordinates into previous-ego
// coordinates; only its yaw and x/y translation are used.
ag::Matrix align_prev_bev(const ag::Matrix& prev, const geometry::Pose& prev_from_curr,
                          const geometry::BevGridSpec& grid);

// Per-cell attention over {Q_p, prev_p} (or {Q_p, Q_p} without history),
// with residual. When `attention_out` is given it receives the
// (cells*2) x heads attention weights.
ag::Var temporal_self_attention(const ag::Var& queries, const std::optional<ag::Matrix>& aligned_prev,
                                const AttentionParams& params, ag::Matrix* attention_out = nullptr);

// Geometry of the pillar-to-image lookup, fixed per rig/grid/feature size.
struct SamplingPlan {
  int cells = 0;
  std::shared_ptr<const ag::SparseMatrix> sample_from_features;  // samples x (N_c*h*w)
  std::vector<int> sample_cell;                                   // query row of each sample
  std::shared_ptr<const std::vector<int>> group_offsets;          // (cell, camera) groups
  std::shared_ptr<const ag::SparseMatrix> cell_from_group;        // cells x groups, camera mean
  std::vector<double> hit_mask;                                   // 1 when the cell has >= 1 hit

  std::size_t samples() const { return sample_cell.size(); }
};

inline const std::vector<double> kDefaultPillarHeights{-1.0, 0.0, 1.0};

SamplingPlan build_sampling_plan(const geometry::SensorRig& rig, const geometry::BevGridSpec& grid,
                                 int feature_height, int feature_width,
                                 const std::vector<double>& pillar_heights = kDefaultPillarHeights);

ag::Var spatial_cross_attention(const ag::Var& bev, const ImageFeatureSet& feats, const SamplingPlan& plan,
                                const AttentionParams& params, ag::Matrix* attention_out = nullptr);

ag::Var spatial_cross_attention(const ag::Var& bev, const ImageFeatureSet& feats,
                                const geometry::SensorRig& rig, const geometry::BevGridSpec& grid,
                                const AttentionParams& params);

// relu(x W1 + b1) W2 + b2, with residual.
ag::Var feed_forward(const ag::Var& x, const FeedForwardParams& params);

struct EncoderInputs {
  ag::Var radar_bev;  // cells x C
  const ImageFeatureSet* image_features = nullptr;
  std::optional<ag::Matrix> aligned_prev;
};

ag::Var encode(const EncoderInputs& inputs, const EncoderParams& params, const SamplingPlan& plan);

}  // namespace redformer::encoder
