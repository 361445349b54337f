#pragma once

#include "redformer/bev_encoder.hpp"
#include "redformer/detection_model.hpp"
#include "redformer/radar_backbone.hpp"
#include "redformer/synthetic_data.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace redformer::model {

struct ModelDims {
  int channels = 32;
  int layers = 2;
  int heads = 4;
  int queries = 20;
  int capacity = 10;  // K
  int x_cells = 32;
  int y_cells = 32;

  bool operator==(const ModelDims&) const = default;
};

struct NamedTensor {
  std::string group;
  std::string name;
  ag::Var var;
};

// Parameter groups: embedding, gated_unit, pos_embed, backbone, attention,
// ffn, object_queries, detection_head, rain_head, tod_head.
struct ModelParams {
  ModelDims dims;
  radar::EmbeddingTable embedding;
  radar::GatedUnitParams gated;
  encoder::EncoderParams encoder;
  detection::DecoderParams decoder;
  detection::ContextParams context;

  static ModelParams init(const ModelDims& dims, std::uint64_t seed);
  // Stable order; the Vars share storage with the members above.
  std::vector<NamedTensor> census() const;
  std::size_t parameter_count() const;
  // Copies share tensor storage; clone() does not.
  ModelParams clone() const;
};

struct FrameOutputs {
  ag::Var bev;
  detection::RawDetections raw;
  detection::ContextPrediction context;
};

class Model {
 public:
  Model(ModelParams params, geometry::SensorRig rig, geometry::BevGridSpec grid, bool with_rb = true);

  // Forward pass for one frame. `aligned_prev` is the previous BEV already
  // warped into this frame's ego coordinates.
  FrameOutputs forward(const data::FrameRecord& frame, const std::optional<ag::Matrix>& aligned_prev) const;

  // Warps the previous frame's BEV into `curr`'s ego frame.
  ag::Matrix align(const ag::Matrix& prev_bev, const data::FrameRecord& prev, const data::FrameRecord& curr) const;

  // Temporal inference over a scene; one detection list per frame.
  std::vector<std::vector<Detection>> infer_scene(const data::Scene& scene) const;

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const geometry::SensorRig& rig() const { return rig_; }
  const geometry::BevGridSpec& grid() const { return grid_; }
  bool with_rb() const { return with_rb_; }

 private:
  ModelParams params_;
  geometry::SensorRig rig_;
  geometry::BevGridSpec grid_;
  bool with_rb_;
  encoder::SamplingPlan plan_;
};

}  // namespace redformer::model
