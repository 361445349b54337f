#include "redformer/model.hpp"

#include "redformer/params.hpp"

#include <stdexcept>

namespace redformer::model {

namespace {

constexpr double kPosEmbedSd = 0.02;

}  // namespace

ModelParams ModelParams::init(const ModelDims& dims, std::uint64_t seed) {
  if (dims.channels <= 0 || dims.layers <= 0 || dims.heads <= 0 || dims.channels % dims.heads != 0 ||
      dims.channels % 2 != 0 || dims.queries <= 0 || dims.capacity < 1 || dims.x_cells <= 0 || dims.y_cells <= 0)
    throw std::invalid_argument("ModelParams: invalid dimensions");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6d6f64u};
  std::mt19937_64 rng(seq);
  ModelParams p;
  p.dims = dims;
  const int c = dims.channels;
  p.embedding = radar::EmbeddingTable::init(dims.capacity, c, rng);
  p.gated = radar::GatedUnitParams::init(c, rng);
  p.encoder.backbone = encoder::ImageBackboneParams::init(c, rng);
  p.encoder.pos_embed = ag::Var::leaf(params::normal(dims.x_cells * dims.y_cells, c, kPosEmbedSd, rng), true);
  for (int l = 0; l < dims.layers; ++l) {
    encoder::EncoderLayerParams layer;
    layer.temporal = encoder::AttentionParams::init(c, dims.heads, rng);
    layer.spatial = encoder::AttentionParams::init(c, dims.heads, rng);
    layer.ffn = encoder::FeedForwardParams::init(c, 2 * c, rng);
    p.encoder.layers.push_back(std::move(layer));
  }
  p.decoder = detection::DecoderParams::init(dims.queries, c, rng);
  p.context = detection::ContextParams::init(c, rng);
  return p;
}

std::vector<NamedTensor> ModelParams::census() const {
  std::vector<NamedTensor> out;
  auto add = [&](const std::string& group, const std::string& name, const ag::Var& v) {
    out.push_back({group, name, v});
  };
  add("embedding", "embedding.table", embedding.table);
  add("gated_unit", "gated.w1", gated.w1);
  add("gated_unit", "gated.b1", gated.b1);
  add("gated_unit", "gated.w2", gated.w2);
  add("gated_unit", "gated.b2", gated.b2);
  add("pos_embed", "encoder.pos_embed", encoder.pos_embed);
  for (std::size_t s = 0; s < encoder.backbone.stages.size(); ++s) {
    const std::string base = "backbone.stage" + std::to_string(s);
    add("backbone", base + ".weight", encoder.backbone.stages[s].weight);
    add("backbone", base + ".bias", encoder.backbone.stages[s].bias);
  }
  auto add_attention = [&](const std::string& base, const encoder::AttentionParams& a) {
    add("attention", base + ".wq", a.wq);
    add("attention", base + ".bq", a.bq);
    add("attention", base + ".wk", a.wk);
    add("attention", base + ".bk", a.bk);
    add("attention", base + ".wv", a.wv);
    add("attention", base + ".bv", a.bv);
    add("attention", base + ".wo", a.wo);
    add("attention", base + ".bo", a.bo);
  };
  for (std::size_t l = 0; l < encoder.layers.size(); ++l) {
    const std::string base = "encoder.layer" + std::to_string(l);
    add_attention(base + ".temporal", encoder.layers[l].temporal);
    add_attention(base + ".spatial", encoder.layers[l].spatial);
    add("ffn", base + ".ffn.w1", encoder.layers[l].ffn.w1);
    add("ffn", base + ".ffn.b1", encoder.layers[l].ffn.b1);
    add("ffn", base + ".ffn.w2", encoder.layers[l].ffn.w2);
    add("ffn", base + ".ffn.b2", encoder.layers[l].ffn.b2);
  }
  add("object_queries", "decoder.object_queries", decoder.object_queries);
  add("detection_head", "decoder.wq", decoder.wq);
  add("detection_head", "decoder.bq", decoder.bq);
  add("detection_head", "decoder.wk", decoder.wk);
  add("detection_head", "decoder.bk", decoder.bk);
  add("detection_head", "decoder.wv", decoder.wv);
  add("detection_head", "decoder.bv", decoder.bv);
  add("detection_head", "decoder.wo", decoder.wo);
  add("detection_head", "decoder.bo", decoder.bo);
  add("detection_head", "decoder.w_cls", decoder.w_cls);
  add("detection_head", "decoder.b_cls", decoder.b_cls);
  add("detection_head", "decoder.w_box", decoder.w_box);
  add("detection_head", "decoder.b_box", decoder.b_box);
  add("rain_head", "context.w_rain", context.w_rain);
  add("rain_head", "context.b_rain", context.b_rain);
  add("tod_head", "context.w_night", context.w_night);
  add("tod_head", "context.b_night", context.b_night);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : census()) n += static_cast<std::size_t>(t.var.value().size());
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams out = init(dims, 0);
  const auto src = census();
  auto dst = out.census();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k].var.mutable_value() = src[k].var.value();
  return out;
}

Model::Model(ModelParams params, geometry::SensorRig rig, geometry::BevGridSpec grid, bool with_rb)
    : params_(std::move(params)), rig_(std::move(rig)), grid_(grid), with_rb_(with_rb) {
  if (!rig_.valid() || rig_.cameras.empty()) throw std::invalid_argument("Model: invalid rig");
  if (grid_.x_cells != params_.dims.x_cells || grid_.y_cells != params_.dims.y_cells)
    throw std::invalid_argument("Model: grid does not match parameter dimensions");
  const auto& cam = rig_.cameras.front();
  for (const auto& c : rig_.cameras)
    if (c.width != cam.width || c.height != cam.height)
      throw std::invalid_argument("Model: cameras must share one image size");
  plan_ = encoder::build_sampling_plan(rig_, grid_, cam.height / encoder::kFeatureStride,
                                       cam.width / encoder::kFeatureStride);
}

FrameOutputs Model::forward(const data::FrameRecord& frame, const std::optional<ag::Matrix>& aligned_prev) const {
  if (frame.images.size() != rig_.cameras.size())
    throw std::invalid_argument("Model::forward: frame '" + frame.frame_id + "' has wrong camera count");
  std::vector<encoder::CameraImage> images;
  images.reserve(frame.images.size());
  for (const auto& img : frame.images) images.push_back(data::to_camera_image(img));
  const auto feats = encoder::extract_image_features(images, params_.encoder.backbone);

  ag::Var radar_bev;
  if (with_rb_) {
    const auto sal = radar::build_saliency(frame.radar, rig_, grid_);
    radar_bev = radar::gated_unit(radar::embed_saliency(sal, params_.embedding), params_.gated);
  } else {
    radar_bev = ag::Var::constant(ag::Matrix::Zero(grid_.cell_count(), params_.dims.channels));
  }

  encoder::EncoderInputs in{radar_bev, &feats, aligned_prev};
  FrameOutputs out;
  out.bev = encoder::encode(in, params_.encoder, plan_);
  out.raw = detection::decode_objects(out.bev, params_.decoder, grid_);
  out.context = detection::predict_context(out.bev, params_.context);
  return out;
}

ag::Matrix Model::align(const ag::Matrix& prev_bev, const data::FrameRecord& prev,
                        const data::FrameRecord& curr) const {
  const geometry::Pose prev_from_curr = prev.ego_pose.inverse().compose(curr.ego_pose);
  return encoder::align_prev_bev(prev_bev, prev_from_curr, grid_);
}

std::vector<std::vector<Detection>> Model::infer_scene(const data::Scene& scene) const {
  std::vector<std::vector<Detection>> out;
  std::optional<ag::Matrix> prev;
  for (std::size_t f = 0; f < scene.frames.size(); ++f) {
    std::optional<ag::Matrix> aligned;
    if (prev) aligned = align(*prev, scene.frames[f - 1], scene.frames[f]);
    const auto o = forward(scene.frames[f], aligned);
    out.push_back(detection::to_detections(o.raw, grid_));
    prev = o.bev.value();
  }
  return out;
}

}  // namespace redformer::model
