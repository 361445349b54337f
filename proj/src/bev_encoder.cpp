#include "redformer/bev_encoder.hpp"

#include "redformer/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace redformer::encoder {

namespace {

ag::Var linear(const ag::Var& x, const ag::Var& w, const ag::Var& b) {
  return ag::add_bias(ag::matmul(x, w), b);
}

ag::Var weight(int in, int out, double sd, std::mt19937_64& rng) {
  return ag::Var::leaf(params::normal(in, out, sd, rng), true);
}

ag::Var zeros(int rows, int cols) { return ag::Var::leaf(ag::Matrix::Zero(rows, cols), true); }

// Patch table for a 3x3, padding-1 convolution over `cameras` stacked maps.
std::shared_ptr<Eigen::MatrixXi> conv_table(int cameras, int h, int w, int stride, int& out_h, int& out_w) {
  out_h = (h - 1) / stride + 1;
  out_w = (w - 1) / stride + 1;
  auto table = std::make_shared<Eigen::MatrixXi>(cameras * out_h * out_w, 9);
  for (int cam = 0; cam < cameras; ++cam)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const int r = (cam * out_h + oy) * out_w + ox;
        for (int ky = -1; ky <= 1; ++ky)
          for (int kx = -1; kx <= 1; ++kx) {
            const int iy = oy * stride + ky;
            const int ix = ox * stride + kx;
            const int tap = (ky + 1) * 3 + (kx + 1);
            (*table)(r, tap) = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? (cam * h + iy) * w + ix : -1;
          }
      }
  return table;
}

// Rounds values within 1e-9 of an integer onto it so lattice-aligned
// resampling is exact.
double snap(double x) {
  const double r = std::round(x);
  return std::abs(x - r) < 1e-9 ? r : x;
}

}  // namespace

ImageBackboneParams ImageBackboneParams::init(int channels, std::mt19937_64& rng) {
  if (channels < 2) throw std::invalid_argument("image backbone: channels must be >= 2");
  ImageBackboneParams p;
  const int widths[] = {3, channels / 2, channels, channels};
  const int strides[] = {2, 2, 1};
  for (int s = 0; s < 3; ++s) {
    const int fan_in = 9 * widths[s];
    p.stages.push_back({weight(fan_in, widths[s + 1], std::sqrt(2.0 / fan_in), rng), zeros(1, widths[s + 1]),
                        strides[s]});
  }
  return p;
}

ImageFeatureSet extract_image_features(const std::vector<CameraImage>& images, const ImageBackboneParams& params) {
  if (images.empty()) throw std::invalid_argument("extract_image_features: no images");
  const int h = images[0].height, w = images[0].width;
  if (h % kFeatureStride != 0 || w % kFeatureStride != 0)
    throw std::invalid_argument("extract_image_features: image size must be divisible by 4");
  std::vector<ag::Var> inputs;
  for (const auto& img : images) {
    if (img.height != h || img.width != w || img.pixels.rows() != static_cast<Eigen::Index>(h) * w ||
        img.pixels.cols() != 3)
      throw std::invalid_argument("extract_image_features: image shape mismatch");
    inputs.push_back(ag::Var::constant(img.pixels));
  }
  const int cams = static_cast<int>(images.size());
  ag::Var x = ag::vconcat(inputs);
  int cur_h = h, cur_w = w;
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    const auto& st = params.stages[s];
    int out_h = 0, out_w = 0;
    auto table = conv_table(cams, cur_h, cur_w, st.stride, out_h, out_w);
    x = linear(ag::patch_gather(x, table), st.weight, st.bias);
    if (s + 1 < params.stages.size()) x = ag::relu(x);
    cur_h = out_h;
    cur_w = out_w;
  }
  return {cams, cur_h, cur_w, x};
}

AttentionParams AttentionParams::init(int channels, int heads, std::mt19937_64& rng) {
  if (heads < 1 || channels % heads != 0) throw std::invalid_argument("attention: channels not divisible by heads");
  const double sd = 1.0 / std::sqrt(static_cast<double>(channels));
  AttentionParams p;
  p.heads = heads;
  p.wq = weight(channels, channels, sd, rng);
  p.bq = zeros(1, channels);
  p.wk = weight(channels, channels, sd, rng);
  p.bk = zeros(1, channels);
  p.wv = weight(channels, channels, sd, rng);
  p.bv = zeros(1, channels);
  p.wo = weight(channels, channels, sd, rng);
  p.bo = zeros(1, channels);
  return p;
}

FeedForwardParams FeedForwardParams::init(int channels, int hidden, std::mt19937_64& rng) {
  FeedForwardParams p;
  p.w1 = weight(channels, hidden, 1.0 / std::sqrt(static_cast<double>(channels)), rng);
  p.b1 = zeros(1, hidden);
  p.w2 = weight(hidden, channels, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  p.b2 = zeros(1, channels);
  return p;
}

ag::Var make_bev_queries(const ag::Var& radar_bev, const ag::Var& pos_embed) {
  if (radar_bev.rows() != pos_embed.rows() || radar_bev.cols() != pos_embed.cols())
    throw std::invalid_argument("make_bev_queries: radar BEV and positional embedding shapes differ");
  return ag::add(radar_bev, pos_embed);
}

ag::Matrix align_prev_bev(const ag::Matrix& prev, const geometry::Pose& prev_from_curr,
                          const geometry::BevGridSpec& grid) {
  if (prev.rows() != grid.cell_count()) throw std::invalid_argument("align_prev_bev: grid mismatch");
  const double yaw = prev_from_curr.yaw();
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double tx = prev_from_curr.translation.x(), ty = prev_from_curr.translation.y();
  ag::Matrix out = ag::Matrix::Zero(prev.rows(), prev.cols());
  for (int i = 0; i < grid.x_cells; ++i)
    for (int j = 0; j < grid.y_cells; ++j) {
      const auto p = grid.cell_center(i, j);
      const double px = c * p.x() - s * p.y() + tx;
      const double py = s * p.x() + c * p.y() + ty;
      const double u = snap((px + grid.half_extent_x()) / grid.cell_size - 0.5);
      const double v = snap((py + grid.half_extent_y()) / grid.cell_size - 0.5);
      const int i0 = static_cast<int>(std::floor(u));
      const int j0 = static_cast<int>(std::floor(v));
      const double fu = u - i0, fv = v - j0;
      auto row = out.row(grid.flat(i, j));
      for (int di = 0; di <= 1; ++di)
        for (int dj = 0; dj <= 1; ++dj) {
          const double wgt = (di ? fu : 1.0 - fu) * (dj ? fv : 1.0 - fv);
          const int si = i0 + di, sj = j0 + dj;
          if (wgt == 0.0 || si < 0 || sj < 0 || si >= grid.x_cells || sj >= grid.y_cells) continue;
          row += wgt * prev.row(grid.flat(si, sj));
        }
    }
  return out;
}

ag::Var temporal_self_attention(const ag::Var& queries, const std::optional<ag::Matrix>& aligned_prev,
                                const AttentionParams& params, ag::Matrix* attention_out) {
  const int cells = static_cast<int>(queries.rows());
  if (queries.cols() != params.channels())
    throw std::invalid_argument("temporal_self_attention: channel mismatch");
  std::vector<int> query_idx(static_cast<std::size_t>(2 * cells));
  std::vector<int> kv_idx(static_cast<std::size_t>(2 * cells));
  auto offsets = std::make_shared<std::vector<int>>(cells + 1);
  for (int p = 0; p < cells; ++p) {
    query_idx[2 * p] = query_idx[2 * p + 1] = p;
    kv_idx[2 * p] = p;
    kv_idx[2 * p + 1] = aligned_prev ? cells + p : p;
    (*offsets)[p] = 2 * p;
  }
  (*offsets)[cells] = 2 * cells;

  ag::Var kv_source = queries;
  if (aligned_prev) {
    if (aligned_prev->rows() != queries.rows() || aligned_prev->cols() != queries.cols())
      throw std::invalid_argument("temporal_self_attention: previous BEV shape mismatch");
    const ag::Var parts[] = {queries, ag::Var::constant(*aligned_prev)};
    kv_source = ag::vconcat(parts);
  }
  const ag::Var kv = ag::gather_rows(kv_source, std::move(kv_idx));
  const ag::Var q = ag::gather_rows(linear(queries, params.wq, params.bq), std::move(query_idx));
  const ag::Var k = linear(kv, params.wk, params.bk);
  const ag::Var v = linear(kv, params.wv, params.bv);
  const double dh = static_cast<double>(params.channels() / params.heads);
  const ag::Var weights = ag::segment_softmax(ag::head_dot(q, k, params.heads, 1.0 / std::sqrt(dh)), offsets);
  if (attention_out) *attention_out = weights.value();
  const ag::Var ctx = ag::segment_weighted_sum(weights, v, offsets);
  return ag::add(queries, linear(ctx, params.wo, params.bo));
}

SamplingPlan build_sampling_plan(const geometry::SensorRig& rig, const geometry::BevGridSpec& grid,
                                 int feature_height, int feature_width, const std::vector<double>& pillar_heights) {
  if (!grid.valid()) throw std::invalid_argument("build_sampling_plan: invalid grid");
  const int cams = static_cast<int>(rig.cameras.size());
  const int per_cam = feature_height * feature_width;
  SamplingPlan plan;
  plan.cells = grid.cell_count();
  plan.hit_mask.assign(static_cast<std::size_t>(plan.cells), 0.0);
  std::vector<Eigen::Triplet<double>> sample_w;
  std::vector<Eigen::Triplet<double>> group_w;
  auto offsets = std::make_shared<std::vector<int>>();
  offsets->push_back(0);
  int sample = 0;
  for (int i = 0; i < grid.x_cells; ++i)
    for (int j = 0; j < grid.y_cells; ++j) {
      const int cell = grid.flat(i, j);
      const auto center = grid.cell_center(i, j);
      std::vector<int> cell_groups;
      for (int k = 0; k < cams; ++k) {
        const auto& cam = rig.cameras[static_cast<std::size_t>(k)];
        const double sx = static_cast<double>(feature_width) / cam.width;
        const double sy = static_cast<double>(feature_height) / cam.height;
        int hits = 0;
        for (double z : pillar_heights) {
          const auto px = geometry::project_to_image({center.x(), center.y(), z}, cam);
          if (!px) continue;
          // Feature-map continuous coordinates (pixel centres at integer + 0.5), border-clamped.
          const double fx = std::clamp(px->u * sx - 0.5, 0.0, feature_width - 1.0);
          const double fy = std::clamp(px->v * sy - 0.5, 0.0, feature_height - 1.0);
          const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
          const int x1 = std::min(x0 + 1, feature_width - 1), y1 = std::min(y0 + 1, feature_height - 1);
          const double ax = fx - x0, ay = fy - y0;
          const int base = k * per_cam;
          sample_w.emplace_back(sample, base + y0 * feature_width + x0, (1 - ax) * (1 - ay));
          sample_w.emplace_back(sample, base + y0 * feature_width + x1, ax * (1 - ay));
          sample_w.emplace_back(sample, base + y1 * feature_width + x0, (1 - ax) * ay);
          sample_w.emplace_back(sample, base + y1 * feature_width + x1, ax * ay);
          plan.sample_cell.push_back(cell);
          ++sample;
          ++hits;
        }
        if (hits > 0) {
          cell_groups.push_back(static_cast<int>(offsets->size()) - 1);
          offsets->push_back(sample);
        }
      }
      for (int g : cell_groups) group_w.emplace_back(cell, g, 1.0 / static_cast<double>(cell_groups.size()));
      if (!cell_groups.empty()) plan.hit_mask[static_cast<std::size_t>(cell)] = 1.0;
    }
  auto s = std::make_shared<ag::SparseMatrix>(sample, cams * per_cam);
  s->setFromTriplets(sample_w.begin(), sample_w.end());  // duplicate taps at the border sum up
  auto m = std::make_shared<ag::SparseMatrix>(plan.cells, static_cast<int>(offsets->size()) - 1);
  m->setFromTriplets(group_w.begin(), group_w.end());
  plan.sample_from_features = std::move(s);
  plan.cell_from_group = std::move(m);
  plan.group_offsets = std::move(offsets);
  return plan;
}

ag::Var spatial_cross_attention(const ag::Var& bev, const ImageFeatureSet& feats, const SamplingPlan& plan,
                                const AttentionParams& params, ag::Matrix* attention_out) {
  if (bev.rows() != plan.cells || bev.cols() != params.channels() || feats.features.cols() != bev.cols() ||
      feats.features.rows() != plan.sample_from_features->cols())
    throw std::invalid_argument("spatial_cross_attention: shape mismatch");
  if (plan.samples() == 0) return bev;
  const ag::Var sampled = ag::sparse_matmul(plan.sample_from_features, feats.features);
  const ag::Var q = ag::gather_rows(linear(bev, params.wq, params.bq), plan.sample_cell);
  const ag::Var k = linear(sampled, params.wk, params.bk);
  const ag::Var v = linear(sampled, params.wv, params.bv);
  const double dh = static_cast<double>(params.channels() / params.heads);
  const ag::Var weights =
      ag::segment_softmax(ag::head_dot(q, k, params.heads, 1.0 / std::sqrt(dh)), plan.group_offsets);
  if (attention_out) *attention_out = weights.value();
  const ag::Var per_camera = ag::segment_weighted_sum(weights, v, plan.group_offsets);
  const ag::Var per_cell = ag::sparse_matmul(plan.cell_from_group, per_camera);
  const ag::Var out = ag::scale_rows(linear(per_cell, params.wo, params.bo), plan.hit_mask);
  return ag::add(bev, out);
}

ag::Var spatial_cross_attention(const ag::Var& bev, const ImageFeatureSet& feats, const geometry::SensorRig& rig,
                                const geometry::BevGridSpec& grid, const AttentionParams& params) {
  if (static_cast<int>(rig.cameras.size()) != feats.cameras)
    throw std::invalid_argument("spatial_cross_attention: camera count mismatch");
  const auto plan = build_sampling_plan(rig, grid, feats.height, feats.width);
  return spatial_cross_attention(bev, feats, plan, params);
}

ag::Var feed_forward(const ag::Var& x, const FeedForwardParams& params) {
  return ag::add(x, linear(ag::relu(linear(x, params.w1, params.b1)), params.w2, params.b2));
}

ag::Var encode(const EncoderInputs& inputs, const EncoderParams& params, const SamplingPlan& plan) {
  if (!inputs.image_features) throw std::invalid_argument("encode: image features required");
  ag::Var q = make_bev_queries(inputs.radar_bev, params.pos_embed);
  for (const auto& layer : params.layers) {
    q = temporal_self_attention(q, inputs.aligned_prev, layer.temporal);
    q = spatial_cross_attention(q, *inputs.image_features, plan, layer.spatial);
    q = feed_forward(q, layer.ffn);
  }
  return q;
}

}  // namespace redformer::encoder
