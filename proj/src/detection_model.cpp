#include "redformer/detection_model.hpp"

#include "redformer/params.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace redformer {

std::string_view class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::vehicle: return "vehicle";
    case ObjectClass::motorcycle: return "motorcycle";
    case ObjectClass::pedestrian: return "pedestrian";
    case ObjectClass::barrier: return "barrier";
  }
  return "unknown";
}

std::optional<ObjectClass> parse_class(std::string_view name) {
  for (int c = 0; c < kNumClasses; ++c)
    if (class_name(static_cast<ObjectClass>(c)) == name) return static_cast<ObjectClass>(c);
  return std::nullopt;
}

std::string_view attribute_name(Attribute a) { return a == Attribute::moving ? "moving" : "stopped"; }

std::optional<Attribute> parse_attribute(std::string_view name) {
  if (name == "moving") return Attribute::moving;
  if (name == "stopped") return Attribute::stopped;
  return std::nullopt;
}

bool Box3D::valid() const {
  return center.allFinite() && size.allFinite() && velocity.allFinite() && std::isfinite(yaw) &&
         (size.array() > 0.0).all();
}

Attribute attribute_from_velocity(const Eigen::Vector2d& v) {
  return v.norm() > kMovingSpeed ? Attribute::moving : Attribute::stopped;
}

}  // namespace redformer

namespace redformer::detection {

namespace {

ag::Var linear(const ag::Var& x, const ag::Var& w, const ag::Var& b) {
  return ag::add_bias(ag::matmul(x, w), b);
}

ag::Var weight(int in, int out, double sd, std::mt19937_64& rng) {
  return ag::Var::leaf(params::normal(in, out, sd, rng), true);
}

ag::Var zeros(int rows, int cols) { return ag::Var::leaf(ag::Matrix::Zero(rows, cols), true); }

ag::Matrix cell_centers_in_cells(const geometry::BevGridSpec& grid) {
  ag::Matrix centers(grid.cell_count(), 2);
  for (int i = 0; i < grid.x_cells; ++i)
    for (int j = 0; j < grid.y_cells; ++j)
      centers.row(grid.flat(i, j)) = grid.cell_center(i, j).transpose() / grid.cell_size;
  return centers;
}

// Exact rectangular assignment for rows <= cols (shortest augmenting path
// with potentials). Returns the column of every row.
std::vector<int> solve_rows_le_cols(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of_row(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

double optimal_cost(const Eigen::MatrixXd& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) return 0.0;
  double total = 0.0;
  if (cost.rows() <= cost.cols()) {
    const auto cols = solve_rows_le_cols(cost);
    for (int r = 0; r < cost.rows(); ++r) total += cost(r, cols[r]);
  } else {
    const auto rows = solve_rows_le_cols(cost.transpose());
    for (int c = 0; c < cost.cols(); ++c) total += cost(rows[c], c);
  }
  return total;
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& cost, const std::vector<int>& rows, const std::vector<int>& cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = cost(rows[r], cols[c]);
  return out;
}

}  // namespace

DecoderParams DecoderParams::init(int num_queries, int channels, std::mt19937_64& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(channels));
  DecoderParams p;
  p.object_queries = weight(num_queries, channels, 1.0, rng);
  p.wq = weight(channels, channels, sd, rng);
  p.bq = zeros(1, channels);
  p.wk = weight(channels, channels, sd, rng);
  p.bk = zeros(1, channels);
  p.wv = weight(channels, channels, sd, rng);
  p.bv = zeros(1, channels);
  p.wo = weight(channels, channels, sd, rng);
  p.bo = zeros(1, channels);
  p.w_cls = weight(channels, kNumClasses + 1, sd, rng);
  p.b_cls = zeros(1, kNumClasses + 1);
  p.w_box = weight(channels, kBoxParams, sd, rng);
  p.b_box = zeros(1, kBoxParams);
  return p;
}

ContextParams ContextParams::init(int channels, std::mt19937_64& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(channels));
  return {weight(channels, 1, sd, rng), zeros(1, 1), weight(channels, 1, sd, rng), zeros(1, 1)};
}

RawDetections decode_objects(const ag::Var& bev, const DecoderParams& params, const geometry::BevGridSpec& grid) {
  const int channels = static_cast<int>(params.object_queries.cols());
  if (bev.cols() != channels || bev.rows() != grid.cell_count())
    throw std::invalid_argument("decode_objects: BEV shape mismatch");
  const ag::Var q = linear(params.object_queries, params.wq, params.bq);
  const ag::Var k = linear(bev, params.wk, params.bk);
  const ag::Var v = linear(bev, params.wv, params.bv);
  const ag::Var attn = ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(channels))));
  const ag::Var hidden = ag::add(params.object_queries, linear(ag::matmul(attn, v), params.wo, params.bo));

  RawDetections out;
  out.class_logits = linear(hidden, params.w_cls, params.b_cls);
  const ag::Var t = linear(hidden, params.w_box, params.b_box);
  const ag::Var ref = ag::matmul(attn, ag::Var::constant(cell_centers_in_cells(grid)));
  const ag::Var offset = ag::scale(ag::add_scalar(ag::scale(ag::sigmoid(ag::slice_cols(t, 0, 2)), 2.0), -1.0), kOffsetSpan);
  const ag::Var parts[] = {ag::add(ref, offset), ag::slice_cols(t, 2, kBoxParams - 2)};
  out.boxes = ag::hconcat(parts);
  out.reference = ref.value() * grid.cell_size;
  return out;
}

Eigen::Matrix<double, 1, kBoxParams> encode_box(const Box3D& box, const geometry::BevGridSpec& grid) {
  Eigen::Matrix<double, 1, kBoxParams> t;
  t << box.center.x() / grid.cell_size, box.center.y() / grid.cell_size, box.center.z(), std::log(box.size.x()),
      std::log(box.size.y()), std::log(box.size.z()), std::sin(box.yaw), std::cos(box.yaw), box.velocity.x(),
      box.velocity.y();
  return t;
}

Box3D decode_box(const Eigen::Matrix<double, 1, kBoxParams>& t, const geometry::BevGridSpec& grid) {
  Box3D b;
  b.center = {t(0) * grid.cell_size, t(1) * grid.cell_size, t(2)};
  b.size = {std::exp(t(3)), std::exp(t(4)), std::exp(t(5))};
  b.yaw = geometry::wrap_angle(std::atan2(t(6), t(7)));
  b.velocity = {t(8), t(9)};
  return b;
}

std::vector<Detection> to_detections(const RawDetections& raw, const geometry::BevGridSpec& grid) {
  std::vector<Detection> out;
  const auto& logits = raw.class_logits.value();
  for (Eigen::Index q = 0; q < logits.rows(); ++q) {
    Eigen::RowVectorXd p = (logits.row(q).array() - logits.row(q).maxCoeff()).exp().matrix();
    p /= p.sum();
    Detection d;
    Eigen::Index best = 0;
    p.head(kNumClasses).maxCoeff(&best);
    d.class_id = static_cast<ObjectClass>(best);
    d.confidence = p(best);
    d.scores.assign(p.data(), p.data() + p.size());
    d.box = decode_box(raw.boxes.value().row(q), grid);
    d.attribute = attribute_from_velocity(d.box.velocity);
    out.push_back(std::move(d));
  }
  return out;
}

ContextPrediction predict_context(const ag::Var& bev, const ContextParams& params) {
  const ag::Var pooled = ag::mean_rows(bev);
  return {linear(pooled, params.w_rain, params.b_rain), linear(pooled, params.w_night, params.b_night)};
}

Assignment hungarian_match(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  if (!cost.allFinite()) throw std::invalid_argument("hungarian_match: non-finite cost");
  Assignment result;
  if (n == 0 || m == 0) return result;
  const double best = optimal_cost(cost);
  const double tol = 1e-9 * std::max(1.0, std::abs(best));
  const int size = std::min(n, m);

  // Fix rows in order, each to the lowest column that keeps the optimum
  // reachable; rows may stay unassigned only when rows > cols.
  std::vector<int> free_cols(m);
  std::iota(free_cols.begin(), free_cols.end(), 0);
  double committed = 0.0;
  for (int r = 0; r < n && static_cast<int>(result.size()) < size; ++r) {
    const int needed = size - static_cast<int>(result.size());
    std::vector<int> later_rows;
    for (int rr = r + 1; rr < n; ++rr) later_rows.push_back(rr);
    bool placed = false;
    for (std::size_t ci = 0; ci < free_cols.size() && !placed; ++ci) {
      const int c = free_cols[ci];
      std::vector<int> rest = free_cols;
      rest.erase(rest.begin() + static_cast<long>(ci));
      // Remaining assignment must still reach `needed - 1` pairs.
      if (std::min(later_rows.size(), rest.size()) < static_cast<std::size_t>(needed - 1)) continue;
      const double total = committed + cost(r, c) + optimal_cost(submatrix(cost, later_rows, rest));
      if (total <= best + tol) {
        result.emplace_back(r, c);
        committed += cost(r, c);
        free_cols = std::move(rest);
        placed = true;
      }
    }
    if (!placed && static_cast<int>(later_rows.size()) < needed)
      throw std::logic_error("hungarian_match: failed to reconstruct optimal assignment");
  }
  return result;
}

Eigen::MatrixXd match_cost(const RawDetections& raw, std::span<const Annotation> annotations, const LossWeights& w,
                           const geometry::BevGridSpec& grid) {
  const auto& logits = raw.class_logits.value();
  const auto& boxes = raw.boxes.value();
  Eigen::MatrixXd cost(logits.rows(), static_cast<Eigen::Index>(annotations.size()));
  for (Eigen::Index q = 0; q < logits.rows(); ++q) {
    const double m = logits.row(q).maxCoeff();
    const double lse = m + std::log((logits.row(q).array() - m).exp().sum());
    for (std::size_t k = 0; k < annotations.size(); ++k) {
      const double nll = lse - logits(q, static_cast<int>(annotations[k].class_id));
      const double l1 = (boxes.row(q) - encode_box(annotations[k].box, grid)).cwiseAbs().sum();
      cost(q, static_cast<Eigen::Index>(k)) = w.cls * nll + w.box * l1;
    }
  }
  return cost;
}

ag::Var detection_loss(const RawDetections& raw, std::span<const Annotation> annotations, const LossWeights& w,
                       const geometry::BevGridSpec& grid, Assignment* matching) {
  const int nq = static_cast<int>(raw.class_logits.rows());
  const Assignment match = hungarian_match(match_cost(raw, annotations, w, grid));
  if (matching) *matching = match;

  std::vector<int> target(static_cast<std::size_t>(nq), kNoObject);
  for (const auto& [q, k] : match) target[static_cast<std::size_t>(q)] = static_cast<int>(annotations[k].class_id);
  std::vector<std::pair<int, int>> entries;
  std::vector<double> weights;
  double weight_total = 0.0;
  for (int q = 0; q < nq; ++q) {
    const double wq = target[q] == kNoObject ? w.no_object : 1.0;
    entries.emplace_back(q, target[q]);
    weights.push_back(wq);
    weight_total += wq;
  }
  for (auto& x : weights) x = -x / weight_total;
  ag::Var loss = ag::scale(ag::pick_sum(ag::log_softmax_rows(raw.class_logits), entries, weights), w.cls);

  if (!match.empty()) {
    std::vector<int> rows;
    ag::Matrix targets(static_cast<Eigen::Index>(match.size()), kBoxParams);
    for (std::size_t i = 0; i < match.size(); ++i) {
      rows.push_back(match[i].first);
      targets.row(static_cast<Eigen::Index>(i)) = encode_box(annotations[match[i].second].box, grid);
    }
    const ag::Var l1 = ag::sum(ag::abs(ag::sub(ag::gather_rows(raw.boxes, rows), ag::Var::constant(targets))));
    const double norm = std::max<double>(static_cast<double>(annotations.size()), 1.0);
    loss = ag::add(loss, ag::scale(l1, w.box / norm));
  }
  return loss;
}

double binary_ce(double logit, int label) {
  // -y log s(x) - (1-y) log(1 - s(x)) = softplus(x) for y = 0, softplus(-x) for y = 1.
  const double x = label ? -logit : logit;
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

ag::Var binary_ce(const ag::Var& logit, int label) {
  return ag::softplus(label ? ag::scale(logit, -1.0) : logit);
}

LossBreakdown joint_loss(double l_det, double l_rain, double l_tod) {
  if (l_det < 0.0 || l_rain < 0.0 || l_tod < 0.0) throw std::invalid_argument("joint_loss: negative component");
  return {l_det, l_rain, l_tod, l_det + l_rain + l_tod};
}

}  // namespace redformer::detection
