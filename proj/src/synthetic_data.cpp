#include "redformer/synthetic_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <iomanip>

namespace redformer::data {

namespace {

using geometry::Vec2;
using geometry::Vec3;

constexpr std::uint64_t kObjectStream = 0;
constexpr std::uint64_t kWeatherStream = 1;
constexpr std::uint64_t kRadarStream = 1000;
constexpr std::uint64_t kCameraStream = 2000;

struct ClassPrior {
  double weight;
  Vec3 size;
  Vec3 color;
  double moving_probability;
  double speed_scale;  // multiplies the configured speed range
  double cross_section;
};

const std::array<ClassPrior, kNumClasses>& priors() {
  static const std::array<ClassPrior, kNumClasses> p{{
      {0.40, {4.5, 1.9, 1.6}, {0.95, 0.55, 0.10}, 0.6, 1.0, 12.0},   // vehicle
      {0.15, {2.1, 0.8, 1.4}, {0.15, 0.45, 0.95}, 0.6, 0.8, 4.0},    // motorcycle
      {0.25, {0.7, 0.7, 1.75}, {0.90, 0.10, 0.35}, 0.5, 0.2, -2.0},  // pedestrian
      {0.20, {0.6, 2.2, 1.0}, {0.95, 0.95, 0.20}, 0.0, 0.0, 2.0},    // barrier
  }};
  return p;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// World-from-ego pose of a constant-speed, constant-yaw-rate ego at time t.
geometry::Pose ego_pose_at(double speed, double yaw_rate, double t) {
  const double yaw = yaw_rate * t;
  double x, y;
  if (std::abs(yaw_rate) < 1e-9) {
    x = speed * t;
    y = 0.0;
  } else {
    x = speed / yaw_rate * std::sin(yaw);
    y = speed / yaw_rate * (1.0 - std::cos(yaw));
  }
  return geometry::Pose::planar(yaw, x, y, 0.0);
}

std::array<Vec3, 8> box_corners(const Box3D& b) {
  std::array<Vec3, 8> out;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  int k = 0;
  for (int dx : {-1, 1})
    for (int dy : {-1, 1})
      for (int dz : {-1, 1}) {
        const double lx = 0.5 * dx * b.size.x(), ly = 0.5 * dy * b.size.y();
        out[static_cast<std::size_t>(k++)] =
            b.center + Vec3(c * lx - s * ly, s * lx + c * ly, 0.5 * dz * b.size.z());
      }
  return out;
}

// Footprint corners in counter-clockwise order.
std::array<Vec2, 4> footprint(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.size.x(), hw = 0.5 * b.size.y();
  const std::array<Vec2, 4> local{Vec2(hl, hw), Vec2(-hl, hw), Vec2(-hl, -hw), Vec2(hl, -hw)};
  std::array<Vec2, 4> out;
  for (std::size_t k = 0; k < 4; ++k)
    out[k] = b.center.head<2>() + Vec2(c * local[k].x() - s * local[k].y(), s * local[k].x() + c * local[k].y());
  return out;
}

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(),
            [](const Vec2& a, const Vec2& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<Vec2>& hull, const Vec2& p) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i)
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
  return true;
}

FrameState frame_state(const std::vector<WorldObject>& objects, double ego_speed, double ego_yaw_rate, double t) {
  FrameState st;
  st.ego_pose = ego_pose_at(ego_speed, ego_yaw_rate, t);
  const auto ego_from_world = st.ego_pose.inverse();
  const double ego_yaw = st.ego_pose.yaw();
  for (const auto& o : objects) {
    Annotation a;
    a.class_id = o.class_id;
    const Vec3 world_center = o.box.center + Vec3(o.box.velocity.x(), o.box.velocity.y(), 0.0) * t;
    a.box.center = ego_from_world.apply(world_center);
    a.box.size = o.box.size;
    a.box.yaw = geometry::wrap_angle(o.box.yaw - ego_yaw);
    a.box.velocity = (ego_from_world.rotation * Vec3(o.box.velocity.x(), o.box.velocity.y(), 0.0)).head<2>();
    a.attribute = attribute_from_velocity(o.box.velocity);
    st.objects.push_back(a);
  }
  return st;
}

std::string scene_name(std::uint64_t index) {
  std::ostringstream s;
  s << "scene-" << std::setw(4) << std::setfill('0') << index;
  return s.str();
}

}  // namespace

void SceneConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  auto factor = [](double f) { return f > 0.0 && f <= 1.0; };
  if (frames_per_scene < 1 || min_objects < 0 || max_objects < min_objects || !(world_extent > 0.0) ||
      !(frame_interval > 0.0) || min_speed < 0.0 || max_speed < min_speed || !prob(rain_probability) ||
      !prob(night_probability) || !prob(radar_dropout) || !factor(rain_contrast) || !factor(night_brightness) ||
      rain_noise_sigma < 0.0 || radar_noise_sigma < 0.0 || clutter_points < 0 || radar_points_per_object < 1 ||
      !(radar_range > 0.0) || image_width <= 0 || image_height <= 0 || max_ego_speed < 0.0)
    throw std::invalid_argument("SceneConfig: invalid configuration");
}

encoder::CameraImage to_camera_image(const Image8& img) {
  encoder::CameraImage out{img.height, img.width, ag::Matrix(img.height * img.width, 3)};
  for (int p = 0; p < img.height * img.width; ++p)
    for (int c = 0; c < 3; ++c) out.pixels(p, c) = img.rgb[static_cast<std::size_t>(3 * p + c)] / 255.0;
  return out;
}

std::vector<const Scene*> SceneDataset::split(const std::string& name) const {
  std::vector<const Scene*> out;
  for (const auto& s : scenes)
    if (s.split == name) out.push_back(&s);
  return out;
}

std::vector<metrics::FrameGroundTruth> SceneDataset::ground_truth(const std::string& split_name) const {
  std::vector<metrics::FrameGroundTruth> out;
  for (const Scene* s : split(split_name))
    for (const auto& f : s->frames) out.push_back({f.frame_id, f.rain, f.night, f.annotations});
  return out;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t scene_index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(scene_index), static_cast<std::uint32_t>(scene_index >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::array<double, 3> background_color() {
  return {quantize(0.45) / 255.0, quantize(0.50) / 255.0, quantize(0.55) / 255.0};
}

std::vector<Image8> render_cameras(const FrameState& state, const geometry::SensorRig& rig, const SceneConfig& config,
                                   int rain, int night, std::mt19937_64& rng) {
  const auto bg = background_color();
  std::vector<Image8> images;
  for (const auto& cam : rig.cameras) {
    const int w = cam.width, h = cam.height;
    std::vector<double> px(static_cast<std::size_t>(w * h * 3));
    for (int p = 0; p < w * h; ++p)
      for (int c = 0; c < 3; ++c) px[static_cast<std::size_t>(3 * p + c)] = bg[static_cast<std::size_t>(c)];

    // Painter's order: far objects first.
    std::vector<std::pair<double, const Annotation*>> visible;
    for (const auto& obj : state.objects) {
      const Vec3 pc = cam.extrinsics.apply(obj.box.center);
      if (pc.z() > 0.0) visible.emplace_back(pc.z(), &obj);
    }
    std::stable_sort(visible.begin(), visible.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [depth, obj] : visible) {
      std::vector<Vec2> pts;
      bool ok = true;
      for (const auto& corner : box_corners(obj->box)) {
        const Vec3 pc = cam.extrinsics.apply(corner);
        if (pc.z() < 0.1) {
          ok = false;
          break;
        }
        const Vec3 hp = cam.intrinsics * pc;
        pts.emplace_back(hp.x() / hp.z(), hp.y() / hp.z());
      }
      if (!ok) continue;
      const auto hull = convex_hull(pts);
      double umin = w, umax = 0, vmin = h, vmax = 0;
      for (const auto& p : hull) {
        umin = std::min(umin, p.x());
        umax = std::max(umax, p.x());
        vmin = std::min(vmin, p.y());
        vmax = std::max(vmax, p.y());
      }
      const double shade = 1.0 / (1.0 + obj->box.center.head<2>().norm() / 40.0);
      const auto& color = priors()[static_cast<std::size_t>(obj->class_id)].color;
      const int x0 = std::max(0, static_cast<int>(std::floor(umin))), x1 = std::min(w - 1, static_cast<int>(std::ceil(umax)));
      const int y0 = std::max(0, static_cast<int>(std::floor(vmin))), y1 = std::min(h - 1, static_cast<int>(std::ceil(vmax)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if (inside_hull(hull, Vec2(x + 0.5, y + 0.5)))
            for (int c = 0; c < 3; ++c) px[static_cast<std::size_t>(3 * (y * w + x) + c)] = color(c) * shade;
    }

    if (night)
      for (auto& v : px) v *= config.night_brightness;
    if (rain) {
      double mean = 0.0;
      for (double v : px) mean += v;
      mean /= static_cast<double>(px.size());
      std::normal_distribution<double> noise(0.0, config.rain_noise_sigma);
      for (auto& v : px) v = mean + config.rain_contrast * (v - mean) + noise(rng);
    }
    Image8 img{w, h, std::vector<std::uint8_t>(px.size())};
    std::transform(px.begin(), px.end(), img.rgb.begin(), quantize);
    images.push_back(std::move(img));
  }
  return images;
}

radar::PointCloudSet simulate_radar(const FrameState& state, const geometry::SensorRig& rig, const SceneConfig& config,
                                    std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  radar::PointCloudSet out;
  out.clouds.resize(rig.radar_poses.size());
  for (std::size_t s = 0; s < rig.radar_poses.size(); ++s) {
    const auto& ego_from_sensor = rig.radar_poses[s];
    const auto sensor_from_ego = ego_from_sensor.inverse();
    const Vec2 sensor_xy = ego_from_sensor.translation.head<2>();
    auto& cloud = out.clouds[s];
    for (const auto& obj : state.objects) {
      const Vec3 in_sensor = sensor_from_ego.apply(obj.box.center);
      const double range = in_sensor.head<2>().norm();
      const double azimuth = std::atan2(in_sensor.y(), in_sensor.x());
      if (range > config.radar_range || std::abs(azimuth) > config.radar_half_fov) continue;
      const auto fp = footprint(obj.box);
      std::vector<std::pair<Vec2, Vec2>> edges;
      double total_length = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        const Vec2 a = fp[k], b = fp[(k + 1) % 4];
        const Vec2 mid = 0.5 * (a + b);
        const Vec2 normal = mid - obj.box.center.head<2>();
        if (normal.dot(sensor_xy - mid) > 0.0) {
          edges.emplace_back(a, b);
          total_length += (b - a).norm();
        }
      }
      if (edges.empty()) continue;
      const auto& prior = priors()[static_cast<std::size_t>(obj.class_id)];
      for (int n = 0; n < config.radar_points_per_object; ++n) {
        // Draws are unconditional so dropout does not shift later samples.
        double pick = unit(rng) * total_length;
        const double along = unit(rng);
        const double z = obj.box.center.z() + (unit(rng) - 0.5) * obj.box.size.z();
        const double nx = noise(rng), ny = noise(rng), nrcs = noise(rng);
        const bool dropped = unit(rng) < config.radar_dropout;
        std::size_t e = 0;
        while (e + 1 < edges.size() && pick > (edges[e].second - edges[e].first).norm()) {
          pick -= (edges[e].second - edges[e].first).norm();
          ++e;
        }
        if (dropped) continue;
        Vec2 p = edges[e].first + along * (edges[e].second - edges[e].first);
        p += config.radar_noise_sigma * Vec2(nx, ny);
        const Vec3 point_ego(p.x(), p.y(), z);
        const Vec2 los = (p - sensor_xy).normalized();
        radar::RadarPoint rp;
        rp.position = sensor_from_ego.apply(point_ego);
        rp.radial_velocity = los.dot(obj.box.velocity);
        rp.cross_section = prior.cross_section + nrcs;
        cloud.push_back(rp);
      }
    }
    for (int n = 0; n < config.clutter_points; ++n) {
      const double r = 1.0 + unit(rng) * (config.radar_range - 1.0);
      const double az = (2.0 * unit(rng) - 1.0) * config.radar_half_fov;
      radar::RadarPoint rp;
      rp.position = Vec3(r * std::cos(az), r * std::sin(az), 2.0 * unit(rng));
      rp.radial_velocity = 0.5 * noise(rng);
      rp.cross_section = -5.0 + 2.0 * noise(rng);
      cloud.push_back(rp);
    }
  }
  return out;
}

Scene generate_scene(const SceneConfig& config, const geometry::SensorRig& rig, std::uint64_t scene_index,
                     const std::string& split) {
  config.validate();
  using std::numbers::pi;
  auto rng = stream_rng(config.seed, scene_index, kObjectStream);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double ego_speed = unit(rng) * config.max_ego_speed;
  const double ego_yaw_rate = (2.0 * unit(rng) - 1.0) * 0.1;
  const int count = config.min_objects +
                    static_cast<int>(unit(rng) * (config.max_objects - config.min_objects + 1) * 0.999999);
  std::vector<WorldObject> objects;
  for (int n = 0; n < count; ++n) {
    double pick = unit(rng);
    int cls = 0;
    while (cls + 1 < kNumClasses && pick >= priors()[static_cast<std::size_t>(cls)].weight) {
      pick -= priors()[static_cast<std::size_t>(cls)].weight;
      ++cls;
    }
    const auto& prior = priors()[static_cast<std::size_t>(cls)];
    WorldObject o;
    o.class_id = static_cast<ObjectClass>(cls);
    o.box.size = prior.size * (0.9 + 0.2 * unit(rng));
    o.box.yaw = geometry::wrap_angle((2.0 * unit(rng) - 1.0) * pi);
    const bool moving = unit(rng) < prior.moving_probability;
    const double speed = moving ? prior.speed_scale * (config.min_speed + unit(rng) * (config.max_speed - config.min_speed))
                                : 0.0;
    o.box.velocity = Vec2(std::cos(o.box.yaw), std::sin(o.box.yaw)) * speed;
    // Rejection-sample a non-overlapping spot away from the ego.
    const double radius = 0.5 * o.box.size.head<2>().norm();
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      const Vec2 c((2.0 * unit(rng) - 1.0) * config.world_extent, (2.0 * unit(rng) - 1.0) * config.world_extent);
      if (c.norm() < 4.0 + radius) continue;
      placed = std::all_of(objects.begin(), objects.end(), [&](const WorldObject& other) {
        return (other.box.center.head<2>() - c).norm() > radius + 0.5 * other.box.size.head<2>().norm() + 0.5;
      });
      if (placed) o.box.center = Vec3(c.x(), c.y(), 0.5 * o.box.size.z());
    }
    if (placed) objects.push_back(o);
  }

  auto weather = stream_rng(config.seed, scene_index, kWeatherStream);
  std::uniform_real_distribution<double> wu(0.0, 1.0);
  Scene scene;
  scene.scene_id = scene_name(scene_index);
  scene.split = split;
  scene.rain = wu(weather) < config.rain_probability ? 1 : 0;
  scene.night = wu(weather) < config.night_probability ? 1 : 0;

  for (int f = 0; f < config.frames_per_scene; ++f) {
    const double t = f * config.frame_interval;
    const FrameState st = frame_state(objects, ego_speed, ego_yaw_rate, t);
    FrameRecord rec;
    rec.frame_id = scene.scene_id + "-" + std::to_string(f);
    rec.timestamp = t;
    rec.ego_pose = st.ego_pose;
    rec.rain = scene.rain;
    rec.night = scene.night;
    auto cam_rng = stream_rng(config.seed, scene_index, kCameraStream + static_cast<std::uint64_t>(f));
    rec.images = render_cameras(st, rig, config, scene.rain, scene.night, cam_rng);
    auto radar_rng = stream_rng(config.seed, scene_index, kRadarStream + static_cast<std::uint64_t>(f));
    rec.radar = simulate_radar(st, rig, config, radar_rng);
    for (const auto& a : st.objects)
      if (std::abs(a.box.center.x()) < config.world_extent && std::abs(a.box.center.y()) < config.world_extent)
        rec.annotations.push_back(a);
    scene.frames.push_back(std::move(rec));
  }
  return scene;
}

SceneDataset generate_dataset(const SceneConfig& config, int train_scenes, int val_scenes,
                              const geometry::SensorRig& rig, const geometry::BevGridSpec& grid) {
  if (train_scenes < 0 || val_scenes < 0) throw std::invalid_argument("generate_dataset: negative scene count");
  SceneDataset ds{rig, grid, config, {}};
  for (int i = 0; i < train_scenes + val_scenes; ++i)
    ds.scenes.push_back(generate_scene(config, rig, static_cast<std::uint64_t>(i), i < train_scenes ? "train" : "val"));
  return ds;
}

}  // namespace redformer::data
