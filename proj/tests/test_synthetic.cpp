#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "checks.hpp"
#include "redformer/metrics.hpp"
#include "redformer/synthetic_data.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

using namespace redformer;
using namespace redformer::data;
using geometry::Vec2;
using geometry::Vec3;

namespace {

Annotation object_at(double x, double y, double yaw, ObjectClass c = ObjectClass::vehicle) {
  Annotation a;
  a.class_id = c;
  a.box.center = {x, y, 0.8};
  a.box.size = {4.2, 1.9, 1.6};
  a.box.yaw = yaw;
  a.box.velocity = {3.0 * std::cos(yaw), 3.0 * std::sin(yaw)};
  a.attribute = attribute_from_velocity(a.box.velocity);
  return a;
}

SceneConfig quiet_config() {
  SceneConfig c;
  c.radar_dropout = 0.0;
  c.radar_noise_sigma = 0.0;
  c.clutter_points = 0;
  c.rain_noise_sigma = 0.0;
  return c;
}

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double t = std::clamp((p - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * d)).norm();
}

double perimeter_distance(const Vec2& p, const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Vec2 ax(c, s), ay(-s, c);
  const Vec2 ctr = box.center.head<2>();
  const double hl = 0.5 * box.size.x(), hw = 0.5 * box.size.y();
  const std::array<Vec2, 4> corners{ctr + hl * ax + hw * ay, ctr - hl * ax + hw * ay, ctr - hl * ax - hw * ay,
                                    ctr + hl * ax - hw * ay};
  double best = INFINITY;
  for (int k = 0; k < 4; ++k) best = std::min(best, segment_distance(p, corners[k], corners[(k + 1) % 4]));
  return best;
}

FrameState random_state(std::mt19937_64& rng, int objects) {
  std::uniform_real_distribution<double> pos(-25.0, 25.0), yaw(-std::numbers::pi, std::numbers::pi);
  FrameState st;
  while (static_cast<int>(st.objects.size()) < objects) {
    const double x = pos(rng), y = pos(rng);
    if (std::hypot(x, y) < 6.0) continue;
    st.objects.push_back(object_at(x, y, yaw(rng), static_cast<ObjectClass>(st.objects.size() % kNumClasses)));
  }
  return st;
}

double mean_value(const Image8& img) {
  double s = 0.0;
  for (auto v : img.rgb) s += v;
  return s / static_cast<double>(img.rgb.size());
}

bool in_radar_view(const Annotation& a, const geometry::Pose& ego_from_sensor, const SceneConfig& cfg) {
  const Vec3 p = ego_from_sensor.inverse().apply(a.box.center);
  return p.head<2>().norm() <= cfg.radar_range && std::abs(std::atan2(p.y(), p.x())) <= cfg.radar_half_fov;
}

}  // namespace

TEST_CASE("the same seed regenerates an identical scene") {
  SceneConfig cfg;
  cfg.seed = 3;
  const auto rig = geometry::default_rig();
  const Scene a = generate_scene(cfg, rig, 4), b = generate_scene(cfg, rig, 4);
  SceneDataset da{rig, {}, cfg, {a}}, db{rig, {}, cfg, {b}};
  CHECK(checks::dataset_difference(da, db).empty());
  cfg.seed = 4;
  SceneDataset dc{rig, {}, cfg, {generate_scene(cfg, rig, 4)}};
  dc.config.seed = 3;
  CHECK_FALSE(checks::dataset_difference(da, dc).empty());
}

TEST_CASE("a scene has the configured length and increasing timestamps") {
  SceneConfig cfg;
  const auto s = generate_scene(cfg, geometry::default_rig(), 0);
  REQUIRE(s.frames.size() == 8);
  for (std::size_t f = 1; f < s.frames.size(); ++f) CHECK(s.frames[f].timestamp > s.frames[f - 1].timestamp);
  for (const auto& f : s.frames) {
    CHECK(f.images.size() == 4);
    CHECK(f.radar.clouds.size() == 5);
  }
}

TEST_CASE("annotations stay within the world extent and labels are per scene") {
  SceneConfig cfg;
  cfg.frames_per_scene = 4;
  cfg.image_width = cfg.image_height = 16;
  const auto rig = geometry::default_rig(16, 16);
  for (int k = 0; k < 100; ++k) {
    const auto s = generate_scene(cfg, rig, static_cast<std::uint64_t>(k));
    for (const auto& f : s.frames) {
      CHECK(f.rain == s.rain);
      CHECK(f.night == s.night);
      for (const auto& a : f.annotations) {
        CHECK(std::abs(a.box.center.x()) < cfg.world_extent);
        CHECK(std::abs(a.box.center.y()) < cfg.world_extent);
        CHECK(a.box.valid());
      }
    }
  }
}

TEST_CASE("frame ids are unique across a dataset") {
  SceneConfig cfg;
  cfg.frames_per_scene = 3;
  cfg.image_width = cfg.image_height = 16;
  const auto ds = generate_dataset(cfg, 5, 3, geometry::default_rig(16, 16));
  std::set<std::string> ids;
  for (const auto& s : ds.scenes)
    for (const auto& f : s.frames) CHECK(ids.insert(f.frame_id).second);
  CHECK(ds.split("train").size() == 5);
  CHECK(ds.split("val").size() == 3);
  CHECK(ds.ground_truth("val").size() == 9);
}

TEST_CASE("an empty world renders exactly the background") {
  const auto cfg = quiet_config();
  const auto rig = geometry::default_rig();
  std::mt19937_64 rng(1);
  const auto imgs = render_cameras({}, rig, cfg, 0, 0, rng);
  const auto bg = background_color();
  for (const auto& img : imgs)
    for (std::size_t p = 0; p < img.rgb.size(); ++p) CHECK(img.rgb[p] / 255.0 == bg[p % 3]);
}

TEST_CASE("night renders darker than day") {
  const auto cfg = quiet_config();
  const auto rig = geometry::default_rig();
  std::mt19937_64 seed(2);
  const auto st = random_state(seed, 5);
  std::mt19937_64 r1(3), r2(3);
  const auto day = render_cameras(st, rig, cfg, 0, 0, r1), night = render_cameras(st, rig, cfg, 0, 1, r2);
  for (std::size_t c = 0; c < day.size(); ++c) CHECK(mean_value(night[c]) < mean_value(day[c]));
}

TEST_CASE("an object ahead of the forward camera is drawn at its projection") {
  const auto cfg = quiet_config();
  const auto rig = geometry::default_rig();
  for (double y : {-3.0, 0.0, 2.5}) {
    FrameState st;
    st.objects.push_back(object_at(12.0, y, 0.4));
    std::mt19937_64 rng(4);
    const auto img = render_cameras(st, rig, cfg, 0, 0, rng)[0];
    const auto px = geometry::project_to_image(st.objects[0].box.center, rig.cameras[0]);
    REQUIRE(px);
    const auto bg = background_color();
    bool found = false;
    for (int v = 0; v < img.height; ++v)
      for (int u = 0; u < img.width; ++u) {
        if (std::hypot(u + 0.5 - px->u, v + 0.5 - px->v) > 5.0) continue;
        for (int c = 0; c < 3; ++c)
          if (img.rgb[static_cast<std::size_t>(3 * (v * img.width + u) + c)] / 255.0 != bg[static_cast<std::size_t>(c)])
            found = true;
      }
    CHECK(found);
  }
}

TEST_CASE("noise-free radar points lie on object perimeters") {
  const auto cfg = quiet_config();
  const auto rig = geometry::default_rig();
  std::mt19937_64 seed(5);
  std::size_t points = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto st = random_state(seed, 6);
    std::mt19937_64 rng(static_cast<std::uint64_t>(trial));
    const auto clouds = simulate_radar(st, rig, cfg, rng);
    for (std::size_t s = 0; s < clouds.clouds.size(); ++s)
      for (const auto& p : clouds.clouds[s]) {
        const Vec3 ego = rig.radar_poses[s].apply(p.position);
        double best = INFINITY;
        for (const auto& o : st.objects) best = std::min(best, perimeter_distance(ego.head<2>(), o.box));
        CHECK(best < 1e-6);
        ++points;
      }
  }
  CHECK(points > 100);
}

TEST_CASE("radar ignores the weather flags") {
  const auto r = checks::radar_weather_invariance();
  CHECK_MESSAGE(r.ok, r.detail);
}

TEST_CASE("no objects and no clutter give empty clouds") {
  auto cfg = quiet_config();
  cfg.radar_dropout = 0.3;
  cfg.radar_noise_sigma = 0.2;
  std::mt19937_64 rng(6);
  const auto clouds = simulate_radar({}, geometry::default_rig(), cfg, rng);
  CHECK(clouds.clouds.size() == 5);
  CHECK(clouds.total_points() == 0);
}

TEST_CASE("every object in radar range gets at least one point") {
  const auto cfg = quiet_config();
  const auto rig = geometry::default_rig();
  std::mt19937_64 seed(7);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto st = random_state(seed, 6);
    std::mt19937_64 rng(static_cast<std::uint64_t>(100 + trial));
    const auto clouds = simulate_radar(st, rig, cfg, rng);
    for (const auto& o : st.objects) {
      bool visible = false;
      int hits = 0;
      for (std::size_t s = 0; s < rig.radar_poses.size(); ++s) {
        visible = visible || in_radar_view(o, rig.radar_poses[s], cfg);
        for (const auto& p : clouds.clouds[s])
          if (perimeter_distance(rig.radar_poses[s].apply(p.position).head<2>(), o.box) < 1e-6) ++hits;
      }
      if (!visible) continue;
      ++checked;
      CHECK(hits >= 1);
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("rain and night reduce object contrast") {
  const auto rig = geometry::default_rig();
  SceneConfig cfg;
  SceneConfig noiseless = cfg;
  noiseless.rain_noise_sigma = 0.0;
  std::mt19937_64 seed(8);
  const auto bg = background_color();
  int frames = 0;
  double clear_sum = 0.0, rain_sum = 0.0, night_sum = 0.0;
  while (frames < 24) {
    const auto st = random_state(seed, 5);
    std::mt19937_64 r0(9), r1(9), r2(9), r3(9);
    const auto clear = render_cameras(st, rig, cfg, 0, 0, r0);
    const auto rain = render_cameras(st, rig, cfg, 1, 0, r1);
    const auto rain_dry = render_cameras(st, rig, noiseless, 1, 0, r3);
    const auto night = render_cameras(st, rig, cfg, 0, 1, r2);
    for (std::size_t c = 0; c < clear.size(); ++c) {
      // Object pixels: anything the clear render changed from the background.
      std::vector<bool> object(clear[c].rgb.size() / 3, false);
      for (std::size_t p = 0; p < object.size(); ++p)
        for (int k = 0; k < 3; ++k)
          if (clear[c].rgb[3 * p + static_cast<std::size_t>(k)] / 255.0 != bg[static_cast<std::size_t>(k)]) object[p] = true;
      auto contrast = [&](const Image8& img) {
        double so = 0.0, sb = 0.0;
        int no = 0, nb = 0;
        for (std::size_t p = 0; p < object.size(); ++p) {
          const double v = (img.rgb[3 * p] + img.rgb[3 * p + 1] + img.rgb[3 * p + 2]) / (3.0 * 255.0);
          if (object[p]) so += v, ++no;
          else sb += v, ++nb;
        }
        return std::abs(so / no - sb / nb);
      };
      if (std::count(object.begin(), object.end(), true) < 10) continue;
      const double base = contrast(clear[c]);
      clear_sum += base;
      rain_sum += contrast(rain[c]);
      night_sum += contrast(night[c]);
      // Noise can lift a faint object's contrast, so the per-image check uses the contrast factor alone.
      CHECK(contrast(rain_dry[c]) < base);
      CHECK(contrast(night[c]) < base);
      ++frames;
    }
  }
  CHECK(rain_sum < clear_sum);
  CHECK(night_sum < clear_sum);
}

TEST_CASE("datasets round trip through the directory layout") {
  const auto r = checks::dataset_round_trip(checks::scratch_dir("synthetic_round_trip"));
  CHECK_MESSAGE(r.ok, r.detail);
}

TEST_CASE("reading an empty directory reports the missing index") {
  const auto dir = checks::scratch_dir("synthetic_empty");
  try {
    read_dataset(dir);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("index.json") != std::string::npos);
  }
}

TEST_CASE("the index lists every scene") {
  SceneConfig cfg;
  cfg.frames_per_scene = 2;
  cfg.image_width = cfg.image_height = 16;
  const auto dir = checks::scratch_dir("synthetic_index");
  write_dataset(generate_dataset(cfg, 7, 3, geometry::default_rig(16, 16)), dir);
  std::ifstream in(dir / "index.json");
  const auto index = nlohmann::json::parse(in);
  CHECK(index["schema_version"] == kDatasetSchemaVersion);
  CHECK(index["scenes"].size() == 10);
}

TEST_CASE("schema mismatches and corrupt files are reported") {
  SceneConfig cfg;
  cfg.frames_per_scene = 2;
  cfg.image_width = cfg.image_height = 16;
  const auto dir = checks::scratch_dir("synthetic_corrupt");
  const auto ds = generate_dataset(cfg, 1, 0, geometry::default_rig(16, 16));
  write_dataset(ds, dir);

  auto text = metrics::read_text(dir / "index.json");
  auto index = nlohmann::json::parse(text);
  index["schema_version"] = 99;
  metrics::write_text(dir / "index.json", index.dump());
  CHECK_THROWS_AS(read_dataset(dir), SchemaError);
  metrics::write_text(dir / "index.json", text);

  const auto radar = dir / ds.scenes[0].scene_id / (ds.scenes[0].frames[1].frame_id + "_radar.csv");
  std::filesystem::remove(radar);
  try {
    read_dataset(dir);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(radar.filename().string()) != std::string::npos);
  }
}

TEST_CASE("scene configs are validated") {
  SceneConfig c;
  c.rain_probability = 1.5;
  CHECK_THROWS(c.validate());
  c = {};
  c.night_brightness = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.world_extent = -1.0;
  CHECK_THROWS(c.validate());
}
