#include "redformer/png_io.hpp"
#include "redformer/synthetic_data.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace redformer::data {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

json mat3_to_json(const geometry::Mat3& m) {
  json out = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  return out;
}

geometry::Mat3 mat3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 9) throw SchemaError("expected 9-element matrix");
  geometry::Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(static_cast<std::size_t>(3 * r + c)).get<double>();
  return m;
}

json pose_to_json(const geometry::Pose& p) {
  return {{"rotation", mat3_to_json(p.rotation)},
          {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

geometry::Pose pose_from_json(const json& j) {
  geometry::Pose p;
  p.rotation = mat3_from_json(j.at("rotation"));
  const auto& t = j.at("translation");
  p.translation = geometry::Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  return p;
}

json config_to_json(const SceneConfig& c) {
  return {{"frames_per_scene", c.frames_per_scene},
          {"frame_interval", c.frame_interval},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"world_extent", c.world_extent},
          {"min_speed", c.min_speed},
          {"max_speed", c.max_speed},
          {"max_ego_speed", c.max_ego_speed},
          {"rain_probability", c.rain_probability},
          {"night_probability", c.night_probability},
          {"rain_noise_sigma", c.rain_noise_sigma},
          {"rain_contrast", c.rain_contrast},
          {"night_brightness", c.night_brightness},
          {"radar_dropout", c.radar_dropout},
          {"radar_noise_sigma", c.radar_noise_sigma},
          {"radar_points_per_object", c.radar_points_per_object},
          {"radar_range", c.radar_range},
          {"radar_half_fov", c.radar_half_fov},
          {"clutter_points", c.clutter_points},
          {"image_width", c.image_width},
          {"image_height", c.image_height},
          {"seed", c.seed}};
}

SceneConfig config_from_json(const json& j) {
  SceneConfig c;
  c.frames_per_scene = j.at("frames_per_scene").get<int>();
  c.frame_interval = j.at("frame_interval").get<double>();
  c.min_objects = j.at("min_objects").get<int>();
  c.max_objects = j.at("max_objects").get<int>();
  c.world_extent = j.at("world_extent").get<double>();
  c.min_speed = j.at("min_speed").get<double>();
  c.max_speed = j.at("max_speed").get<double>();
  c.max_ego_speed = j.at("max_ego_speed").get<double>();
  c.rain_probability = j.at("rain_probability").get<double>();
  c.night_probability = j.at("night_probability").get<double>();
  c.rain_noise_sigma = j.at("rain_noise_sigma").get<double>();
  c.rain_contrast = j.at("rain_contrast").get<double>();
  c.night_brightness = j.at("night_brightness").get<double>();
  c.radar_dropout = j.at("radar_dropout").get<double>();
  c.radar_noise_sigma = j.at("radar_noise_sigma").get<double>();
  c.radar_points_per_object = j.at("radar_points_per_object").get<int>();
  c.radar_range = j.at("radar_range").get<double>();
  c.radar_half_fov = j.at("radar_half_fov").get<double>();
  c.clutter_points = j.at("clutter_points").get<int>();
  c.image_width = j.at("image_width").get<int>();
  c.image_height = j.at("image_height").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json rig_to_json(const geometry::SensorRig& rig) {
  json cams = json::array();
  for (const auto& c : rig.cameras)
    cams.push_back({{"intrinsics", mat3_to_json(c.intrinsics)},
                    {"extrinsics", pose_to_json(c.extrinsics)},
                    {"width", c.width},
                    {"height", c.height}});
  json radars = json::array();
  for (const auto& p : rig.radar_poses) radars.push_back(pose_to_json(p));
  return {{"cameras", cams}, {"radars", radars}};
}

geometry::SensorRig rig_from_json(const json& j) {
  geometry::SensorRig rig;
  for (const auto& c : j.at("cameras")) {
    geometry::CameraSpec cam;
    cam.intrinsics = mat3_from_json(c.at("intrinsics"));
    cam.extrinsics = pose_from_json(c.at("extrinsics"));
    cam.width = c.at("width").get<int>();
    cam.height = c.at("height").get<int>();
    rig.cameras.push_back(cam);
  }
  for (const auto& p : j.at("radars")) rig.radar_poses.push_back(pose_from_json(p));
  return rig;
}

std::string image_name(const std::string& frame_id, std::size_t cam) {
  return frame_id + "_cam" + std::to_string(cam) + ".png";
}

std::string radar_name(const std::string& frame_id) { return frame_id + "_radar.csv"; }

void write_radar_csv(const fs::path& path, const radar::PointCloudSet& set) {
  std::ostringstream out;
  out << "sensor_id,x,y,z,radial_velocity,cross_section\n";
  char buf[256];
  for (std::size_t s = 0; s < set.clouds.size(); ++s)
    for (const auto& p : set.clouds[s]) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", s, p.position.x(), p.position.y(),
                    p.position.z(), p.radial_velocity, p.cross_section);
      out << buf;
    }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << out.str();
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

radar::PointCloudSet read_radar_csv(const fs::path& path, std::size_t sensors) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing radar file '" + path.string() + "'");
  radar::PointCloudSet set;
  set.clouds.resize(sensors);
  std::string line;
  if (!std::getline(f, line) || line != "sensor_id,x,y,z,radial_velocity,cross_section")
    throw IoError("bad radar header in '" + path.string() + "'");
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t s = 0;
    double x, y, z, v, rcs;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &s, &x, &y, &z, &v, &rcs) != 6 || s >= sensors)
      throw IoError("corrupt radar row at '" + path.string() + "' line " + std::to_string(lineno));
    set.clouds[s].push_back({geometry::Vec3(x, y, z), v, rcs});
  }
  return set;
}

}  // namespace

void write_dataset(const SceneDataset& dataset, const std::filesystem::path& directory) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create '" + directory.string() + "': " + ec.message());

  json scenes = json::array();
  for (const auto& scene : dataset.scenes) {
    const fs::path dir = directory / scene.scene_id;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    json frames = json::array();
    std::vector<metrics::FrameGroundTruth> gts;
    for (const auto& f : scene.frames) {
      frames.push_back({{"frame_id", f.frame_id}, {"timestamp", f.timestamp}, {"ego_pose", pose_to_json(f.ego_pose)}});
      for (std::size_t c = 0; c < f.images.size(); ++c) {
        const fs::path p = dir / image_name(f.frame_id, c);
        try {
          png::write(p, {f.images[c].width, f.images[c].height, f.images[c].rgb});
        } catch (const std::runtime_error& e) {
          throw IoError(e.what());
        }
      }
      write_radar_csv(dir / radar_name(f.frame_id), f.radar);
      gts.push_back({f.frame_id, f.rain, f.night, f.annotations});
    }
    metrics::write_text(dir / "annotations.json", metrics::ground_truth_to_json(gts));
    scenes.push_back({{"scene_id", scene.scene_id},
                      {"split", scene.split},
                      {"rain", scene.rain},
                      {"night", scene.night},
                      {"frames", frames}});
  }
  const json index = {{"schema_version", kDatasetSchemaVersion},
                      {"rig", rig_to_json(dataset.rig)},
                      {"grid",
                       {{"x_cells", dataset.grid.x_cells},
                        {"y_cells", dataset.grid.y_cells},
                        {"cell_size", dataset.grid.cell_size}}},
                      {"config", config_to_json(dataset.config)},
                      {"scenes", scenes}};
  metrics::write_text(directory / "index.json", index.dump(1) + "\n");
}

SceneDataset read_dataset(const std::filesystem::path& directory) {
  const fs::path index_path = directory / "index.json";
  if (!fs::exists(index_path)) throw IoError("missing dataset index '" + index_path.string() + "'");
  json index;
  try {
    index = json::parse(metrics::read_text(index_path));
  } catch (const json::exception& e) {
    throw IoError("corrupt index '" + index_path.string() + "': " + e.what());
  }
  if (!index.is_object() || !index.contains("schema_version"))
    throw SchemaError("'" + index_path.string() + "': missing schema_version");
  const int version = index.at("schema_version").get<int>();
  if (version != kDatasetSchemaVersion)
    throw SchemaError("'" + index_path.string() + "': schema_version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kDatasetSchemaVersion) + ")");

  SceneDataset ds;
  try {
    ds.rig = rig_from_json(index.at("rig"));
    const auto& g = index.at("grid");
    ds.grid = {g.at("x_cells").get<int>(), g.at("y_cells").get<int>(), g.at("cell_size").get<double>()};
    ds.config = config_from_json(index.at("config"));
  } catch (const json::exception& e) {
    throw SchemaError("'" + index_path.string() + "': " + e.what());
  }

  for (const auto& sj : index.at("scenes")) {
    Scene scene;
    try {
      scene.scene_id = sj.at("scene_id").get<std::string>();
      scene.split = sj.at("split").get<std::string>();
      scene.rain = sj.at("rain").get<int>();
      scene.night = sj.at("night").get<int>();
    } catch (const json::exception& e) {
      throw SchemaError("'" + index_path.string() + "': " + e.what());
    }
    const fs::path dir = directory / scene.scene_id;
    const fs::path ann_path = dir / "annotations.json";
    if (!fs::exists(ann_path)) throw IoError("missing annotations '" + ann_path.string() + "'");
    std::vector<metrics::FrameGroundTruth> gts;
    try {
      gts = metrics::read_ground_truth(ann_path);
    } catch (const metrics::ParseError& e) {
      throw IoError(e.what());
    }
    const auto& frames = sj.at("frames");
    if (gts.size() != frames.size())
      throw IoError("'" + ann_path.string() + "': frame count does not match index");
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const auto& fj = frames[k];
      FrameRecord f;
      try {
        f.frame_id = fj.at("frame_id").get<std::string>();
        f.timestamp = fj.at("timestamp").get<double>();
        f.ego_pose = pose_from_json(fj.at("ego_pose"));
      } catch (const json::exception& e) {
        throw SchemaError("'" + index_path.string() + "': " + e.what());
      }
      if (gts[k].frame_id != f.frame_id)
        throw IoError("'" + ann_path.string() + "': frame '" + gts[k].frame_id + "' out of order");
      f.rain = gts[k].rain.value_or(scene.rain);
      f.night = gts[k].night.value_or(scene.night);
      f.annotations = gts[k].annotations;
      for (std::size_t c = 0; c < ds.rig.cameras.size(); ++c) {
        const fs::path p = dir / image_name(f.frame_id, c);
        if (!fs::exists(p)) throw IoError("missing image '" + p.string() + "'");
        try {
          auto img = png::read(p);
          f.images.push_back({img.width, img.height, std::move(img.rgb)});
        } catch (const std::runtime_error& e) {
          throw IoError(e.what());
        }
      }
      f.radar = read_radar_csv(dir / radar_name(f.frame_id), ds.rig.radar_poses.size());
      scene.frames.push_back(std::move(f));
    }
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

}  // namespace redformer::data
