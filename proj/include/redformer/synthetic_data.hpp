#pragma once

#include "redformer/bev_encoder.hpp"
#include "redformer/detection_types.hpp"
#include "redformer/geometry.hpp"
#include "redformer/metrics.hpp"
#include "redformer/radar_backbone.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace redformer::data {

struct SceneConfig {
  int frames_per_scene = 8;
  double frame_interval = 0.5;  // s (2 Hz)
  int min_objects = 2;
  int max_objects = 6;
  double world_extent = 22.0;  // half-width of the annotated square around the ego (m)
  double min_speed = 1.0;      // m/s, moving objects
  double max_speed = 8.0;
  double max_ego_speed = 4.0;
  double rain_probability = 0.4;
  double night_probability = 0.3;
  double rain_noise_sigma = 0.12;   // pixel intensity units
  double rain_contrast = 0.35;      // (0, 1]
  double night_brightness = 0.2;    // (0, 1]
  double radar_dropout = 0.1;
  double radar_noise_sigma = 0.15;  // m
  int radar_points_per_object = 4;
  double radar_range = 45.0;        // m
  double radar_half_fov = 1.3;      // rad
  int clutter_points = 4;           // per radar
  int image_width = 64;
  int image_height = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// 8-bit RGB image, row-major, interleaved channels.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  bool operator==(const Image8&) const = default;
};

encoder::CameraImage to_camera_image(const Image8& img);

struct FrameRecord {
  std::string frame_id;
  double timestamp = 0.0;
  geometry::Pose ego_pose;  // world-from-ego
  std::vector<Image8> images;  // one per camera
  radar::PointCloudSet radar;
  std::vector<Annotation> annotations;  // ego frame
  int rain = 0;
  int night = 0;
};

struct Scene {
  std::string scene_id;
  std::string split;  // "train" or "val"
  int rain = 0;
  int night = 0;
  std::vector<FrameRecord> frames;
};

struct SceneDataset {
  geometry::SensorRig rig;
  geometry::BevGridSpec grid;
  SceneConfig config;
  std::vector<Scene> scenes;

  std::vector<const Scene*> split(const std::string& name) const;
  std::vector<metrics::FrameGroundTruth> ground_truth(const std::string& split) const;
};

// World-frame object state at t = 0; moves with constant velocity.
struct WorldObject {
  ObjectClass class_id = ObjectClass::vehicle;
  Box3D box;  // world frame
};

// Geometry of one frame before sensing.
struct FrameState {
  geometry::Pose ego_pose;  // world-from-ego
  std::vector<Annotation> objects;  // every object, ego frame
};

// Independent engine for (master seed, scene index, stream); streams keep
// weather, radar and camera noise draws decoupled.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t scene_index, std::uint64_t stream);

Scene generate_scene(const SceneConfig& config, const geometry::SensorRig& rig, std::uint64_t scene_index,
                     const std::string& split = "train");

// Rain/night labels are inputs so the same frame can be rendered under any condition.
std::vector<Image8> render_cameras(const FrameState& state, const geometry::SensorRig& rig,
                                   const SceneConfig& config, int rain, int night, std::mt19937_64& rng);

radar::PointCloudSet simulate_radar(const FrameState& state, const geometry::SensorRig& rig,
                                    const SceneConfig& config, std::mt19937_64& rng);

// Background intensity per channel (day, before weather), already 8-bit quantized.
std::array<double, 3> background_color();

SceneDataset generate_dataset(const SceneConfig& config, int train_scenes, int val_scenes,
                              const geometry::SensorRig& rig = geometry::default_rig(),
                              const geometry::BevGridSpec& grid = {});

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kDatasetSchemaVersion = 1;

void write_dataset(const SceneDataset& dataset, const std::filesystem::path& directory);
SceneDataset read_dataset(const std::filesystem::path& directory);

}  // namespace redformer::data
