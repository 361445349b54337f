#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace redformer {

enum class ObjectClass : int { vehicle = 0, motorcycle = 1, pedestrian = 2, barrier = 3 };
inline constexpr int kNumClasses = 4;
inline constexpr int kNoObject = kNumClasses;  // index of the extra "no object" logit

enum class Attribute : int { moving = 0, stopped = 1 };

std::string_view class_name(ObjectClass c);
std::optional<ObjectClass> parse_class(std::string_view name);
std::string_view attribute_name(Attribute a);
std::optional<Attribute> parse_attribute(std::string_view name);

struct Box3D {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // m, ego frame
  Eigen::Vector3d size = Eigen::Vector3d::Ones();    // l, w, h (m)
  double yaw = 0.0;                                  // rad, (-pi, pi]
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();  // m/s

  bool valid() const;
  bool operator==(const Box3D&) const = default;
};

struct Annotation {
  Box3D box;
  ObjectClass class_id = ObjectClass::vehicle;
  Attribute attribute = Attribute::stopped;
  bool operator==(const Annotation&) const = default;
};

struct Detection {
  Box3D box;
  ObjectClass class_id = ObjectClass::vehicle;
  double confidence = 0.0;
  Attribute attribute = Attribute::stopped;
  // Probabilities over the real classes plus no-object; empty for detections
  // read back from prediction files.
  std::vector<double> scores;
};

// Speed above which a box counts as moving.
inline constexpr double kMovingSpeed = 0.5;
Attribute attribute_from_velocity(const Eigen::Vector2d& v);

}  // namespace redformer
