#pragma once

#include <cstdint>
#include <vector>

#include "deltar/geometry.hpp"
#include "deltar/sensor_sim.hpp"

namespace deltar::training {

/// Recipe for one randomized desk scene: a (possibly tilted) back wall plus a
/// few boxes and spheres in front of it, imaged by an RGB camera and a zone
/// sensor with a small mounting offset. All randomness derives from `seed`.
struct SceneSpec {
  std::uint32_t seed = 1;
  int width = 64, height = 48;  // RGB raster
  int min_boxes = 1, max_boxes = 3;
  int min_spheres = 0, max_spheres = 2;
  double wall_distance_min = 1.2, wall_distance_max = 2.6;  // meters
  double wall_tilt_max = 0.30;                              // radians from fronto-parallel
  double object_distance_min = 0.45, object_distance_max = 1.10;
  double object_size_min = 0.10, object_size_max = 0.45;
  bool textured = true;
  CameraIntrinsics k_rgb;
  CameraIntrinsics k_tof;
  Extrinsics rgb_to_tof;  // maps RGB-frame points into the zone-sensor frame
  SensorConfig sensor;

  /// Desk-scale defaults: 64x48 RGB, 64x64 virtual zone raster, 2.5 cm
  /// horizontal mount offset between the cameras.
  static SceneSpec standard(std::uint32_t seed);
  void validate() const;
};

/// One rendered capture. rgb is interleaved [0,1] floats, row-major.
struct Scene {
  std::vector<float> rgb;
  DepthMap depth_rgb;  // ground truth in the RGB frame
  DepthMap depth_tof;  // ground truth in the zone-sensor frame
  ZoneGrid zones;      // simulate_zone_grid over depth_tof
};

/// Deterministic render of the spec: analytic ray casts in both camera
/// frames from one scene geometry, shaded-normal RGB with a procedural
/// texture tied to surface position, and zone statistics computed from the
/// ToF-frame depth. Throws Error when fewer than half of the RGB pixels see
/// geometry inside the sensor's range.
Scene generate_scene(const SceneSpec& spec);

}  // namespace deltar::training
