#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "deltar/errors.hpp"

namespace deltar {

using Eigen::Matrix3d;
using Eigen::Vector3d;

/// Pinhole camera. Pixel coordinates are continuous with pixel centers at
/// integer + 0.5; depth is the z coordinate in the camera frame, meters.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  CameraIntrinsics() = default;
  CameraIntrinsics(double fx, double fy, double cx, double cy, int width, int height);

  /// Focal lengths derived from full field-of-view angles, principal point centered.
  static CameraIntrinsics from_fov(double fov_h_rad, double fov_v_rad, int width, int height);

  double fov_h() const { return 2.0 * std::atan(0.5 * width / fx); }
  double fov_v() const { return 2.0 * std::atan(0.5 * height / fy); }
};

/// Rigid transform {R, t}. transform_point maps p to R*p + t.
struct Extrinsics {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d translation = Vector3d::Zero();

  Extrinsics() = default;
  /// Validates orthonormality (1e-9) and det = +1 (1e-9).
  Extrinsics(const Matrix3d& rotation, const Vector3d& translation);

  static Extrinsics identity() { return {}; }
  static Extrinsics from_axis_angle(const Vector3d& axis, double angle_rad,
                                    const Vector3d& translation);

  Extrinsics inverse() const;
};

/// Plane n.p + offset = 0. The constructor normalizes n.
struct Plane {
  Vector3d normal = Vector3d::UnitZ();
  double offset = 0.0;

  Plane() = default;
  Plane(const Vector3d& normal, double offset);
};

/// Axis-aligned pixel rectangle, x_min < x_max and y_min < y_max.
struct Rect {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  Rect() = default;
  Rect(double x_min, double y_min, double x_max, double y_max);

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }
  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
};

/// Metric depth raster with validity mask. Invalid pixels carry NaN on disk.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;   // row-major meters
  std::vector<uint8_t> valid;  // row-major 0/1

  DepthMap() = default;
  DepthMap(int width, int height);
  static DepthMap constant(int width, int height, float depth);

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  float at(int x, int y) const { return values[index(x, y)]; }
  bool is_valid(int x, int y) const { return valid[index(x, y)] != 0; }
  void set(int x, int y, float depth);
  void set_invalid(int x, int y);
  std::size_t valid_count() const;
};

Vector3d back_project(double x, double y, double depth, const CameraIntrinsics& K);
std::pair<double, double> project(const Vector3d& p, const CameraIntrinsics& K);
double point_plane_distance(const Vector3d& p, const Plane& pl);
Vector3d transform_point(const Vector3d& p, const Extrinsics& e);

/// Total least squares via eigen-decomposition of the centered covariance.
/// The normal is flipped so that offset <= 0. Throws DegenerateGeometry on
/// fewer than 3 points or a collinear set.
Plane fit_plane_least_squares(std::span<const Vector3d> points);

}  // namespace deltar
