#include "deltar/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace deltar {

CameraIntrinsics::CameraIntrinsics(double fx_, double fy_, double cx_, double cy_, int width_,
                                   int height_)
    : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(width_), height(height_) {
  if (fx <= 0.0 || fy <= 0.0) throw InvalidArgument("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidArgument("intrinsics: resolution must be positive");
  if (cx <= 0.0 || cx >= width || cy <= 0.0 || cy >= height)
    throw InvalidArgument("intrinsics: principal point outside the sensor");
}

CameraIntrinsics CameraIntrinsics::from_fov(double fov_h_rad, double fov_v_rad, int width,
                                            int height) {
  if (fov_h_rad <= 0.0 || fov_h_rad >= M_PI || fov_v_rad <= 0.0 || fov_v_rad >= M_PI)
    throw InvalidArgument("intrinsics: field of view must be in (0, pi)");
  const double fx = 0.5 * width / std::tan(0.5 * fov_h_rad);
  const double fy = 0.5 * height / std::tan(0.5 * fov_v_rad);
  return {fx, fy, 0.5 * width, 0.5 * height, width, height};
}

Extrinsics::Extrinsics(const Matrix3d& rotation_, const Vector3d& translation_)
    : rotation(rotation_), translation(translation_) {
  const double ortho_err = (rotation.transpose() * rotation - Matrix3d::Identity()).norm();
  if (ortho_err > 1e-9) throw InvalidArgument("extrinsics: rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-9)
    throw InvalidArgument("extrinsics: rotation determinant is not +1");
}

Extrinsics Extrinsics::from_axis_angle(const Vector3d& axis, double angle_rad,
                                       const Vector3d& translation) {
  const double n = axis.norm();
  if (n == 0.0) throw InvalidArgument("extrinsics: zero rotation axis");
  const Eigen::AngleAxisd aa(angle_rad, axis / n);
  return {aa.toRotationMatrix(), translation};
}

Extrinsics Extrinsics::inverse() const {
  Extrinsics inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(rotation.transpose() * translation);
  return inv;
}

Plane::Plane(const Vector3d& normal_, double offset_) : normal(normal_), offset(offset_) {
  const double n = normal.norm();
  if (n == 0.0) throw InvalidArgument("plane: zero normal");
  normal /= n;
  offset /= n;
}

Rect::Rect(double x_min_, double y_min_, double x_max_, double y_max_)
    : x_min(x_min_), y_min(y_min_), x_max(x_max_), y_max(y_max_) {
  if (!(x_min < x_max) || !(y_min < y_max)) throw InvalidArgument("rect: empty or inverted");
}

DepthMap::DepthMap(int width_, int height_)
    : width(width_),
      height(height_),
      values(static_cast<std::size_t>(width_) * height_, 0.0f),
      valid(static_cast<std::size_t>(width_) * height_, 0) {
  if (width <= 0 || height <= 0) throw InvalidArgument("depth map: non-positive dimensions");
}

DepthMap DepthMap::constant(int width, int height, float depth) {
  DepthMap m(width, height);
  if (depth <= 0.0f) throw InvalidArgument("depth map: constant depth must be positive");
  std::fill(m.values.begin(), m.values.end(), depth);
  std::fill(m.valid.begin(), m.valid.end(), uint8_t{1});
  return m;
}

void DepthMap::set(int x, int y, float depth) {
  if (depth <= 0.0f) throw InvalidArgument("depth map: valid depth must be positive");
  values[index(x, y)] = depth;
  valid[index(x, y)] = 1;
}

void DepthMap::set_invalid(int x, int y) {
  values[index(x, y)] = std::numeric_limits<float>::quiet_NaN();
  valid[index(x, y)] = 0;
}

std::size_t DepthMap::valid_count() const {
  std::size_t n = 0;
  for (uint8_t v : valid) n += v;
  return n;
}

Vector3d back_project(double x, double y, double depth, const CameraIntrinsics& K) {
  if (!(depth > 0.0)) throw InvalidArgument("back_project: depth must be positive");
  return {(x - K.cx) / K.fx * depth, (y - K.cy) / K.fy * depth, depth};
}

std::pair<double, double> project(const Vector3d& p, const CameraIntrinsics& K) {
  if (!(p.z() > 0.0)) throw BehindCamera("project: point has non-positive depth");
  return {K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy};
}

double point_plane_distance(const Vector3d& p, const Plane& pl) {
  return pl.normal.dot(p) + pl.offset;
}

Vector3d transform_point(const Vector3d& p, const Extrinsics& e) {
  return e.rotation * p + e.translation;
}

Plane fit_plane_least_squares(std::span<const Vector3d> points) {
  if (points.size() < 3) throw DegenerateGeometry("plane fit: need at least 3 points");

  Vector3d centroid = Vector3d::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());

  Matrix3d cov = Matrix3d::Zero();
  for (const auto& p : points) {
    const Vector3d d = p - centroid;
    cov += d * d.transpose();
  }

  Eigen::SelfAdjointEigenSolver<Matrix3d> eig(cov);
  const Vector3d evals = eig.eigenvalues();  // ascending
  // Collinear sets have two vanishing eigenvalues; the plane normal is then
  // not determined.
  const double scale = std::max(evals[2], 1e-300);
  if (evals[1] <= 1e-12 * scale) throw DegenerateGeometry("plane fit: points are collinear");

  Vector3d normal = eig.eigenvectors().col(0);
  double offset = -normal.dot(centroid);
  if (offset > 0.0) {
    normal = -normal;
    offset = -offset;
  }
  return Plane(normal, offset);
}

}  // namespace deltar
