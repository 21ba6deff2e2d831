#pragma once

#include <utility>
#include <vector>

#include "deltar/geometry.hpp"
#include "deltar/sensor_sim.hpp"

namespace deltar {

struct EmConfig {
  int max_iterations = 50;
  double convergence_tol = 1e-6;   // meters, change in rms residual
  double outlier_threshold = 0.05; // meters, point-plane distance

  void validate() const;
};

struct PlaneFitResult {
  Plane plane;
  std::vector<std::pair<double, double>> anchor_points;  // (x, y) per zone, row-major
  std::vector<uint8_t> inlier_mask;                      // per zone; invalid zones are 0
  double rms_residual = 0.0;                             // meters, over inliers
  int iterations = 0;
  std::vector<double> residual_history;                  // rms per iteration
};

/// One calibration observation: the plane recovered in the ToF frame plus the
/// metric 3D points observed in the RGB frame that lie on that plane.
struct CalibrationFrame {
  Plane plane;                  // ToF frame
  std::vector<Vector3d> points; // RGB frame, meters
};

struct CalibrationReport {
  double mean_distance_before = 0.0;  // meters, identity extrinsics
  double mean_distance_after = 0.0;   // meters, solved extrinsics
};

struct GnConfig {
  int max_iterations = 100;
  double gradient_tol = 1e-10;
};

/// Alternating plane fit over the zone means: anchors start at zone centers,
/// the E-step back-projects anchors and fits a least-squares plane, the M-step
/// moves each anchor to the in-zone minimizer of the point-plane residual.
/// Zones whose residual exceeds cfg.outlier_threshold are dropped from later
/// E-steps. Throws DegenerateGeometry with fewer than 3 usable zones.
PlaneFitResult fit_plane_em(const ZoneGrid& zones, const CameraIntrinsics& k_tof,
                            const EmConfig& cfg);

/// Constrained minimizer of |n . back_project(x, y, m_k) + d| over the zone
/// rect. The residual is affine in (x, y): when its zero line crosses the rect
/// the result is the zero-line point closest to prev, otherwise the rect
/// corner minimizing the absolute residual.
std::pair<double, double> mstep_anchor(const Rect& zone_rect, double zone_mean, const Plane& plane,
                                       const CameraIntrinsics& k_tof,
                                       std::pair<double, double> prev);

/// Gauss-Newton (with Levenberg damping fallback) over an axis-angle-increment
/// + translation parameterization of the RGB->ToF transform, minimizing the
/// summed squared point-to-plane distances. Throws UnobservableDof when the
/// plane normals span rank < 3 and ConvergenceFailure when the iteration limit
/// is hit without meeting the gradient tolerance.
Extrinsics solve_extrinsics(const std::vector<CalibrationFrame>& frames, const Extrinsics& init,
                            const GnConfig& cfg = {});

/// Mean absolute point-to-plane distance under identity vs. solved extrinsics.
CalibrationReport calibration_report(const std::vector<CalibrationFrame>& frames,
                                     const Extrinsics& e);

}  // namespace deltar
