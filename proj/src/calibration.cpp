#include "deltar/calibration.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace deltar {

namespace {

// Residual n . back_project(x, y, m) + d is affine in the pixel coords:
// r(x, y) = a*x + b*y + c.
struct AffineResidual {
  double a, b, c;

  static AffineResidual make(double zone_mean, const Plane& plane, const CameraIntrinsics& k) {
    AffineResidual f{};
    f.a = plane.normal.x() * zone_mean / k.fx;
    f.b = plane.normal.y() * zone_mean / k.fy;
    f.c = -plane.normal.x() * zone_mean * k.cx / k.fx -
          plane.normal.y() * zone_mean * k.cy / k.fy + plane.normal.z() * zone_mean +
          plane.offset;
    return f;
  }

  double eval(double x, double y) const { return a * x + b * y + c; }
};

Matrix3d exp_so3(const Vector3d& w) {
  const double angle = w.norm();
  if (angle < 1e-14) return Matrix3d::Identity() + Eigen::Matrix3d{{0, -w.z(), w.y()},
                                                                   {w.z(), 0, -w.x()},
                                                                   {-w.y(), w.x(), 0}};
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

Matrix3d reorthonormalize(const Matrix3d& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  return q.toRotationMatrix();
}

double point_to_plane_cost(const std::vector<CalibrationFrame>& frames, const Matrix3d& r,
                           const Vector3d& t) {
  double cost = 0.0;
  for (const auto& f : frames) {
    for (const auto& p : f.points) {
      const double res = f.plane.normal.dot(r * p + t) + f.plane.offset;
      cost += res * res;
    }
  }
  return cost;
}

}  // namespace

void EmConfig::validate() const {
  if (max_iterations <= 0 || convergence_tol <= 0.0 || outlier_threshold <= 0.0)
    throw InvalidArgument("em config: all fields must be positive");
}

std::pair<double, double> mstep_anchor(const Rect& zone_rect, double zone_mean, const Plane& plane,
                                       const CameraIntrinsics& k_tof,
                                       std::pair<double, double> prev) {
  const AffineResidual f = AffineResidual::make(zone_mean, plane, k_tof);
  const double grad_sq = f.a * f.a + f.b * f.b;
  if (grad_sq == 0.0) return prev;  // residual constant over the zone

  // Foot of the perpendicular from prev onto the zero line.
  const double r_prev = f.eval(prev.first, prev.second);
  const double qx = prev.first - r_prev * f.a / grad_sq;
  const double qy = prev.second - r_prev * f.b / grad_sq;

  // Clip the zero line q + s*(-b, a) against the rect.
  const double ux = -f.b, uy = f.a;
  double s_lo = -std::numeric_limits<double>::infinity();
  double s_hi = std::numeric_limits<double>::infinity();
  bool feasible = true;
  auto clip = [&](double u, double q, double lo, double hi) {
    if (u == 0.0) {
      if (q < lo || q > hi) feasible = false;
      return;
    }
    double s0 = (lo - q) / u, s1 = (hi - q) / u;
    if (s0 > s1) std::swap(s0, s1);
    s_lo = std::max(s_lo, s0);
    s_hi = std::min(s_hi, s1);
  };
  clip(ux, qx, zone_rect.x_min, zone_rect.x_max);
  clip(uy, qy, zone_rect.y_min, zone_rect.y_max);

  if (feasible && s_lo <= s_hi) {
    const double s = std::clamp(0.0, s_lo, s_hi);  // s=0 is the point nearest prev
    double x = qx + s * ux, y = qy + s * uy;
    x = std::clamp(x, zone_rect.x_min, zone_rect.x_max);
    y = std::clamp(y, zone_rect.y_min, zone_rect.y_max);
    return {x, y};
  }

  // Zero line misses the rect: |r| is minimized at a corner.
  const double xs[2] = {zone_rect.x_min, zone_rect.x_max};
  const double ys[2] = {zone_rect.y_min, zone_rect.y_max};
  std::pair<double, double> best{xs[0], ys[0]};
  double best_r = std::abs(f.eval(xs[0], ys[0]));
  for (double y : ys) {
    for (double x : xs) {
      const double r = std::abs(f.eval(x, y));
      if (r < best_r) {
        best_r = r;
        best = {x, y};
      }
    }
  }
  return best;
}

PlaneFitResult fit_plane_em(const ZoneGrid& zones, const CameraIntrinsics& k_tof,
                            const EmConfig& cfg) {
  cfg.validate();
  if (zones.valid_count() < 3)
    throw DegenerateGeometry("fit_plane_em: fewer than 3 valid zones");

  const std::size_t n = zones.readings.size();
  PlaneFitResult out;
  out.anchor_points.resize(n, {0.0, 0.0});
  out.inlier_mask.assign(n, 0);

  std::vector<Rect> rects(n);
  for (int r = 0; r < zones.rows; ++r) {
    for (int c = 0; c < zones.cols; ++c) {
      const std::size_t k = zones.index(r, c);
      rects[k] = zone_bounds(r, c, k_tof, zones);
      out.anchor_points[k] = {rects[k].cx(), rects[k].cy()};
      out.inlier_mask[k] = zones.readings[k].valid ? 1 : 0;
    }
  }

  auto anchor_point = [&](std::size_t k) {
    return back_project(out.anchor_points[k].first, out.anchor_points[k].second,
                        zones.readings[k].mean, k_tof);
  };

  double prev_rms = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    // E-step with outlier rejection: fit, drop zones whose residual at the
    // current anchor exceeds the threshold, refit. Dropping before the M-step
    // keeps gross outliers from dragging the good anchors with them.
    bool dropped = true;
    while (dropped) {
      std::vector<Vector3d> pts;
      pts.reserve(n);
      for (std::size_t k = 0; k < n; ++k)
        if (out.inlier_mask[k]) pts.push_back(anchor_point(k));
      if (pts.size() < 3)
        throw DegenerateGeometry("fit_plane_em: fewer than 3 inlier zones survive");
      out.plane = fit_plane_least_squares(pts);

      dropped = false;
      for (std::size_t k = 0; k < n; ++k) {
        if (!out.inlier_mask[k]) continue;
        if (std::abs(point_plane_distance(anchor_point(k), out.plane)) > cfg.outlier_threshold) {
          out.inlier_mask[k] = 0;
          dropped = true;
        }
      }
    }

    // M-step: move anchors to the in-zone residual minimizer.
    double sq_sum = 0.0;
    int kept = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (!out.inlier_mask[k]) continue;
      out.anchor_points[k] = mstep_anchor(rects[k], zones.readings[k].mean, out.plane, k_tof,
                                          out.anchor_points[k]);
      const double res = point_plane_distance(anchor_point(k), out.plane);
      sq_sum += res * res;
      ++kept;
    }

    out.rms_residual = std::sqrt(sq_sum / kept);
    out.residual_history.push_back(out.rms_residual);
    out.iterations = iter + 1;
    if (std::abs(prev_rms - out.rms_residual) < cfg.convergence_tol) break;
    prev_rms = out.rms_residual;
  }
  return out;
}

Extrinsics solve_extrinsics(const std::vector<CalibrationFrame>& frames, const Extrinsics& init,
                            const GnConfig& cfg) {
  std::size_t total_points = 0;
  for (const auto& f : frames) total_points += f.points.size();
  if (frames.empty() || total_points < 6)
    throw InvalidArgument("solve_extrinsics: need frames with at least 6 points in total");

  // Translation is observable only if the plane normals span R^3.
  Eigen::MatrixXd normals(3, static_cast<Eigen::Index>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) normals.col(static_cast<Eigen::Index>(i)) = frames[i].plane.normal;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(normals);
  const auto& sv = svd.singularValues();
  if (sv.size() < 3 || sv(2) < 1e-9 * sv(0))
    throw UnobservableDof("solve_extrinsics: plane normals span rank < 3");

  Matrix3d rot = init.rotation;
  Vector3d t = init.translation;
  double cost = point_to_plane_cost(frames, rot, t);
  double lambda = 0.0;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto& f : frames) {
      const Vector3d& nrm = f.plane.normal;
      for (const auto& p : f.points) {
        const Vector3d q = rot * p;
        const double res = nrm.dot(q + t) + f.plane.offset;
        Eigen::Matrix<double, 6, 1> row;
        row.head<3>() = q.cross(nrm);
        row.tail<3>() = nrm;
        jtj.noalias() += row * row.transpose();
        jtr.noalias() += row * res;
      }
    }

    if (jtr.norm() < cfg.gradient_tol) return Extrinsics(rot, t);

    // Try the Gauss-Newton step; on a cost increase fall back to Levenberg
    // damping, x10 per rejection.
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      Eigen::Matrix<double, 6, 6> a = jtj;
      a.diagonal().array() += lambda;
      const Eigen::Matrix<double, 6, 1> delta = a.ldlt().solve(-jtr);
      const Matrix3d rot_new = reorthonormalize(exp_so3(delta.head<3>()) * rot);
      const Vector3d t_new = t + delta.tail<3>();
      const double cost_new = point_to_plane_cost(frames, rot_new, t_new);
      if (cost_new <= cost) {
        rot = rot_new;
        t = t_new;
        cost = cost_new;
        lambda = (lambda < 1e-12) ? 0.0 : lambda * 0.1;
        accepted = true;
      } else {
        lambda = (lambda == 0.0) ? 1e-6 * jtj.diagonal().mean() : lambda * 10.0;
      }
    }
    if (!accepted) return Extrinsics(rot, t);  // damping exhausted: local minimum
  }

  std::ostringstream msg;
  msg << "solve_extrinsics: no convergence after " << cfg.max_iterations
      << " iterations (cost " << cost << ")";
  throw ConvergenceFailure(msg.str());
}

CalibrationReport calibration_report(const std::vector<CalibrationFrame>& frames,
                                     const Extrinsics& e) {
  if (frames.empty()) throw InvalidArgument("calibration_report: no frames");
  double before = 0.0, after = 0.0;
  std::size_t count = 0;
  for (const auto& f : frames) {
    for (const auto& p : f.points) {
      before += std::abs(point_plane_distance(p, f.plane));
      after += std::abs(point_plane_distance(transform_point(p, e), f.plane));
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("calibration_report: frames contain no points");
  return {before / count, after / count};
}

}  // namespace deltar
