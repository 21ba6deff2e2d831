#include "deltar/eval/plane_eval.hpp"

#include <cmath>

namespace deltar::eval {

namespace {

struct RaySample {
  double x, y;   // pixel center
  double depth;  // measured
};

double signed_distance(const Vector3d& p, const Plane& pl) {
  return pl.normal.dot(p) + pl.offset;
}

Plane robust_fit(const std::vector<Vector3d>& points) {
  std::vector<Vector3d> kept = points;
  Plane pl = fit_plane_least_squares(kept);
  for (int round = 0; round < 2; ++round) {
    double mean = 0.0, sq = 0.0;
    for (const auto& p : kept) mean += signed_distance(p, pl);
    mean /= static_cast<double>(kept.size());
    for (const auto& p : kept) {
      const double r = signed_distance(p, pl) - mean;
      sq += r * r;
    }
    const double sigma = std::sqrt(sq / static_cast<double>(kept.size()));
    std::vector<Vector3d> next;
    next.reserve(kept.size());
    for (const auto& p : kept)
      if (std::abs(signed_distance(p, pl) - mean) <= 3.0 * sigma) next.push_back(p);
    if (next.size() < 3) throw DegenerateGeometry("plane_bias_jitter: rejection left too few points");
    kept = std::move(next);
    pl = fit_plane_least_squares(kept);
  }
  return pl;
}

}  // namespace

json to_json(const PlaneEvalReport& r) {
  json j;
  j["distance"] = r.distance;
  j["bias"] = r.bias;
  j["jitter"] = r.jitter;
  j["frames"] = r.frames;
  return j;
}

PlaneEvalReport plane_bias_jitter(const std::vector<DepthMap>& preds,
                                  const CameraIntrinsics& k, const Rect& region,
                                  const std::optional<Plane>& reference) {
  if (preds.size() < 2)
    throw InvalidArgument("plane_bias_jitter: needs at least two frames of the target");
  for (const auto& m : preds)
    if (m.width != preds.front().width || m.height != preds.front().height)
      throw InvalidArgument("plane_bias_jitter: frame sizes disagree");

  std::vector<RaySample> samples;
  for (const auto& m : preds) {
    for (int y = 0; y < m.height; ++y) {
      for (int x = 0; x < m.width; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (!region.contains(px, py) || !m.is_valid(x, y)) continue;
        samples.push_back({px, py, m.at(x, y)});
      }
    }
  }
  if (samples.size() < 3) throw DegenerateGeometry("plane_bias_jitter: too few valid pixels");

  Plane pl;
  if (reference) {
    pl = *reference;
  } else {
    std::vector<Vector3d> points;
    points.reserve(samples.size());
    for (const auto& s : samples) points.push_back(back_project(s.x, s.y, s.depth, k));
    pl = robust_fit(points);
  }

  double sum_t = 0.0, sum_abs = 0.0, sum_err = 0.0, sum_err_sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    const Vector3d dir((s.x - k.cx) / k.fx, (s.y - k.cy) / k.fy, 1.0);
    const double denom = pl.normal.dot(dir);
    if (std::abs(denom) < 1e-12) continue;  // ray parallel to the plane
    const double t = -pl.offset / denom;    // plane-induced depth along this ray
    const double err = s.depth - t;
    sum_t += t;
    sum_abs += std::abs(err);
    sum_err += err;
    sum_err_sq += err * err;
    ++n;
  }
  if (n < 3) throw DegenerateGeometry("plane_bias_jitter: plane is edge-on to the rays");

  const double inv = 1.0 / static_cast<double>(n);
  const double mean_err = sum_err * inv;
  PlaneEvalReport r;
  r.distance = sum_t * inv;
  r.bias = sum_abs * inv;
  r.jitter = std::sqrt(std::max(0.0, sum_err_sq * inv - mean_err * mean_err));
  r.frames = static_cast<int>(preds.size());
  return r;
}

}  // namespace deltar::eval
