#include "deltar/sensor_sim.hpp"

#include <algorithm>
#include <cmath>

namespace deltar {

ZoneGrid::ZoneGrid(int rows_, int cols_) : rows(rows_), cols(cols_) {
  if (rows <= 0 || cols <= 0) throw InvalidArgument("zone grid: non-positive zone counts");
  readings.resize(static_cast<std::size_t>(rows) * cols);
}

int ZoneGrid::valid_count() const {
  int n = 0;
  for (const auto& r : readings) n += r.valid ? 1 : 0;
  return n;
}

void SensorConfig::validate() const {
  if (!(0.0 < min_range && min_range < max_range))
    throw InvalidArgument("sensor config: require 0 < min_range < max_range");
  if (min_samples_per_zone < 1)
    throw InvalidArgument("sensor config: min_samples_per_zone must be >= 1");
  if (rows <= 0 || cols <= 0 || virtual_resolution <= 0)
    throw InvalidArgument("sensor config: non-positive grid sizes");
}

Rect zone_bounds(int row, int col, const CameraIntrinsics& k_tof, const ZoneGrid& grid) {
  if (row < 0 || row >= grid.rows || col < 0 || col >= grid.cols)
    throw InvalidArgument("zone_bounds: zone index out of range");
  if (std::abs(k_tof.fov_h() - grid.fov_h) > 1e-3 || std::abs(k_tof.fov_v() - grid.fov_v) > 1e-3)
    throw InvalidArgument("zone_bounds: intrinsics field of view disagrees with the grid");
  const double zw = static_cast<double>(k_tof.width) / grid.cols;
  const double zh = static_cast<double>(k_tof.height) / grid.rows;
  return Rect(col * zw, row * zh, (col + 1) * zw, (row + 1) * zh);
}

ZoneGrid simulate_zone_grid(const DepthMap& gt_depth_tof, const CameraIntrinsics& k_tof,
                            const SensorConfig& cfg) {
  cfg.validate();
  if (gt_depth_tof.width != k_tof.width || gt_depth_tof.height != k_tof.height)
    throw InvalidArgument("simulate_zone_grid: depth map resolution does not match intrinsics");

  ZoneGrid grid(cfg.rows, cfg.cols);
  grid.fov_h = k_tof.fov_h();
  grid.fov_v = k_tof.fov_v();

  // Bucket in-range depths per zone, row-major pixel order. The range gate is
  // inclusive and compared at the raster's float precision so the stated
  // bounds are the actual ones.
  const float range_lo = static_cast<float>(cfg.min_range);
  const float range_hi = static_cast<float>(cfg.max_range);
  std::vector<std::vector<double>> buckets(grid.readings.size());
  for (int y = 0; y < gt_depth_tof.height; ++y) {
    const int zr = std::min(grid.rows - 1, y * grid.rows / gt_depth_tof.height);
    for (int x = 0; x < gt_depth_tof.width; ++x) {
      if (!gt_depth_tof.is_valid(x, y)) continue;
      const float dv = gt_depth_tof.at(x, y);
      if (dv < range_lo || dv > range_hi) continue;
      const double d = dv;
      const int zc = std::min(grid.cols - 1, x * grid.cols / gt_depth_tof.width);
      buckets[grid.index(zr, zc)].push_back(d);
    }
  }

  for (std::size_t k = 0; k < buckets.size(); ++k) {
    auto& depths = buckets[k];
    if (depths.size() < static_cast<std::size_t>(cfg.min_samples_per_zone)) continue;
    // Sorting makes the statistics independent of pixel traversal order.
    std::sort(depths.begin(), depths.end());
    double sum = 0.0;
    for (double d : depths) sum += d;
    const double mean = sum / static_cast<double>(depths.size());
    double sq = 0.0;
    for (double d : depths) sq += (d - mean) * (d - mean);

    ZoneReading& r = grid.readings[k];
    r.mean = mean;
    r.variance = sq / static_cast<double>(depths.size());  // population variance = ML Gaussian fit
    r.valid = true;
  }
  return grid;
}

std::optional<Rect> zone_footprint_in_rgb(int row, int col, const CameraIntrinsics& k_tof,
                                          const CameraIntrinsics& k_rgb,
                                          const Extrinsics& rgb_to_tof, double depth_hint,
                                          const ZoneGrid& grid) {
  if (!(depth_hint > 0.0)) throw InvalidArgument("zone_footprint_in_rgb: depth hint must be > 0");
  const Rect zb = zone_bounds(row, col, k_tof, grid);
  const Extrinsics tof_to_rgb = rgb_to_tof.inverse();

  const double xs[2] = {zb.x_min, zb.x_max};
  const double ys[2] = {zb.y_min, zb.y_max};
  double u_min = std::numeric_limits<double>::infinity(), u_max = -u_min;
  double v_min = u_min, v_max = -u_min;
  for (double x : xs) {
    for (double y : ys) {
      const Vector3d p_tof = back_project(x, y, depth_hint, k_tof);
      const Vector3d p_rgb = transform_point(p_tof, tof_to_rgb);
      if (!(p_rgb.z() > 0.0))
        throw FootprintUndefined("zone_footprint_in_rgb: zone corner behind the RGB camera");
      const auto [u, v] = project(p_rgb, k_rgb);
      u_min = std::min(u_min, u);
      u_max = std::max(u_max, u);
      v_min = std::min(v_min, v);
      v_max = std::max(v_max, v);
    }
  }

  const double cx0 = std::max(u_min, 0.0);
  const double cy0 = std::max(v_min, 0.0);
  const double cx1 = std::min(u_max, static_cast<double>(k_rgb.width));
  const double cy1 = std::min(v_max, static_cast<double>(k_rgb.height));
  if (!(cx0 < cx1) || !(cy0 < cy1)) return std::nullopt;
  return Rect(cx0, cy0, cx1, cy1);
}

}  // namespace deltar
