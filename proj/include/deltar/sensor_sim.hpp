#pragma once

#include <optional>
#include <vector>

#include "deltar/geometry.hpp"

namespace deltar {

/// One zone's Gaussian depth summary. mean/variance are meaningful only when
/// valid is set.
struct ZoneReading {
  double mean = 0.0;      // meters
  double variance = 0.0;  // meters^2
  bool valid = false;
};

/// 8x8 grid of zone readings covering a square field of view (45 deg default).
struct ZoneGrid {
  int rows = 8;
  int cols = 8;
  double fov_h = kDefaultFov;  // radians
  double fov_v = kDefaultFov;
  std::vector<ZoneReading> readings;  // row-major rows*cols

  static constexpr double kDefaultFov = 45.0 * M_PI / 180.0;

  ZoneGrid() : readings(64) {}
  ZoneGrid(int rows, int cols);

  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * cols + col; }
  const ZoneReading& at(int row, int col) const { return readings[index(row, col)]; }
  ZoneReading& at(int row, int col) { return readings[index(row, col)]; }
  int valid_count() const;
};

struct SensorConfig {
  double min_range = 0.02;  // meters
  double max_range = 4.0;
  int min_samples_per_zone = 16;
  int rows = 8;
  int cols = 8;
  // Pixels per zone side when rasterizing zone frusta into a virtual ToF plane.
  int virtual_resolution = 8;

  void validate() const;
};

/// Pixel rect of one zone on the ToF image plane. The rows*cols rects tile the
/// sensor exactly. Throws InvalidArgument when the index is out of range or
/// the intrinsics' field of view disagrees with the grid's.
Rect zone_bounds(int row, int col, const CameraIntrinsics& k_tof, const ZoneGrid& grid);

/// Per-zone Gaussian moment fit of the in-range ground-truth depths. Zones
/// with fewer than cfg.min_samples_per_zone in-range samples come back invalid.
ZoneGrid simulate_zone_grid(const DepthMap& gt_depth_tof, const CameraIntrinsics& k_tof,
                            const SensorConfig& cfg);

/// Axis-aligned bound of the zone's four corners back-projected at depth_hint,
/// moved into the RGB frame and projected with k_rgb, clipped to the RGB
/// image. rgb_to_tof maps RGB-frame points into the ToF frame. Returns nullopt
/// when the footprint is entirely outside the RGB image; throws
/// FootprintUndefined when a corner lands behind the RGB camera.
std::optional<Rect> zone_footprint_in_rgb(int row, int col, const CameraIntrinsics& k_tof,
                                          const CameraIntrinsics& k_rgb,
                                          const Extrinsics& rgb_to_tof, double depth_hint,
                                          const ZoneGrid& grid);

}  // namespace deltar
