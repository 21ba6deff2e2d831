#include "deltar/eval/baseline.hpp"

#include <algorithm>
#include <cmath>

namespace deltar::eval {

namespace {

double rect_distance_sq(double px, double py, const Rect& r) {
  const double dx = std::max({r.x_min - px, 0.0, px - r.x_max});
  const double dy = std::max({r.y_min - py, 0.0, py - r.y_max});
  return dx * dx + dy * dy;
}

}  // namespace

DepthMap baseline_nearest_zone(const ZoneGrid& zones,
                               const std::vector<std::optional<Rect>>& footprints, int width,
                               int height) {
  if (width < 1 || height < 1) throw InvalidArgument("baseline_nearest_zone: empty output size");
  if (footprints.size() != zones.readings.size())
    throw InvalidArgument("baseline_nearest_zone: one footprint slot per zone expected");

  struct Candidate {
    Rect rect;
    float depth;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < footprints.size(); ++i) {
    if (!footprints[i] || !zones.readings[i].valid) continue;
    cands.push_back({*footprints[i], static_cast<float>(zones.readings[i].mean)});
  }
  if (cands.empty())
    throw InvalidArgument("baseline_nearest_zone: no valid zone with a footprint");

  DepthMap out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      std::size_t best = 0;
      double best_d = rect_distance_sq(px, py, cands[0].rect);
      for (std::size_t i = 1; i < cands.size(); ++i) {
        const double d = rect_distance_sq(px, py, cands[i].rect);
        if (d < best_d) {  // strict: ties keep the lowest zone index
          best_d = d;
          best = i;
        }
      }
      out.set(x, y, cands[best].depth);
    }
  }
  return out;
}

}  // namespace deltar::eval
