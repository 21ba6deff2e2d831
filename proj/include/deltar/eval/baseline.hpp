#pragma once

#include <optional>
#include <vector>

#include "deltar/geometry.hpp"
#include "deltar/sensor_sim.hpp"

namespace deltar::eval {

/// Learning-free comparison map: every pixel inside a valid zone's footprint
/// takes that zone's mean depth; pixels outside every footprint take the mean
/// of the footprint nearest in point-to-rect distance (ties resolve to the
/// lowest zone index). `footprints` is row-major per zone and may hold
/// nullopt where a zone has no projection. Throws InvalidArgument when no
/// valid zone has a footprint.
DepthMap baseline_nearest_zone(const ZoneGrid& zones,
                               const std::vector<std::optional<Rect>>& footprints, int width,
                               int height);

}  // namespace deltar::eval
