#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "deltar/geometry.hpp"

namespace deltar::eval {

using nlohmann::json;

/// Accuracy/noise summary of repeated depth captures of one planar target.
struct PlaneEvalReport {
  double distance = 0.0;  // mean plane depth along the evaluated rays, meters
  double bias = 0.0;      // mean |measured - plane| along each ray, meters
  double jitter = 0.0;    // standard deviation of the signed error, meters
  int frames = 0;
};

json to_json(const PlaneEvalReport& r);

/// Pools the valid pixels of `region` across all frames, fits a reference
/// plane (least squares plus two rounds of 3-sigma outlier rejection on the
/// back-projected points), then scores every pixel against the depth the
/// plane induces along that pixel's ray. Passing `reference` skips the fit
/// and scores against the given plane instead, which keeps a constant depth
/// offset visible as bias rather than letting the fit absorb it.
/// Throws InvalidArgument on fewer than two frames or mismatched sizes,
/// DegenerateGeometry when the fit is unusable.
PlaneEvalReport plane_bias_jitter(const std::vector<DepthMap>& preds,
                                  const CameraIntrinsics& k, const Rect& region,
                                  const std::optional<Plane>& reference = std::nullopt);

}  // namespace deltar::eval
