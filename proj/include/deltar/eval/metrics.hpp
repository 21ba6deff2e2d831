#pragma once

#include <cstddef>

#include <json.hpp>

#include "deltar/geometry.hpp"

namespace deltar::eval {

using nlohmann::json;

/// Standard monocular-depth error summary over the valid-gt pixel set.
/// deltaN is the fraction of pixels with max(pred/gt, gt/pred) < 1.25^N.
struct MetricReport {
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  double rel = 0.0;    // mean |pred - gt| / gt
  double rmse = 0.0;   // meters
  double log10 = 0.0;  // mean |log10 pred - log10 gt|
  std::size_t pixel_count = 0;
};

json to_json(const MetricReport& r);

/// Evaluates pred against gt over pixels with valid ground truth.
/// Throws InvalidArgument on shape mismatch, NoValidPixels when gt has none.
MetricReport compute_metrics(const DepthMap& pred, const DepthMap& gt);

}  // namespace deltar::eval
