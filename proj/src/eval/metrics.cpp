#include "deltar/eval/metrics.hpp"

#include <cmath>

namespace deltar::eval {

json to_json(const MetricReport& r) {
  json j;
  j["delta1"] = r.delta1;
  j["delta2"] = r.delta2;
  j["delta3"] = r.delta3;
  j["rel"] = r.rel;
  j["rmse"] = r.rmse;
  j["log10"] = r.log10;
  j["pixel_count"] = r.pixel_count;
  return j;
}

MetricReport compute_metrics(const DepthMap& pred, const DepthMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw InvalidArgument("compute_metrics: shape mismatch");

  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  std::size_t n = 0, c1 = 0, c2 = 0, c3 = 0;
  double sum_rel = 0.0, sum_sq = 0.0, sum_l10 = 0.0;
  for (int y = 0; y < gt.height; ++y) {
    for (int x = 0; x < gt.width; ++x) {
      if (!gt.is_valid(x, y)) continue;
      const double d = gt.at(x, y);
      const double p = pred.at(x, y);
      if (!(d > 0.0)) throw InvalidArgument("compute_metrics: non-positive ground truth depth");
      const double ratio = std::max(p / d, d / p);
      c1 += ratio < t1;
      c2 += ratio < t2;
      c3 += ratio < t3;
      sum_rel += std::abs(p - d) / d;
      sum_sq += (p - d) * (p - d);
      sum_l10 += std::abs(std::log10(p) - std::log10(d));
      ++n;
    }
  }
  if (n == 0) throw NoValidPixels("compute_metrics: no valid ground truth pixels");

  MetricReport r;
  const double inv = 1.0 / static_cast<double>(n);
  r.delta1 = static_cast<double>(c1) * inv;
  r.delta2 = static_cast<double>(c2) * inv;
  r.delta3 = static_cast<double>(c3) * inv;
  r.rel = sum_rel * inv;
  r.rmse = std::sqrt(sum_sq * inv);
  r.log10 = sum_l10 * inv;
  r.pixel_count = n;
  return r;
}

}  // namespace deltar::eval
