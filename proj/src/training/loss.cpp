#include "deltar/training/loss.hpp"

#include <cmath>
#include <vector>

namespace deltar::training {

using nn::Tensor;

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw InvalidArgument("LossConfig: lambda must lie in [0, 1]");
  if (!(alpha > 0.0)) throw InvalidArgument("LossConfig: alpha must be positive");
}

json to_json(const LossConfig& cfg) {
  json j;
  j["lambda"] = cfg.lambda;
  j["alpha"] = cfg.alpha;
  return j;
}

LossConfig loss_config_from_json(const json& j) {
  LossConfig cfg;
  try {
    cfg.lambda = j.at("lambda").get<double>();
    cfg.alpha = j.at("alpha").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("LossConfig: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Tensor si_loss(const Tensor& pred, const DepthMap& gt, const LossConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = static_cast<Eigen::Index>(gt.width) * gt.height;
  if (pred.ndim() < 1 || pred.ndim() > 3 || pred.numel() != n)
    throw InvalidArgument("si_loss: prediction and ground truth sizes disagree");

  std::vector<int> rows;
  std::vector<double> gt_depth;
  rows.reserve(gt.valid.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!gt.valid[static_cast<std::size_t>(i)]) continue;
    const double d = gt.values[static_cast<std::size_t>(i)];
    // NaN passes both checks on purpose: a diverged prediction must surface
    // as a non-finite loss, not as a bogus argument error.
    if (d <= 0.0) throw InvalidArgument("si_loss: non-positive ground truth depth");
    if (pred.data()(i) <= 0.0) throw InvalidArgument("si_loss: non-positive predicted depth");
    rows.push_back(static_cast<int>(i));
    gt_depth.push_back(d);
  }
  if (rows.empty()) throw NoValidPixels("si_loss: no valid ground truth pixels");

  // Both logs go through the same kernel so a perfect prediction cancels to
  // exactly zero instead of leaving last-ulp residue.
  const int t = static_cast<int>(rows.size());
  Tensor g = nn::sub(nn::log_nat(nn::gather_rows(nn::reshape(pred, {static_cast<int>(n), 1}), rows)),
                     nn::log_nat(Tensor::from_vector({t, 1}, gt_depth)));
  Tensor radicand =
      nn::sub(nn::mean_all(nn::square(g)), nn::mul_scalar(nn::square(nn::mean_all(g)), cfg.lambda));
  return nn::mul_scalar(nn::sqrt_clamped(radicand, 1e-12), cfg.alpha);
}

}  // namespace deltar::training
