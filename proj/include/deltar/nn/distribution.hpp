#pragma once

#include <random>
#include <vector>

#include "deltar/nn/layers.hpp"
#include "deltar/nn/tensor.hpp"

namespace deltar::nn {

/// Quantile function of the standard normal, accurate to ~1e-15 over (0, 1).
double normal_inverse_cdf(double p);

/// Depth hypotheses for one zone's Gaussian (mean, variance).
/// uniform=false: the midpoint quantiles mean + sigma * Phi^-1((i+0.5)/n_s).
/// uniform=true: n_s evenly spaced depths spanning mean +/- 2 sigma.
/// Either way the result is ascending and clamped to [min_range, max_range].
std::vector<double> sample_inverse_cdf(double mean, double variance, int n_s,
                                       bool uniform = false, double min_range = 0.02,
                                       double max_range = 4.0);

/// One zone's measurement turned into network input.
struct DistributionToken {
  int row = 0, col = 0;
  double mean = 0.0;             // zone statistics the samples were drawn from
  double variance = 0.0;
  std::vector<double> samples;   // ascending, within the sensor range
  std::vector<Tensor> feature;   // pooled per-level embedding, set by the encoder
};

/// Stacked per-sample MLPs with max-pooling: level 0 reads the raw sample
/// values, each deeper level reads the previous level's per-sample features.
/// Pooling over the sample axis makes the pooled feature exactly invariant
/// to sample order and duplication.
class DistributionEncoder {
 public:
  DistributionEncoder() = default;
  /// dims: output width per level; input_width: channels per raw sample.
  DistributionEncoder(ParamRegistry& reg, const std::vector<int>& dims, int input_width,
                      std::mt19937& rng);

  struct Features {
    std::vector<Tensor> per_sample;  // per level: [Z, S, dim]
    std::vector<Tensor> pooled;      // per level: [Z, dim]
  };
  /// values: [Z, S, input_width].
  Features forward(const Tensor& values) const;

  int input_width() const { return input_width_; }

 private:
  struct Level {
    Linear l1, l2;
  };
  std::vector<Level> levels_;
  int input_width_ = 0;
};

}  // namespace deltar::nn
