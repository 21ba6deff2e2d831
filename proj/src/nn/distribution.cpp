#include "deltar/nn/distribution.hpp"

#include <algorithm>
#include <cmath>

namespace deltar::nn {

namespace {

// Acklam's rational initializer, then two Halley corrections against the
// erfc-based CDF; good to around 1e-15 across the open unit interval.
double acklam_seed(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5, r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double normal_inverse_cdf(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw InvalidArgument("normal_inverse_cdf: p must lie strictly inside (0, 1)");
  constexpr double kSqrt2 = 1.4142135623730950488;
  constexpr double kSqrt2Pi = 2.5066282746310005024;
  double x = acklam_seed(p);
  for (int it = 0; it < 2; ++it) {
    const double err = 0.5 * std::erfc(-x / kSqrt2) - p;
    const double u = err * kSqrt2Pi * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

std::vector<double> sample_inverse_cdf(double mean, double variance, int n_s, bool uniform,
                                       double min_range, double max_range) {
  if (variance < 0.0) throw InvalidArgument("sample_inverse_cdf: negative variance");
  if (n_s < 1) throw InvalidArgument("sample_inverse_cdf: n_s must be positive");
  if (!(min_range < max_range)) throw InvalidArgument("sample_inverse_cdf: empty range");

  const double sigma = std::sqrt(variance);
  std::vector<double> out(static_cast<std::size_t>(n_s));
  if (uniform) {
    const double lo = mean - 2.0 * sigma, hi = mean + 2.0 * sigma;
    for (int i = 0; i < n_s; ++i) {
      const double t = n_s == 1 ? 0.5 : static_cast<double>(i) / (n_s - 1);
      out[static_cast<std::size_t>(i)] = lo + t * (hi - lo);
    }
  } else {
    for (int i = 0; i < n_s; ++i)
      out[static_cast<std::size_t>(i)] =
          mean + sigma * normal_inverse_cdf((i + 0.5) / static_cast<double>(n_s));
  }
  for (double& x : out) x = std::clamp(x, min_range, max_range);
  return out;  // quantiles and linear spacing are already ascending
}

DistributionEncoder::DistributionEncoder(ParamRegistry& reg, const std::vector<int>& dims,
                                         int input_width, std::mt19937& rng)
    : input_width_(input_width) {
  if (dims.empty()) throw InvalidArgument("DistributionEncoder: no levels");
  if (input_width < 1) throw InvalidArgument("DistributionEncoder: bad input width");
  int in = input_width;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    const std::string p = "dist.l" + std::to_string(l);
    Level lv;
    lv.l1 = Linear(reg, p + ".a", in, dims[l], rng);
    lv.l2 = Linear(reg, p + ".b", dims[l], dims[l], rng);
    levels_.push_back(lv);
    in = dims[l];
  }
}

DistributionEncoder::Features DistributionEncoder::forward(const Tensor& values) const {
  if (values.ndim() != 3 || values.dim(2) != input_width_)
    throw InvalidArgument("DistributionEncoder: expects [Z, S, input_width]");
  if (values.dim(1) < 1) throw InvalidArgument("DistributionEncoder: empty sample list");
  Features f;
  Tensor x = values;
  for (const auto& lv : levels_) {
    // Row-stable affine maps keep the per-sample features independent of
    // sample order, so the max-pool below is an exact set function.
    Tensor h = linear_rowstable(gelu(linear_rowstable(x, lv.l1.w, lv.l1.b)), lv.l2.w, lv.l2.b);
    f.per_sample.push_back(h);
    f.pooled.push_back(max_axis1(h));
    x = h;
  }
  return f;
}

}  // namespace deltar::nn
