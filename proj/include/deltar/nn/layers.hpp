#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "deltar/nn/tensor.hpp"

namespace deltar::nn {

/// Owns every learnable tensor of a model in creation order. The order is
/// the checkpoint blob order and the optimizer's iteration order, so layer
/// construction must be deterministic.
class ParamRegistry {
 public:
  /// Uniform(-scale, scale) initialized parameter with requires_grad set.
  Tensor create(const std::string& name, const std::vector<int>& shape, double scale,
                std::mt19937& rng);
  /// Constant-filled parameter (layer-norm affine, biases).
  Tensor create_const(const std::string& name, const std::vector<int>& shape, double value);

  std::vector<std::pair<std::string, Tensor>>& items() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return params_; }

 private:
  void check_unique(const std::string& name) const;
  std::vector<std::pair<std::string, Tensor>> params_;
};

/// y = x W^T + b with W [out, in]; applies to the trailing axis.
struct Linear {
  Tensor w, b;
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& prefix, int in, int out, std::mt19937& rng);
  Tensor forward(const Tensor& x) const;
};

/// Last-axis normalization with learned affine.
struct LayerNorm {
  Tensor gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& prefix, int dim);
  Tensor forward(const Tensor& x) const;
};

struct Conv {
  Tensor w, b;
  int stride = 1, padding = 1;
  Conv() = default;
  Conv(ParamRegistry& reg, const std::string& prefix, int cin, int cout, int kernel, int stride,
       int padding, std::mt19937& rng);
  Tensor forward(const Tensor& x) const;
};

/// Multi-head attention with learned Q/K/V/output projections. Positional
/// terms are the caller's job: pass them pre-added on q_in/k_in only so the
/// value path stays position-free.
struct Mha {
  Linear q_proj, k_proj, v_proj, out_proj;
  int heads = 1;
  Mha() = default;
  Mha(ParamRegistry& reg, const std::string& prefix, int dim, int heads, std::mt19937& rng);
  Tensor forward(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const Tensor& mask = {}) const;
};

/// Two-layer feed-forward with GELU.
struct Mlp {
  Linear fc1, fc2;
  Mlp() = default;
  Mlp(ParamRegistry& reg, const std::string& prefix, int dim, int hidden, std::mt19937& rng);
  Tensor forward(const Tensor& x) const;
};

/// Fixed 2-D sinusoidal position code, shape [h*w, dim] (row-major cells).
/// dim must be divisible by 4; half the channels encode y, half x.
Tensor sinusoidal_posenc_2d(int h, int w, int dim);

}  // namespace deltar::nn
