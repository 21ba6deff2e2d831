#include "deltar/nn/layers.hpp"

#include <cmath>

namespace deltar::nn {

void ParamRegistry::check_unique(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) throw InvalidArgument("parameter name reused: " + name);
}

Tensor ParamRegistry::create(const std::string& name, const std::vector<int>& shape, double scale,
                             std::mt19937& rng) {
  check_unique(name);
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = dist(rng);
  Tensor t = Tensor::from_vector(shape, v, true);
  params_.emplace_back(name, t);
  return t;
}

Tensor ParamRegistry::create_const(const std::string& name, const std::vector<int>& shape,
                                   double value) {
  check_unique(name);
  Tensor t = Tensor::full(shape, value, true);
  params_.emplace_back(name, t);
  return t;
}

Linear::Linear(ParamRegistry& reg, const std::string& prefix, int in, int out,
               std::mt19937& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  w = reg.create(prefix + ".w", {out, in}, scale, rng);
  b = reg.create_const(prefix + ".b", {out}, 0.0);
}

Tensor Linear::forward(const Tensor& x) const {
  const int in = w.dim(1), out = w.dim(0);
  if (x.dim(x.ndim() - 1) != in) throw InvalidArgument("Linear: trailing dim mismatch");
  const int rows = static_cast<int>(x.numel() / in);
  Tensor flat = reshape(x, {rows, in});
  Tensor y = bias_add(matmul(flat, w, false, true), b);
  std::vector<int> out_shape = x.shape();
  out_shape.back() = out;
  return reshape(y, out_shape);
}

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& prefix, int dim) {
  gamma = reg.create_const(prefix + ".gamma", {dim}, 1.0);
  beta = reg.create_const(prefix + ".beta", {dim}, 0.0);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }

Conv::Conv(ParamRegistry& reg, const std::string& prefix, int cin, int cout, int kernel,
           int stride_, int padding_, std::mt19937& rng)
    : stride(stride_), padding(padding_) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(cin) * kernel * kernel);
  w = reg.create(prefix + ".w", {cout, cin, kernel, kernel}, scale, rng);
  b = reg.create_const(prefix + ".b", {cout}, 0.0);
}

Tensor Conv::forward(const Tensor& x) const { return conv2d(x, w, b, stride, padding); }

Mha::Mha(ParamRegistry& reg, const std::string& prefix, int dim, int heads_, std::mt19937& rng)
    : q_proj(reg, prefix + ".q", dim, dim, rng),
      k_proj(reg, prefix + ".k", dim, dim, rng),
      v_proj(reg, prefix + ".v", dim, dim, rng),
      out_proj(reg, prefix + ".o", dim, dim, rng),
      heads(heads_) {
  if (dim % heads_ != 0) throw InvalidArgument("Mha: heads must divide dim");
}

Tensor Mha::forward(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                    const Tensor& mask) const {
  Tensor out =
      attention(q_proj.forward(q_in), k_proj.forward(k_in), v_proj.forward(v_in), heads, mask);
  return out_proj.forward(out);
}

Mlp::Mlp(ParamRegistry& reg, const std::string& prefix, int dim, int hidden, std::mt19937& rng)
    : fc1(reg, prefix + ".fc1", dim, hidden, rng), fc2(reg, prefix + ".fc2", hidden, dim, rng) {}

Tensor Mlp::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

Tensor sinusoidal_posenc_2d(int h, int w, int dim) {
  if (dim % 4 != 0) throw InvalidArgument("sinusoidal_posenc_2d: dim must be divisible by 4");
  const int half = dim / 2;     // channels per axis
  const int pairs = half / 2;   // (sin, cos) pairs per axis
  std::vector<double> v(static_cast<std::size_t>(h) * w * dim);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* cell = v.data() + (static_cast<std::size_t>(y) * w + x) * dim;
      for (int j = 0; j < pairs; ++j) {
        const double omega = std::pow(10000.0, -2.0 * j / half);
        cell[2 * j] = std::sin(y * omega);
        cell[2 * j + 1] = std::cos(y * omega);
        cell[half + 2 * j] = std::sin(x * omega);
        cell[half + 2 * j + 1] = std::cos(x * omega);
      }
    }
  }
  return Tensor::from_vector({h * w, dim}, v, false);
}

}  // namespace deltar::nn
