#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <vector>

#include "deltar/errors.hpp"

namespace deltar::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the autodiff graph: a flat float64 buffer plus the closure
/// that pulls this node's gradient into its parents.
struct Node {
  std::vector<int> shape;
  Eigen::VectorXd data;
  Eigen::VectorXd grad;  // allocated on first touch during backward
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;

  Eigen::Index numel() const { return data.size(); }
  Eigen::VectorXd& ensure_grad();
};

/// Shared handle to a Node. Copies alias the same storage; ops build fresh
/// nodes. Row-major layout throughout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
  static Tensor full(const std::vector<int>& shape, double value, bool requires_grad = false);
  static Tensor from_vector(const std::vector<int>& shape, const std::vector<double>& values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  Eigen::Index numel() const { return node_->numel(); }
  double item() const;

  const Eigen::VectorXd& data() const { return node_->data; }
  Eigen::VectorXd& raw() { return node_->data; }
  const Eigen::VectorXd& grad() const;
  bool has_grad() const { return node_->grad.size() == node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  void zero_grad();

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

Eigen::Index numel_of(const std::vector<int>& shape);

/// Allocate a graph node wired to the given parents (data zero-initialized,
/// requires_grad inherited). Callers fill `data` and set `backprop`; the
/// closure must accumulate into parent->ensure_grad().
NodePtr alloc_node(const std::vector<int>& shape, const std::vector<Tensor>& parents);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor log_nat(const Tensor& a);
/// Forward sqrt(max(x, 0)); gradient 1/(2*sqrt(max(x, grad_clamp))).
Tensor sqrt_clamped(const Tensor& a, double grad_clamp);

// ---- shape ----
Tensor reshape(const Tensor& a, const std::vector<int>& shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_axis0(const Tensor& a, int start, int length);
/// Row gather on a 2-D table; rows may repeat. Gradient scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<int>& rows);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_last(const Tensor& a);  // [..., L] -> [...]
/// [B, S, C] -> [B, C], max over S; ties route the gradient to the first hit.
Tensor max_axis1(const Tensor& a);
Tensor softmax_last(const Tensor& a);

// ---- linear algebra ----
/// [R, C] plus a length-C bias broadcast over rows (R = numel/C for nd > 2).
Tensor bias_add(const Tensor& a, const Tensor& bias);
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
/// Batched matmul on 3-D tensors with a shared leading batch axis.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
/// y = x W^T + b over the trailing axis (W [out, in], b [out]), evaluated
/// with one fixed sequential code path per row. Unlike blocked GEMM kernels,
/// a row's output never depends on its position in the batch, so permuting
/// or duplicating rows permutes/duplicates the output bitwise.
Tensor linear_rowstable(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- structured ----
/// input [Cin, H, W], weight [Cout, Cin, kh, kw], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding);
/// CHW bilinear resize, half-pixel centers, clamped borders.
Tensor upsample_bilinear(const Tensor& input, int out_h, int out_w);
/// Normalization over the last axis with affine weight/bias of that length.
Tensor layer_norm(const Tensor& x, const Tensor& weight, const Tensor& bias, double eps = 1e-5);
/// Scaled dot-product attention over the last two axes. q [*, Nq, D],
/// k/v [*, Nk, D] with D divisible by heads; optional additive mask [Nq, Nk]
/// broadcast over batch and heads. Rows of the softmax sum to 1.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const Tensor& mask = {});

/// Reverse-mode sweep from a one-element tensor. Gradients accumulate into
/// every reachable node; parameter grads persist until zero_grad.
void backward(const Tensor& root);

}  // namespace deltar::nn
