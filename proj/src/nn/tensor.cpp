#include "deltar/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace deltar::nn {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

NodePtr make_node(std::vector<int> shape, std::vector<NodePtr> parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data.resize(numel_of(n->shape));
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw InvalidArgument(std::string(op) + ": shape mismatch");
}

std::vector<Eigen::Index> strides_of(const std::vector<int>& shape) {
  std::vector<Eigen::Index> s(shape.size());
  Eigen::Index acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = acc;
    acc *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

}  // namespace

Eigen::VectorXd& Node::ensure_grad() {
  if (grad.size() != data.size()) grad = Eigen::VectorXd::Zero(data.size());
  return grad;
}

Eigen::Index numel_of(const std::vector<int>& shape) {
  Eigen::Index n = 1;
  for (int d : shape) {
    if (d <= 0) throw InvalidArgument("tensor shape: non-positive dimension");
    n *= d;
  }
  return n;
}

NodePtr alloc_node(const std::vector<int>& shape, const std::vector<Tensor>& parents) {
  std::vector<NodePtr> nodes;
  nodes.reserve(parents.size());
  for (const auto& p : parents) nodes.push_back(p.node());
  auto n = make_node(shape, std::move(nodes));
  n->data.setZero();
  return n;
}

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
  auto n = make_node(shape, {});
  n->data.setZero();
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::full(const std::vector<int>& shape, double value, bool requires_grad) {
  auto n = make_node(shape, {});
  n->data.setConstant(value);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::from_vector(const std::vector<int>& shape, const std::vector<double>& values,
                           bool requires_grad) {
  auto n = make_node(shape, {});
  if (static_cast<Eigen::Index>(values.size()) != n->numel())
    throw InvalidArgument("from_vector: value count does not match shape");
  std::copy(values.begin(), values.end(), n->data.data());
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw InvalidArgument("item: tensor is not a scalar");
  return node_->data[0];
}

const Eigen::VectorXd& Tensor::grad() const {
  if (!has_grad()) throw InvalidArgument("grad: no gradient present (run backward first)");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad.size() == node_->numel()) node_->grad.setZero();
}

// ---- elementwise ----

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  auto n = make_node(a.shape(), {a.node()});
  n->data = fwd(a.data());
  NodePtr pa = a.node();
  n->backprop = [pa, bwd](Node& self) { pa->ensure_grad() += bwd(pa->data, self.grad); };
  return Tensor(n);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto n = make_node(a.shape(), {a.node(), b.node()});
  n->data = a.data() + b.data();
  NodePtr pa = a.node(), pb = b.node();
  n->backprop = [pa, pb](Node& self) {
    pa->ensure_grad() += self.grad;
    pb->ensure_grad() += self.grad;
  };
  return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto n = make_node(a.shape(), {a.node(), b.node()});
  n->data = a.data() - b.data();
  NodePtr pa = a.node(), pb = b.node();
  n->backprop = [pa, pb](Node& self) {
    pa->ensure_grad() += self.grad;
    pb->ensure_grad() -= self.grad;
  };
  return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto n = make_node(a.shape(), {a.node(), b.node()});
  n->data = a.data().cwiseProduct(b.data());
  NodePtr pa = a.node(), pb = b.node();
  n->backprop = [pa, pb](Node& self) {
    pa->ensure_grad() += self.grad.cwiseProduct(pb->data);
    pb->ensure_grad() += self.grad.cwiseProduct(pa->data);
  };
  return Tensor(n);
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](const Eigen::VectorXd& x) { return (x.array() + s).matrix().eval(); },
      [](const Eigen::VectorXd&, const Eigen::VectorXd& g) { return g; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](const Eigen::VectorXd& x) { return (x * s).eval(); },
      [s](const Eigen::VectorXd&, const Eigen::VectorXd& g) { return (g * s).eval(); });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, [](const Eigen::VectorXd& x) { return x.cwiseProduct(x).eval(); },
      [](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
        return (2.0 * g.cwiseProduct(x)).eval();
      });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& a) {
  return unary_op(
      a,
      [](const Eigen::VectorXd& x) {
        return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); })
            .eval();
      },
      [](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
        Eigen::VectorXd local = x.unaryExpr([](double v) {
          const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
          return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
        });
        return g.cwiseProduct(local).eval();
      });
}

Tensor log_nat(const Tensor& a) {
  if ((a.data().array() <= 0.0).any())
    throw InvalidArgument("log_nat: non-positive input");
  return unary_op(
      a, [](const Eigen::VectorXd& x) { return x.array().log().matrix().eval(); },
      [](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
        return g.cwiseQuotient(x).eval();
      });
}

Tensor sqrt_clamped(const Tensor& a, double grad_clamp) {
  return unary_op(
      a,
      [](const Eigen::VectorXd& x) {
        return x.array().max(0.0).sqrt().matrix().eval();
      },
      [grad_clamp](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
        return (g.array() * 0.5 / x.array().max(grad_clamp).sqrt()).matrix().eval();
      });
}

// ---- shape ----

Tensor reshape(const Tensor& a, const std::vector<int>& shape) {
  if (numel_of(shape) != a.numel()) throw InvalidArgument("reshape: element count changes");
  auto n = make_node(shape, {a.node()});
  n->data = a.data();
  NodePtr pa = a.node();
  n->backprop = [pa](Node& self) { pa->ensure_grad() += self.grad; };
  return Tensor(n);
}

namespace {

// out-flat-index -> in-flat-index map for a permutation of axes.
std::vector<Eigen::Index> permutation_map(const std::vector<int>& in_shape,
                                          const std::vector<int>& axes) {
  const auto in_strides = strides_of(in_shape);
  std::vector<int> out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i)
    out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
  const auto out_strides = strides_of(out_shape);
  const Eigen::Index total = numel_of(out_shape);
  std::vector<Eigen::Index> map(static_cast<std::size_t>(total));
  for (Eigen::Index o = 0; o < total; ++o) {
    Eigen::Index rem = o, in_idx = 0;
    for (std::size_t d = 0; d < axes.size(); ++d) {
      const Eigen::Index coord = rem / out_strides[d];
      rem %= out_strides[d];
      in_idx += coord * in_strides[static_cast<std::size_t>(axes[d])];
    }
    map[static_cast<std::size_t>(o)] = in_idx;
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  if (axes.size() != a.shape().size()) throw InvalidArgument("permute: axis count mismatch");
  std::vector<int> seen(axes.size(), 0);
  for (int ax : axes) {
    if (ax < 0 || ax >= a.ndim() || seen[static_cast<std::size_t>(ax)]++)
      throw InvalidArgument("permute: invalid axis list");
  }
  std::vector<int> out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i)
    out_shape[i] = a.dim(axes[i]);
  auto map = std::make_shared<std::vector<Eigen::Index>>(permutation_map(a.shape(), axes));
  auto n = make_node(out_shape, {a.node()});
  for (Eigen::Index o = 0; o < n->numel(); ++o)
    n->data[o] = a.data()[(*map)[static_cast<std::size_t>(o)]];
  NodePtr pa = a.node();
  n->backprop = [pa, map](Node& self) {
    auto& g = pa->ensure_grad();
    for (Eigen::Index o = 0; o < self.numel(); ++o)
      g[(*map)[static_cast<std::size_t>(o)]] += self.grad[o];
  };
  return Tensor(n);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  const auto& base = parts.front().shape();
  if (axis < 0 || axis >= static_cast<int>(base.size()))
    throw InvalidArgument("concat: axis out of range");
  std::vector<int> out_shape = base;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.ndim() != static_cast<int>(base.size()))
      throw InvalidArgument("concat: rank mismatch");
    for (int d = 0; d < p.ndim(); ++d)
      if (d != axis && p.dim(d) != base[static_cast<std::size_t>(d)])
        throw InvalidArgument("concat: non-axis dimension mismatch");
    out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
  }

  Eigen::Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= base[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < static_cast<int>(base.size()); ++d)
    inner *= base[static_cast<std::size_t>(d)];

  std::vector<NodePtr> parent_nodes;
  for (const auto& p : parts) parent_nodes.push_back(p.node());
  auto n = make_node(out_shape, parent_nodes);

  const Eigen::Index total_axis = out_shape[static_cast<std::size_t>(axis)];
  Eigen::Index offset = 0;
  auto offsets = std::make_shared<std::vector<Eigen::Index>>();
  for (const auto& p : parts) {
    const Eigen::Index len = p.dim(axis);
    offsets->push_back(offset);
    for (Eigen::Index ou = 0; ou < outer; ++ou)
      n->data.segment(ou * total_axis * inner + offset * inner, len * inner) =
          p.data().segment(ou * len * inner, len * inner);
    offset += len;
  }

  n->backprop = [parent_nodes, offsets, outer, inner, total_axis](Node& self) {
    for (std::size_t i = 0; i < parent_nodes.size(); ++i) {
      auto& p = parent_nodes[i];
      const Eigen::Index len = p->numel() / (outer * inner);
      auto& g = p->ensure_grad();
      for (Eigen::Index ou = 0; ou < outer; ++ou)
        g.segment(ou * len * inner, len * inner) +=
            self.grad.segment(ou * total_axis * inner + (*offsets)[i] * inner, len * inner);
    }
  };
  return Tensor(n);
}

Tensor slice_axis0(const Tensor& a, int start, int length) {
  if (a.ndim() < 1 || start < 0 || length <= 0 || start + length > a.dim(0))
    throw InvalidArgument("slice_axis0: range out of bounds");
  std::vector<int> out_shape = a.shape();
  out_shape[0] = length;
  const Eigen::Index inner = a.numel() / a.dim(0);
  auto n = make_node(out_shape, {a.node()});
  n->data = a.data().segment(start * inner, length * inner);
  NodePtr pa = a.node();
  n->backprop = [pa, start, inner](Node& self) {
    pa->ensure_grad().segment(start * inner, self.numel()) += self.grad;
  };
  return Tensor(n);
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& rows) {
  if (table.ndim() != 2) throw InvalidArgument("gather_rows: table must be 2-D");
  const int r = table.dim(0), c = table.dim(1);
  for (int i : rows)
    if (i < 0 || i >= r) throw InvalidArgument("gather_rows: row index out of range");
  auto idx = std::make_shared<std::vector<int>>(rows);
  auto n = make_node({static_cast<int>(rows.size()), c}, {table.node()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    n->data.segment(static_cast<Eigen::Index>(i) * c, c) =
        table.data().segment(static_cast<Eigen::Index>(rows[i]) * c, c);
  NodePtr pt = table.node();
  n->backprop = [pt, idx, c](Node& self) {
    auto& g = pt->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i)
      g.segment(static_cast<Eigen::Index>((*idx)[i]) * c, c) +=
          self.grad.segment(static_cast<Eigen::Index>(i) * c, c);
  };
  return Tensor(n);
}

// ---- reductions ----

Tensor sum_all(const Tensor& a) {
  auto n = make_node({1}, {a.node()});
  n->data[0] = a.data().sum();
  NodePtr pa = a.node();
  n->backprop = [pa](Node& self) { pa->ensure_grad().array() += self.grad[0]; };
  return Tensor(n);
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_last(const Tensor& a) {
  if (a.ndim() < 1) throw InvalidArgument("mean_last: needs at least 1 axis");
  const int l = a.dim(a.ndim() - 1);
  std::vector<int> out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  const Eigen::Index rows = a.numel() / l;
  auto n = make_node(out_shape, {a.node()});
  for (Eigen::Index r = 0; r < rows; ++r) n->data[r] = a.data().segment(r * l, l).mean();
  NodePtr pa = a.node();
  n->backprop = [pa, l, rows](Node& self) {
    auto& g = pa->ensure_grad();
    for (Eigen::Index r = 0; r < rows; ++r)
      g.segment(r * l, l).array() += self.grad[r] / static_cast<double>(l);
  };
  return Tensor(n);
}

Tensor max_axis1(const Tensor& a) {
  if (a.ndim() != 3) throw InvalidArgument("max_axis1: expects [B, S, C]");
  const int b = a.dim(0), s = a.dim(1), c = a.dim(2);
  auto n = make_node({b, c}, {a.node()});
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(static_cast<std::size_t>(b) * c);
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      Eigen::Index best = static_cast<Eigen::Index>(bi) * s * c + ci;
      double best_v = a.data()[best];
      for (int si = 1; si < s; ++si) {
        const Eigen::Index at = (static_cast<Eigen::Index>(bi) * s + si) * c + ci;
        if (a.data()[at] > best_v) {
          best_v = a.data()[at];
          best = at;
        }
      }
      n->data[static_cast<Eigen::Index>(bi) * c + ci] = best_v;
      (*argmax)[static_cast<std::size_t>(bi) * c + ci] = best;
    }
  }
  NodePtr pa = a.node();
  n->backprop = [pa, argmax](Node& self) {
    auto& g = pa->ensure_grad();
    for (Eigen::Index i = 0; i < self.numel(); ++i)
      g[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
  };
  return Tensor(n);
}

Tensor softmax_last(const Tensor& a) {
  if (a.ndim() < 1) throw InvalidArgument("softmax_last: needs at least 1 axis");
  const int l = a.dim(a.ndim() - 1);
  const Eigen::Index rows = a.numel() / l;
  auto n = make_node(a.shape(), {a.node()});
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto row = a.data().segment(r * l, l);
    Eigen::ArrayXd e = (row.array() - row.maxCoeff()).exp();
    n->data.segment(r * l, l) = (e / e.sum()).matrix();
  }
  NodePtr pa = a.node();
  n->backprop = [pa, l, rows](Node& self) {
    auto& g = pa->ensure_grad();
    for (Eigen::Index r = 0; r < rows; ++r) {
      auto y = self.data.segment(r * l, l);
      auto dy = self.grad.segment(r * l, l);
      const double dot = y.dot(dy);
      g.segment(r * l, l).array() += y.array() * (dy.array() - dot);
    }
  };
  return Tensor(n);
}

// ---- linear algebra ----

Tensor bias_add(const Tensor& a, const Tensor& bias) {
  if (bias.ndim() != 1) throw InvalidArgument("bias_add: bias must be 1-D");
  const int c = bias.dim(0);
  if (a.dim(a.ndim() - 1) != c) throw InvalidArgument("bias_add: trailing dim mismatch");
  const Eigen::Index rows = a.numel() / c;
  auto n = make_node(a.shape(), {a.node(), bias.node()});
  for (Eigen::Index r = 0; r < rows; ++r)
    n->data.segment(r * c, c) = a.data().segment(r * c, c) + bias.data();
  NodePtr pa = a.node(), pb = bias.node();
  n->backprop = [pa, pb, c, rows](Node& self) {
    pa->ensure_grad() += self.grad;
    auto& gb = pb->ensure_grad();
    for (Eigen::Index r = 0; r < rows; ++r) gb += self.grad.segment(r * c, c);
  };
  return Tensor(n);
}

namespace {

void gemm_into(double* out, const double* a, const double* b, Eigen::Index m, Eigen::Index k,
               Eigen::Index n, bool trans_a, bool trans_b, Eigen::Index a_rows,
               Eigen::Index a_cols, Eigen::Index b_rows, Eigen::Index b_cols, bool accumulate) {
  ConstMatMap ma(a, a_rows, a_cols), mb(b, b_rows, b_cols);
  MatMap mo(out, m, n);
  auto compute = [&](const auto& l, const auto& r) {
    if (accumulate)
      mo.noalias() += l * r;
    else
      mo.noalias() = l * r;
  };
  (void)k;
  if (!trans_a && !trans_b)
    compute(ma, mb);
  else if (trans_a && !trans_b)
    compute(ma.transpose(), mb);
  else if (!trans_a && trans_b)
    compute(ma, mb.transpose());
  else
    compute(ma.transpose(), mb.transpose());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw InvalidArgument("matmul: expects 2-D operands");
  const Eigen::Index m = trans_a ? a.dim(1) : a.dim(0);
  const Eigen::Index k = trans_a ? a.dim(0) : a.dim(1);
  const Eigen::Index kb = trans_b ? b.dim(1) : b.dim(0);
  const Eigen::Index n_cols = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) throw InvalidArgument("matmul: inner dimension mismatch");

  auto n = make_node({static_cast<int>(m), static_cast<int>(n_cols)}, {a.node(), b.node()});
  gemm_into(n->data.data(), a.data().data(), b.data().data(), m, k, n_cols, trans_a, trans_b,
            a.dim(0), a.dim(1), b.dim(0), b.dim(1), false);

  NodePtr pa = a.node(), pb = b.node();
  n->backprop = [pa, pb, m, k, n_cols, trans_a, trans_b](Node& self) {
    ConstMatMap gc(self.grad.data(), m, n_cols);
    ConstMatMap ma(pa->data.data(), pa->shape[0], pa->shape[1]);
    ConstMatMap mb(pb->data.data(), pb->shape[0], pb->shape[1]);
    MatMap ga(pa->ensure_grad().data(), pa->shape[0], pa->shape[1]);
    MatMap gb(pb->ensure_grad().data(), pb->shape[0], pb->shape[1]);
    (void)k;
    if (!trans_a) {
      if (!trans_b)
        ga.noalias() += gc * mb.transpose();
      else
        ga.noalias() += gc * mb;
    } else {
      if (!trans_b)
        ga.noalias() += mb * gc.transpose();
      else
        ga.noalias() += mb.transpose() * gc.transpose();
    }
    if (!trans_b) {
      if (!trans_a)
        gb.noalias() += ma.transpose() * gc;
      else
        gb.noalias() += ma * gc;
    } else {
      if (!trans_a)
        gb.noalias() += gc.transpose() * ma;
      else
        gb.noalias() += gc.transpose() * ma.transpose();
    }
  };
  return Tensor(n);
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.ndim() != 3 || b.ndim() != 3) throw InvalidArgument("bmm: expects 3-D operands");
  if (a.dim(0) != b.dim(0)) throw InvalidArgument("bmm: batch dimension mismatch");
  const Eigen::Index batch = a.dim(0);
  const Eigen::Index ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const Eigen::Index m = trans_a ? ac : ar;
  const Eigen::Index k = trans_a ? ar : ac;
  const Eigen::Index kb = trans_b ? bc : br;
  const Eigen::Index n_cols = trans_b ? br : bc;
  if (k != kb) throw InvalidArgument("bmm: inner dimension mismatch");

  auto n = make_node({static_cast<int>(batch), static_cast<int>(m), static_cast<int>(n_cols)},
                     {a.node(), b.node()});
  for (Eigen::Index i = 0; i < batch; ++i)
    gemm_into(n->data.data() + i * m * n_cols, a.data().data() + i * ar * ac,
              b.data().data() + i * br * bc, m, k, n_cols, trans_a, trans_b, ar, ac, br, bc,
              false);

  NodePtr pa = a.node(), pb = b.node();
  n->backprop = [pa, pb, batch, ar, ac, br, bc, m, n_cols, trans_a, trans_b](Node& self) {
    auto& gad = pa->ensure_grad();
    auto& gbd = pb->ensure_grad();
    for (Eigen::Index i = 0; i < batch; ++i) {
      ConstMatMap gc(self.grad.data() + i * m * n_cols, m, n_cols);
      ConstMatMap ma(pa->data.data() + i * ar * ac, ar, ac);
      ConstMatMap mb(pb->data.data() + i * br * bc, br, bc);
      MatMap ga(gad.data() + i * ar * ac, ar, ac);
      MatMap gb(gbd.data() + i * br * bc, br, bc);
      if (!trans_a) {
        if (!trans_b)
          ga.noalias() += gc * mb.transpose();
        else
          ga.noalias() += gc * mb;
      } else {
        if (!trans_b)
          ga.noalias() += mb * gc.transpose();
        else
          ga.noalias() += mb.transpose() * gc.transpose();
      }
      if (!trans_b) {
        if (!trans_a)
          gb.noalias() += ma.transpose() * gc;
        else
          gb.noalias() += ma * gc;
      } else {
        if (!trans_a)
          gb.noalias() += gc.transpose() * ma;
        else
          gb.noalias() += gc.transpose() * ma.transpose();
      }
    }
  };
  return Tensor(n);
}

Tensor linear_rowstable(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() < 2) throw InvalidArgument("linear_rowstable: x must be at least 2-D");
  if (w.ndim() != 2 || b.ndim() != 1 || b.dim(0) != w.dim(0))
    throw InvalidArgument("linear_rowstable: weight must be [out, in] with bias [out]");
  const Eigen::Index in = x.dim(x.ndim() - 1), out = w.dim(0);
  if (w.dim(1) != in) throw InvalidArgument("linear_rowstable: trailing dim mismatch");
  const Eigen::Index rows = x.numel() / in;

  std::vector<int> out_shape = x.shape();
  out_shape.back() = static_cast<int>(out);
  auto n = alloc_node(out_shape, {x, w, b});

  // One plain sequential dot per output element: every row runs the exact
  // same instruction sequence, so the result cannot depend on where the row
  // sits in the batch (blocked GEMM kernels do not give that guarantee).
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  const double* bd = b.data().data();
  double* yd = n->data.data();
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double* xr = xd + r * in;
    for (Eigen::Index j = 0; j < out; ++j) {
      const double* wj = wd + j * in;
      double acc = bd[j];
      for (Eigen::Index k = 0; k < in; ++k) acc += xr[k] * wj[k];
      yd[r * out + j] = acc;
    }
  }

  NodePtr px = x.node(), pw = w.node(), pb = b.node();
  n->backprop = [px, pw, pb, rows, in, out](Node& self) {
    ConstMatMap gc(self.grad.data(), rows, out);
    ConstMatMap mx(px->data.data(), rows, in);
    ConstMatMap mw(pw->data.data(), out, in);
    MatMap gx(px->ensure_grad().data(), rows, in);
    MatMap gw(pw->ensure_grad().data(), out, in);
    Eigen::Map<Eigen::VectorXd> gb(pb->ensure_grad().data(), out);
    gx.noalias() += gc * mw;
    gw.noalias() += gc.transpose() * mx;
    gb += gc.colwise().sum().transpose();
  };
  return Tensor(n);
}

// ---- structured ----

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  if (input.ndim() != 3 || weight.ndim() != 4 || bias.ndim() != 1)
    throw InvalidArgument("conv2d: expects input [C,H,W], weight [O,C,kh,kw], bias [O]");
  if (stride < 1 || padding < 0) throw InvalidArgument("conv2d: bad stride/padding");
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin) throw InvalidArgument("conv2d: channel mismatch");
  if (bias.dim(0) != cout) throw InvalidArgument("conv2d: bias size mismatch");
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw InvalidArgument("conv2d: empty output");

  const Eigen::Index ckk = static_cast<Eigen::Index>(cin) * kh * kw;
  const Eigen::Index opix = static_cast<Eigen::Index>(oh) * ow;
  auto cols = std::make_shared<Eigen::MatrixXd>(ckk, opix);  // column-major scratch
  cols->setZero();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index col = static_cast<Eigen::Index>(oy) * ow + ox;
      Eigen::Index row = 0;
      for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - padding + ky;
          for (int kx = 0; kx < kw; ++kx, ++row) {
            const int ix = ox * stride - padding + kx;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w)
              (*cols)(row, col) = input.data()[(static_cast<Eigen::Index>(ci) * h + iy) * w + ix];
          }
        }
      }
    }
  }

  auto n = make_node({cout, oh, ow}, {input.node(), weight.node(), bias.node()});
  {
    ConstMatMap wmat(weight.data().data(), cout, ckk);
    MatMap omat(n->data.data(), cout, opix);
    omat.noalias() = wmat * (*cols);
    for (int co = 0; co < cout; ++co) omat.row(co).array() += bias.data()[co];
  }

  NodePtr pi = input.node(), pw = weight.node(), pb = bias.node();
  n->backprop = [pi, pw, pb, cols, cin, h, w, cout, kh, kw, oh, ow, stride, padding,
                 ckk, opix](Node& self) {
    ConstMatMap gout(self.grad.data(), cout, opix);
    ConstMatMap wmat(pw->data.data(), cout, ckk);
    MatMap gw(pw->ensure_grad().data(), cout, ckk);
    gw.noalias() += gout * cols->transpose();
    auto& gb = pb->ensure_grad();
    for (int co = 0; co < cout; ++co) gb[co] += gout.row(co).sum();

    Eigen::MatrixXd gcols(ckk, opix);
    gcols.noalias() = wmat.transpose() * gout;
    auto& gi = pi->ensure_grad();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index col = static_cast<Eigen::Index>(oy) * ow + ox;
        Eigen::Index row = 0;
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - padding + ky;
            for (int kx = 0; kx < kw; ++kx, ++row) {
              const int ix = ox * stride - padding + kx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                gi[(static_cast<Eigen::Index>(ci) * h + iy) * w + ix] += gcols(row, col);
            }
          }
        }
      }
    }
  };
  return Tensor(n);
}

Tensor upsample_bilinear(const Tensor& input, int out_h, int out_w) {
  if (input.ndim() != 3) throw InvalidArgument("upsample_bilinear: expects [C,H,W]");
  if (out_h < 1 || out_w < 1) throw InvalidArgument("upsample_bilinear: bad target size");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);

  struct Tap {
    int i0, i1;
    double w0, w1;
  };
  auto taps_for = [](int in_size, int out_size) {
    std::vector<Tap> taps(static_cast<std::size_t>(out_size));
    const double scale = static_cast<double>(in_size) / out_size;
    for (int o = 0; o < out_size; ++o) {
      double s = (o + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in_size - 1));
      const int i0 = static_cast<int>(std::floor(s));
      const int i1 = std::min(i0 + 1, in_size - 1);
      const double f = s - i0;
      taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
    }
    return taps;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps_for(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps_for(w, out_w));

  auto n = make_node({c, out_h, out_w}, {input.node()});
  for (int ci = 0; ci < c; ++ci) {
    const Eigen::Index base_in = static_cast<Eigen::Index>(ci) * h * w;
    const Eigen::Index base_out = static_cast<Eigen::Index>(ci) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& a = (*ty)[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& b = (*tx)[static_cast<std::size_t>(ox)];
        n->data[base_out + static_cast<Eigen::Index>(oy) * out_w + ox] =
            a.w0 * (b.w0 * input.data()[base_in + static_cast<Eigen::Index>(a.i0) * w + b.i0] +
                    b.w1 * input.data()[base_in + static_cast<Eigen::Index>(a.i0) * w + b.i1]) +
            a.w1 * (b.w0 * input.data()[base_in + static_cast<Eigen::Index>(a.i1) * w + b.i0] +
                    b.w1 * input.data()[base_in + static_cast<Eigen::Index>(a.i1) * w + b.i1]);
      }
    }
  }
  NodePtr pi = input.node();
  n->backprop = [pi, ty, tx, c, h, w, out_h, out_w](Node& self) {
    auto& g = pi->ensure_grad();
    for (int ci = 0; ci < c; ++ci) {
      const Eigen::Index base_in = static_cast<Eigen::Index>(ci) * h * w;
      const Eigen::Index base_out = static_cast<Eigen::Index>(ci) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const Tap& a = (*ty)[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const Tap& b = (*tx)[static_cast<std::size_t>(ox)];
          const double go = self.grad[base_out + static_cast<Eigen::Index>(oy) * out_w + ox];
          g[base_in + static_cast<Eigen::Index>(a.i0) * w + b.i0] += go * a.w0 * b.w0;
          g[base_in + static_cast<Eigen::Index>(a.i0) * w + b.i1] += go * a.w0 * b.w1;
          g[base_in + static_cast<Eigen::Index>(a.i1) * w + b.i0] += go * a.w1 * b.w0;
          g[base_in + static_cast<Eigen::Index>(a.i1) * w + b.i1] += go * a.w1 * b.w1;
        }
      }
    }
  };
  return Tensor(n);
}

Tensor layer_norm(const Tensor& x, const Tensor& weight, const Tensor& bias, double eps) {
  if (weight.ndim() != 1 || bias.ndim() != 1)
    throw InvalidArgument("layer_norm: weight/bias must be 1-D");
  const int l = x.dim(x.ndim() - 1);
  if (weight.dim(0) != l || bias.dim(0) != l)
    throw InvalidArgument("layer_norm: affine size mismatch");
  const Eigen::Index rows = x.numel() / l;

  auto xhat = std::make_shared<Eigen::VectorXd>(x.numel());
  auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
  auto n = make_node(x.shape(), {x.node(), weight.node(), bias.node()});
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto row = x.data().segment(r * l, l);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    xhat->segment(r * l, l) = ((row.array() - mu) * inv).matrix();
    n->data.segment(r * l, l) =
        (xhat->segment(r * l, l).array() * weight.data().array() + bias.data().array()).matrix();
  }

  NodePtr px = x.node(), pw = weight.node(), pb = bias.node();
  n->backprop = [px, pw, pb, xhat, inv_std, l, rows](Node& self) {
    auto& gx = px->ensure_grad();
    auto& gw = pw->ensure_grad();
    auto& gb = pb->ensure_grad();
    for (Eigen::Index r = 0; r < rows; ++r) {
      auto dy = self.grad.segment(r * l, l);
      auto xh = xhat->segment(r * l, l);
      gw += dy.cwiseProduct(xh);
      gb += dy;
      Eigen::ArrayXd dxhat = dy.array() * pw->data.array();
      const double mean_dxhat = dxhat.mean();
      const double mean_dxhat_xhat = (dxhat * xh.array()).mean();
      gx.segment(r * l, l).array() +=
          (*inv_std)[r] * (dxhat - mean_dxhat - xh.array() * mean_dxhat_xhat);
    }
  };
  return Tensor(n);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const Tensor& mask) {
  const bool batched = q.ndim() == 3;
  if ((k.ndim() == 3) != batched || (v.ndim() == 3) != batched)
    throw InvalidArgument("attention: mixed 2-D/3-D operands");
  Tensor q3 = batched ? q : reshape(q, {1, q.dim(0), q.dim(1)});
  Tensor k3 = batched ? k : reshape(k, {1, k.dim(0), k.dim(1)});
  Tensor v3 = batched ? v : reshape(v, {1, v.dim(0), v.dim(1)});

  const int b = q3.dim(0), nq = q3.dim(1), d = q3.dim(2), nk = k3.dim(1);
  if (k3.dim(0) != b || v3.dim(0) != b || k3.dim(2) != d || v3.dim(1) != nk || v3.dim(2) != d)
    throw InvalidArgument("attention: operand shapes disagree");
  if (heads < 1 || d % heads != 0) throw InvalidArgument("attention: heads must divide dim");
  if (mask.defined() && (mask.ndim() != 2 || mask.dim(0) != nq || mask.dim(1) != nk))
    throw InvalidArgument("attention: mask must be [Nq, Nk]");
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Fused per-(batch, head) kernel: head slices are strided column blocks of
  // the row-major operands, so no reshuffling is needed on either pass. The
  // softmax probabilities are cached for the backward GEMMs.
  using Stride = Eigen::OuterStride<>;
  using CMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                              Eigen::RowMajor>,
                          0, Stride>;
  using MMap =
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                 Stride>;
  auto head_block = [d, dh](const double* base, int bi, int h, int rows) {
    return CMap(base + static_cast<Eigen::Index>(bi) * rows * d + h * dh, rows, dh, Stride(d));
  };

  std::vector<Tensor> parents = {q3, k3, v3};
  if (mask.defined()) parents.push_back(mask);
  auto n = alloc_node({b, nq, d}, parents);

  auto probs = std::make_shared<std::vector<Eigen::MatrixXd>>();
  probs->reserve(static_cast<std::size_t>(b) * heads);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      mask_map(mask.defined() ? mask.data().data() : nullptr, mask.defined() ? nq : 0,
               mask.defined() ? nk : 0);
  for (int bi = 0; bi < b; ++bi) {
    for (int h = 0; h < heads; ++h) {
      CMap qh = head_block(q3.data().data(), bi, h, nq);
      CMap kh = head_block(k3.data().data(), bi, h, nk);
      CMap vh = head_block(v3.data().data(), bi, h, nk);
      Eigen::MatrixXd p(nq, nk);
      p.noalias() = scale * (qh * kh.transpose());
      if (mask.defined()) p += mask_map;
      for (Eigen::Index r = 0; r < nq; ++r) {
        auto row = p.row(r);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      MMap oh(n->data.data() + static_cast<Eigen::Index>(bi) * nq * d + h * dh, nq, dh,
              Stride(d));
      oh.noalias() = p * vh;
      probs->push_back(std::move(p));
    }
  }

  NodePtr pq = q3.node(), pk = k3.node(), pv = v3.node();
  NodePtr pm = mask.defined() ? mask.node() : nullptr;
  n->backprop = [pq, pk, pv, pm, probs, b, heads, nq, nk, d, dh, scale](Node& self) {
    auto& gq = pq->ensure_grad();
    auto& gk = pk->ensure_grad();
    auto& gv = pv->ensure_grad();
    Eigen::VectorXd* gm = pm ? &pm->ensure_grad() : nullptr;
    using Stride = Eigen::OuterStride<>;
    using CMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                Eigen::RowMajor>,
                            0, Stride>;
    using MMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>,
                            0, Stride>;
    for (int bi = 0; bi < b; ++bi) {
      for (int h = 0; h < heads; ++h) {
        const Eigen::MatrixXd& p = (*probs)[static_cast<std::size_t>(bi) * heads + h];
        CMap qh(pq->data.data() + static_cast<Eigen::Index>(bi) * nq * d + h * dh, nq, dh,
                Stride(d));
        CMap kh(pk->data.data() + static_cast<Eigen::Index>(bi) * nk * d + h * dh, nk, dh,
                Stride(d));
        CMap vh(pv->data.data() + static_cast<Eigen::Index>(bi) * nk * d + h * dh, nk, dh,
                Stride(d));
        CMap go(self.grad.data() + static_cast<Eigen::Index>(bi) * nq * d + h * dh, nq, dh,
                Stride(d));
        MMap gqh(gq.data() + static_cast<Eigen::Index>(bi) * nq * d + h * dh, nq, dh,
                 Stride(d));
        MMap gkh(gk.data() + static_cast<Eigen::Index>(bi) * nk * d + h * dh, nk, dh,
                 Stride(d));
        MMap gvh(gv.data() + static_cast<Eigen::Index>(bi) * nk * d + h * dh, nk, dh,
                 Stride(d));

        gvh.noalias() += p.transpose() * go;
        Eigen::MatrixXd dp(nq, nk);
        dp.noalias() = go * vh.transpose();
        // softmax rows: ds = p .* (dp - rowsum(dp .* p))
        Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
        Eigen::MatrixXd ds = p.array() * (dp.colwise() - rowdot).array();
        if (gm) {
          Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
              gmask(gm->data(), nq, nk);
          gmask += ds;
        }
        gqh.noalias() += scale * (ds * kh);
        gkh.noalias() += scale * (ds.transpose() * qh);
      }
    }
  };

  Tensor out(n);
  return batched ? out : reshape(out, {nq, d});
}

// ---- backward ----

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    throw InvalidArgument("backward: root must be a one-element tensor");

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* child = node->parents[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().setConstant(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->requires_grad) continue;  // no ancestor needs gradient either
    if (node->backprop && node->grad.size() == node->data.size()) node->backprop(*node);
  }
}

}  // namespace deltar::nn
