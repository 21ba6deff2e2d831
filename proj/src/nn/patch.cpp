#include "deltar/nn/patch.hpp"

#include <cmath>

namespace deltar::nn {

namespace {

struct SampleTaps {
  Eigen::Index cell[4];
  double w[4];
};

// Bilinear taps for the P x P sample points covering `rect`. Sample (i, j)
// sits at the center of cell (i, j) of a uniform P x P tiling of the rect;
// map cell (r, c) has its center at (c + 0.5, r + 0.5).
std::vector<SampleTaps> rect_taps(const Rect& rect, int p, int h, int w) {
  if (p < 1) throw InvalidArgument("patch: P must be positive");
  if (rect.width() < 0.0 || rect.height() < 0.0)
    throw InvalidArgument("patch: rect is inverted");
  if (rect.x_max <= 0.0 || rect.y_max <= 0.0 || rect.x_min >= static_cast<double>(w) ||
      rect.y_min >= static_cast<double>(h))
    throw PatchUndefined("patch rect does not intersect the feature map");

  std::vector<SampleTaps> taps(static_cast<std::size_t>(p) * p);
  for (int i = 0; i < p; ++i) {
    const double v = rect.y_min + (i + 0.5) * rect.height() / p;
    const double sy = std::clamp(v - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int j = 0; j < p; ++j) {
      const double u = rect.x_min + (j + 0.5) * rect.width() / p;
      const double sx = std::clamp(u - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      SampleTaps& t = taps[static_cast<std::size_t>(i) * p + j];
      t.cell[0] = static_cast<Eigen::Index>(y0) * w + x0;
      t.cell[1] = static_cast<Eigen::Index>(y0) * w + x1;
      t.cell[2] = static_cast<Eigen::Index>(y1) * w + x0;
      t.cell[3] = static_cast<Eigen::Index>(y1) * w + x1;
      t.w[0] = (1.0 - fy) * (1.0 - fx);
      t.w[1] = (1.0 - fy) * fx;
      t.w[2] = fy * (1.0 - fx);
      t.w[3] = fy * fx;
    }
  }
  return taps;
}

using TapTable = std::vector<std::vector<SampleTaps>>;  // [zone][sample]

std::shared_ptr<TapTable> build_taps(const std::vector<Rect>& rects, int p, int h, int w) {
  auto table = std::make_shared<TapTable>();
  table->reserve(rects.size());
  for (const auto& r : rects) table->push_back(rect_taps(r, p, h, w));
  return table;
}

}  // namespace

Tensor gather_patches(const Tensor& map, const std::vector<Rect>& rects, int p) {
  if (map.ndim() != 3) throw InvalidArgument("gather_patches: map must be [C, H, W]");
  if (rects.empty()) throw InvalidArgument("gather_patches: no rects");
  const int c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  auto taps = build_taps(rects, p, h, w);
  const int z = static_cast<int>(rects.size()), pp = p * p;

  auto n = alloc_node({z, pp, c}, {map});
  for (int zi = 0; zi < z; ++zi) {
    for (int k = 0; k < pp; ++k) {
      const SampleTaps& t = (*taps)[static_cast<std::size_t>(zi)][static_cast<std::size_t>(k)];
      double* out = n->data.data() + (static_cast<Eigen::Index>(zi) * pp + k) * c;
      for (int ci = 0; ci < c; ++ci) {
        const double* src = map.data().data() + ci * plane;
        out[ci] = t.w[0] * src[t.cell[0]] + t.w[1] * src[t.cell[1]] + t.w[2] * src[t.cell[2]] +
                  t.w[3] * src[t.cell[3]];
      }
    }
  }
  NodePtr pm = map.node();
  n->backprop = [pm, taps, z, pp, c, plane](Node& self) {
    auto& g = pm->ensure_grad();
    for (int zi = 0; zi < z; ++zi) {
      for (int k = 0; k < pp; ++k) {
        const SampleTaps& t = (*taps)[static_cast<std::size_t>(zi)][static_cast<std::size_t>(k)];
        const double* go = self.grad.data() + (static_cast<Eigen::Index>(zi) * pp + k) * c;
        for (int ci = 0; ci < c; ++ci) {
          double* dst = g.data() + ci * plane;
          dst[t.cell[0]] += t.w[0] * go[ci];
          dst[t.cell[1]] += t.w[1] * go[ci];
          dst[t.cell[2]] += t.w[2] * go[ci];
          dst[t.cell[3]] += t.w[3] * go[ci];
        }
      }
    }
  };
  return Tensor(n);
}

Tensor interpolate_patch(const Tensor& map, const Rect& rect, int p) {
  Tensor batched = gather_patches(map, {rect}, p);
  return reshape(batched, {p * p, map.dim(0)});
}

Tensor scatter_patches(const Tensor& patches, const std::vector<Rect>& rects, int p,
                       const Tensor& base) {
  if (base.ndim() != 3) throw InvalidArgument("scatter_patches: base must be [C, H, W]");
  const int c = base.dim(0), h = base.dim(1), w = base.dim(2);
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  const int z = static_cast<int>(rects.size()), pp = p * p;
  if (patches.ndim() != 3 || patches.dim(0) != z || patches.dim(1) != pp ||
      patches.dim(2) != c)
    throw InvalidArgument("scatter_patches: patches do not match the rect set");
  auto taps = build_taps(rects, p, h, w);

  auto den = std::make_shared<Eigen::VectorXd>(Eigen::VectorXd::Zero(plane));
  for (const auto& zone : *taps)
    for (const auto& t : zone)
      for (int q = 0; q < 4; ++q) (*den)[t.cell[q]] += t.w[q];

  auto n = alloc_node(base.shape(), {patches, base});
  // numerator accumulation, then normalize or fall back to base
  for (int zi = 0; zi < z; ++zi) {
    for (int k = 0; k < pp; ++k) {
      const SampleTaps& t = (*taps)[static_cast<std::size_t>(zi)][static_cast<std::size_t>(k)];
      const double* src = patches.data().data() + (static_cast<Eigen::Index>(zi) * pp + k) * c;
      for (int ci = 0; ci < c; ++ci) {
        double* dst = n->data.data() + ci * plane;
        dst[t.cell[0]] += t.w[0] * src[ci];
        dst[t.cell[1]] += t.w[1] * src[ci];
        dst[t.cell[2]] += t.w[2] * src[ci];
        dst[t.cell[3]] += t.w[3] * src[ci];
      }
    }
  }
  for (Eigen::Index cell = 0; cell < plane; ++cell) {
    for (int ci = 0; ci < c; ++ci) {
      double& v = n->data[ci * plane + cell];
      v = (*den)[cell] > 0.0 ? v / (*den)[cell] : base.data()[ci * plane + cell];
    }
  }

  NodePtr pp_node = patches.node(), pb = base.node();
  n->backprop = [pp_node, pb, taps, den, z, pp, c, plane](Node& self) {
    auto& gp = pp_node->ensure_grad();
    for (int zi = 0; zi < z; ++zi) {
      for (int k = 0; k < pp; ++k) {
        const SampleTaps& t = (*taps)[static_cast<std::size_t>(zi)][static_cast<std::size_t>(k)];
        double* dst = gp.data() + (static_cast<Eigen::Index>(zi) * pp + k) * c;
        for (int ci = 0; ci < c; ++ci) {
          const double* go = self.grad.data() + ci * plane;
          for (int q = 0; q < 4; ++q)
            if ((*den)[t.cell[q]] > 0.0) dst[ci] += t.w[q] / (*den)[t.cell[q]] * go[t.cell[q]];
        }
      }
    }
    auto& gb = pb->ensure_grad();
    for (Eigen::Index cell = 0; cell < plane; ++cell)
      if (!((*den)[cell] > 0.0))
        for (int ci = 0; ci < c; ++ci) gb[ci * plane + cell] += self.grad[ci * plane + cell];
  };
  return Tensor(n);
}

std::vector<bool> patch_support_mask(const Rect& rect, int p, int h, int w) {
  std::vector<bool> mask(static_cast<std::size_t>(h) * w, false);
  for (const auto& t : rect_taps(rect, p, h, w))
    for (int q = 0; q < 4; ++q)
      if (t.w[q] > 0.0) mask[static_cast<std::size_t>(t.cell[q])] = true;
  return mask;
}

}  // namespace deltar::nn
