#pragma once

#include <vector>

#include "deltar/geometry.hpp"
#include "deltar/nn/tensor.hpp"

namespace deltar::nn {

/// Where one zone's measurement lands on each pyramid level, in float
/// feature-cell coordinates (cell (r,c) spans [c, c+1] x [r, r+1]).
struct PatchCorrespondence {
  int row = 0, col = 0;
  std::vector<Rect> rect_at_level;  // parallel to the config's level list
};

/// Bilinear read of a P x P grid of points covering `rect` (cell centers of
/// a uniform P x P tiling of the rect). Border-clamped; differentiable in
/// `map`. map [C, H, W] -> [P*P, C].
/// Throws PatchUndefined when the rect lies entirely outside the map.
Tensor interpolate_patch(const Tensor& map, const Rect& rect, int p);

/// All zones at once: [Z, P*P, C] with one rect per zone.
Tensor gather_patches(const Tensor& map, const std::vector<Rect>& rects, int p);

/// Transpose of gather_patches with per-cell weight normalization: every map
/// cell touched by at least one patch sample becomes the weight-normalized
/// sum of the contributions; untouched cells keep `base` values.
/// patches [Z, P*P, C], base [C, H, W] -> [C, H, W].
Tensor scatter_patches(const Tensor& patches, const std::vector<Rect>& rects, int p,
                       const Tensor& base);

/// Cells (row-major, H*W) that scatter_patches would overwrite for this rect.
std::vector<bool> patch_support_mask(const Rect& rect, int p, int h, int w);

}  // namespace deltar::nn
