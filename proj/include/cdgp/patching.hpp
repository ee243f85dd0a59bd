#pragma once

#include "cdgp/common.hpp"
#include "cdgp/rng.hpp"

#include <vector>

namespace cdgp {

// Patch grid over an image (or a 1-D signal when image_h == 1). Images are
// stored flattened row-major as (y, x, channel).
struct PatchGeometry {
  Index image_w = 0;
  Index image_h = 0;
  Index channels = 1;
  Index patch_w = 0;
  Index patch_h = 0;
  Index stride = 1;

  static PatchGeometry image(Index w, Index h, Index c, Index pw, Index ph,
                             Index stride);
  // Hidden-layer windows: a D-dimensional representation as a 1-D signal.
  static PatchGeometry signal(Index length, Index window, Index stride);

  Index grid_w() const { return (image_w - patch_w) / stride + 1; }
  Index grid_h() const { return (image_h - patch_h) / stride + 1; }
  Index patch_count() const { return grid_w() * grid_h(); }
  Index patch_dim() const { return patch_w * patch_h * channels; }
  Index flat_dim() const { return image_w * image_h * channels; }

  void validate() const;
  bool operator==(const PatchGeometry&) const = default;
};

struct PatchSubset {
  std::vector<int> indices;  // sorted, distinct, in [0, P)
  std::uint64_t draw_seed = 0;

  int size() const { return static_cast<int>(indices.size()); }
};

// Rows of `flat` are flattened images matching `geom`; returns the stacked
// patch matrix of shape (B * |subset|) x patch_dim, patches in ascending
// patch order. An empty `subset` means all P patches.
Mat extract_patches(const Mat& flat, const PatchGeometry& geom,
                    const std::vector<int>* subset = nullptr);

// Adjoint of extract_patches: accumulates patch-space gradients back onto the
// flattened rows (overlapping windows sum).
Mat scatter_patches(const Mat& dpatches, Index batch, const PatchGeometry& geom,
                    const std::vector<int>* subset = nullptr);

// k distinct indices drawn uniformly without replacement from {0,...,P-1}.
PatchSubset draw_subset(Index patch_count, Index k, Rng rng);

}  // namespace cdgp
