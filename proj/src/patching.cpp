#include "cdgp/patching.hpp"

#include <algorithm>
#include <numeric>

namespace cdgp {

PatchGeometry PatchGeometry::image(Index w, Index h, Index c, Index pw, Index ph,
                                   Index stride) {
  PatchGeometry g{w, h, c, pw, ph, stride};
  g.validate();
  return g;
}

PatchGeometry PatchGeometry::signal(Index length, Index window, Index stride) {
  PatchGeometry g{length, 1, 1, window, 1, stride};
  g.validate();
  return g;
}

void PatchGeometry::validate() const {
  if (image_w <= 0 || image_h <= 0 || channels <= 0)
    throw GeometryMismatch("image dimensions must be positive");
  if (patch_w <= 0 || patch_h <= 0)
    throw GeometryMismatch("patch dimensions must be positive");
  if (stride < 1) throw GeometryMismatch("stride must be >= 1");
  if (patch_w > image_w || patch_h > image_h)
    throw GeometryMismatch("patch does not fit inside the image");
}

Mat extract_patches(const Mat& flat, const PatchGeometry& geom,
                    const std::vector<int>* subset) {
  geom.validate();
  if (flat.cols() != geom.flat_dim())
    throw GeometryMismatch("row length " + std::to_string(flat.cols()) +
                           " does not match geometry dim " +
                           std::to_string(geom.flat_dim()));
  const Index p_total = geom.patch_count();
  const Index gw = geom.grid_w();
  const Index d = geom.patch_dim();
  const Index c = geom.channels;
  const Index row_stride = geom.image_w * c;

  std::vector<int> all;
  const std::vector<int>* ids = subset;
  if (!ids) {
    all.resize(p_total);
    std::iota(all.begin(), all.end(), 0);
    ids = &all;
  }
  for (int p : *ids)
    if (p < 0 || p >= p_total)
      throw GeometryMismatch("patch index out of range");

  const Index np = static_cast<Index>(ids->size());
  Mat out(flat.rows() * np, d);
  for (Index n = 0; n < flat.rows(); ++n) {
    const double* img = flat.row(n).data();
    for (Index s = 0; s < np; ++s) {
      const int p = (*ids)[s];
      const Index gy = p / gw;
      const Index gx = p % gw;
      const Index y0 = gy * geom.stride;
      const Index x0 = gx * geom.stride;
      double* dst = out.row(n * np + s).data();
      for (Index py = 0; py < geom.patch_h; ++py) {
        const double* src = img + (y0 + py) * row_stride + x0 * c;
        const Index len = geom.patch_w * c;
        std::copy(src, src + len, dst);
        dst += len;
      }
    }
  }
  return out;
}

Mat scatter_patches(const Mat& dpatches, Index batch, const PatchGeometry& geom,
                    const std::vector<int>* subset) {
  geom.validate();
  const Index p_total = geom.patch_count();
  const Index gw = geom.grid_w();
  const Index c = geom.channels;
  const Index row_stride = geom.image_w * c;

  std::vector<int> all;
  const std::vector<int>* ids = subset;
  if (!ids) {
    all.resize(p_total);
    std::iota(all.begin(), all.end(), 0);
    ids = &all;
  }
  const Index np = static_cast<Index>(ids->size());
  if (dpatches.rows() != batch * np || dpatches.cols() != geom.patch_dim())
    throw GeometryMismatch("scatter_patches: shape mismatch");

  Mat out = Mat::Zero(batch, geom.flat_dim());
  for (Index n = 0; n < batch; ++n) {
    double* img = out.row(n).data();
    for (Index s = 0; s < np; ++s) {
      const int p = (*ids)[s];
      const Index gy = p / gw;
      const Index gx = p % gw;
      const Index y0 = gy * geom.stride;
      const Index x0 = gx * geom.stride;
      const double* src = dpatches.row(n * np + s).data();
      for (Index py = 0; py < geom.patch_h; ++py) {
        double* dst = img + (y0 + py) * row_stride + x0 * c;
        const Index len = geom.patch_w * c;
        for (Index k = 0; k < len; ++k) dst[k] += src[k];
        src += len;
      }
    }
  }
  return out;
}

PatchSubset draw_subset(Index patch_count, Index k, Rng rng) {
  if (k < 1 || k > patch_count)
    throw InvalidSize("subset size " + std::to_string(k) + " outside [1, " +
                      std::to_string(patch_count) + "]");
  std::vector<int> pool(patch_count);
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates: the first k entries end up a uniform sample.
  for (Index i = 0; i < k; ++i) {
    const Index j = i + static_cast<Index>(rng.next_below(patch_count - i));
    std::swap(pool[i], pool[j]);
  }
  PatchSubset s;
  s.draw_seed = rng.key();
  s.indices.assign(pool.begin(), pool.begin() + k);
  std::sort(s.indices.begin(), s.indices.end());
  return s;
}

}  // namespace cdgp
