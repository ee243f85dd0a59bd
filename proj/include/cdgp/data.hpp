#pragma once

#include "cdgp/common.hpp"
#include "cdgp/rng.hpp"

#include <string>
#include <vector>

namespace cdgp {

struct Dataset {
  Mat images;  // N x (W*H*C), flattened row-major (y, x, channel), in [0,1]
  Index width = 0;
  Index height = 0;
  Index channels = 1;
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;

  Index size() const { return images.rows(); }
  Index flat_dim() const { return width * height * channels; }
  void validate() const;
};

Dataset load_mnist(const std::string& image_path, const std::string& label_path,
                   const std::string& split = "train");

Dataset load_rectangles_image(const std::string& path,
                              const std::string& split = "train");

Dataset load_cifar10(const std::vector<std::string>& batch_paths,
                     const std::string& split = "train");

// task: "rectangles" (height-vs-width borders on black) or "blobs".
Dataset generate_toy(Rng rng, Index n, Index size, const std::string& task);

// Keeps rows whose label is in `classes` (relabelled 0..k-1, order
// preserved), up to `limit` rows (0 = no limit).
Dataset filter_classes(const Dataset& data, const std::vector<int>& classes,
                       Index limit = 0);

// Synthetic images for the kernel-timing benchmark (uniform noise in [0,1]).
Dataset synthetic_images(Rng rng, Index n, Index w, Index h, Index c);

}  // namespace cdgp
