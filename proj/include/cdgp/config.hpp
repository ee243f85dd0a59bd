#pragma once

#include "cdgp/data.hpp"
#include "cdgp/model.hpp"
#include "cdgp/train.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace cdgp {

struct LayerConfig {
  std::string kernel;  // rbf | sumrbf | conv | wconv | sumrbf-base
  Index width = 0;
  Index num_inducing = 100;
  Index patch_w = 0, patch_h = 0, stride = 1;  // first-layer conv geometry
  Index window = 0, window_stride = 1;         // hidden-layer conv windows
  double subsample_fraction = 1.0;
  bool share_subsets = false;
  bool trainable_z = false;
};

struct DatasetConfig {
  std::string kind;  // mnist | rectangles_image | cifar10 | toy_rectangles |
                     // toy_blobs | synthetic
  std::string data_dir;
  std::vector<int> classes;  // optional filter
  Index train_limit = 0;
  Index test_limit = 0;
  Index toy_n = 200;
  Index toy_size = 8;
  Index synth_n = 64, synth_w = 50, synth_h = 50, synth_c = 3;
};

struct BenchConfig {
  Index n = 64, w = 50, h = 50, c = 3;
  Index patch_w = 5, patch_h = 5, stride = 1;
  double subsample_fraction = 0.1;
  int repeats = 1;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::vector<LayerConfig> layers;
  double lengthscale_init = 2.0;
  double lengthscale_init2 = 10.0;
  int s_train = 1;
  int s_pred = 25;
  int epochs = 1;
  Index minibatch = 0;
  double step_size = 0.01;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;
  std::string out_dir = "out";
  std::string resume_from;
  BenchConfig bench;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);

// Digest over the dataset+model sections (the architecture identity used to
// match checkpoints against configs).
std::uint64_t config_digest(const ExperimentConfig& cfg);

// Loads the split named "train" or "test" as configured.
Dataset load_dataset(const ExperimentConfig& cfg, const std::string& split);

// Builds the (uninitialized) model: layer stack, mean-function kinds, patch
// subsets. Validates the architecture against the dataset before any compute.
DgpModel build_model(const ExperimentConfig& cfg, const Dataset& train);

TrainOptions train_options(const ExperimentConfig& cfg);

}  // namespace cdgp
