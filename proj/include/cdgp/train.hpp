#pragma once

#include "cdgp/checkpoint.hpp"
#include "cdgp/data.hpp"
#include "cdgp/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace cdgp {

struct AdamConfig {
  double step_size = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Standard bias-corrected Adam over named parameters (descent direction;
// the training loop negates ELBO gradients to maximize).
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Parameter*>& params);

  std::uint64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  void save(CheckpointWriter& w) const;
  void load(const CheckpointReader& r, const std::vector<Parameter*>& params);

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments_;
};

struct StepRecord {
  int epoch = 0;
  long step = 0;
  double elbo = 0.0;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  int epochs = 1;
  Index minibatch = 0;  // 0 = full batch
  AdamConfig adam;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  std::string out_dir;       // empty = no files written
  std::string resume_from;   // optional checkpoint path
  std::uint64_t config_digest = 0;
};

struct TrainResult {
  std::vector<StepRecord> steps;          // one per optimizer step
  std::vector<StepRecord> epoch_summary;  // mean minibatch ELBO per epoch
  std::string final_checkpoint;
};

TrainResult train(DgpModel& model, const Dataset& data, const TrainOptions& opts);

// Full training-state snapshot (parameters, mean maps, patch subsets,
// optimizer moments, counters, seed, config digest).
void save_checkpoint(const std::string& path, DgpModel& model, const Adam* opt,
                     int epoch, long step, std::uint64_t seed,
                     std::uint64_t config_digest);

struct CheckpointMeta {
  int epoch = 0;
  long step = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
};

CheckpointMeta load_checkpoint(const std::string& path, DgpModel& model,
                               Adam* opt);

void write_metrics_csv(const std::string& path,
                       const std::vector<StepRecord>& rows);

}  // namespace cdgp
