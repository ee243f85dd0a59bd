#include "cdgp/config.hpp"
#include "cdgp/inducing.hpp"
#include "cdgp/linalg.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace cdgp;

struct CommonFlags {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::int64_t seed = -1;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "experiment config (JSON)")
      ->required();
  cmd->add_option("--data-dir", flags.data_dir, "dataset directory");
  cmd->add_option("--out-dir", flags.out_dir, "output directory");
  cmd->add_option("--seed", flags.seed, "override the config seed");
  cmd->add_option("--threads", flags.threads,
                  "worker threads (CDGP_THREADS as fallback)");
}

ExperimentConfig resolve_config(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config_file(flags.config_path);
  if (!flags.data_dir.empty()) cfg.dataset.data_dir = flags.data_dir;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);

  int threads = flags.threads;
  if (threads == 0) {
    if (const char* env = std::getenv("CDGP_THREADS")) threads = std::atoi(env);
  }
  if (threads > 0) Eigen::setNbThreads(threads);
  return cfg;
}

void print_summary(const char* tag, double accuracy, double nlpp) {
  std::cout.precision(6);
  std::cout << std::fixed << tag << " accuracy=" << accuracy
            << ", nlpp=" << nlpp << "\n";
  std::cout.unsetf(std::ios::fixed);
}

std::pair<double, double> evaluate(const DgpModel& model, const Dataset& data,
                                   std::uint64_t seed, Index batch) {
  const Rng root = Rng::root(seed);
  Mat probs(data.size(), model.num_classes());
  const Index chunk = batch > 0 ? batch : std::min<Index>(data.size(), 500);
  Index bi = 0;
  for (Index at = 0; at < data.size(); at += chunk, ++bi) {
    const Index b = std::min(chunk, data.size() - at);
    const Prediction p = model.predict(data.images.middleRows(at, b),
                                       root.split("predict", bi));
    probs.middleRows(at, b) = p.probabilities;
  }
  Prediction full;
  full.probabilities = std::move(probs);
  full.labels.resize(data.size());
  for (Index n = 0; n < data.size(); ++n) {
    int best = 0;
    for (Index j = 1; j < full.probabilities.cols(); ++j)
      if (full.probabilities(n, j) > full.probabilities(n, best))
        best = static_cast<int>(j);
    full.labels[n] = best;
  }
  return metrics(full, data.labels);
}

int cmd_train(const CommonFlags& flags, const std::string& resume) {
  ExperimentConfig cfg = resolve_config(flags);
  if (!resume.empty()) cfg.resume_from = resume;

  const Dataset train_set = load_dataset(cfg, "train");
  DgpModel model = build_model(cfg, train_set);
  if (cfg.resume_from.empty())
    initialize_model(model, train_set.images, Rng::root(cfg.seed).split("init"));

  const TrainResult result = train(model, train_set, train_options(cfg));

  const Dataset test_set = load_dataset(cfg, "test");
  const auto [accuracy, nlpp] =
      evaluate(model, test_set, cfg.seed, cfg.minibatch);
  print_summary("test", accuracy, nlpp);

  std::ofstream summary(cfg.out_dir + "/summary.txt");
  summary.precision(17);
  summary << "accuracy=" << accuracy << ", nlpp=" << nlpp << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint,
             const std::string& split) {
  ExperimentConfig cfg = resolve_config(flags);
  const Dataset data = load_dataset(cfg, split);
  const Dataset train_like = split == "train" ? data : load_dataset(cfg, "train");
  DgpModel model = build_model(cfg, train_like);
  const CheckpointMeta meta = load_checkpoint(checkpoint, model, nullptr);
  if (meta.config_digest != config_digest(cfg))
    throw VersionMismatch(
        "checkpoint/architecture mismatch: the checkpoint was written by a "
        "different dataset+model config");
  const auto [accuracy, nlpp] = evaluate(model, data, cfg.seed, cfg.minibatch);
  print_summary(split.c_str(), accuracy, nlpp);
  return 0;
}

int cmd_bench(const CommonFlags& flags) {
  ExperimentConfig cfg = resolve_config(flags);
  const BenchConfig& bc = cfg.bench;
  const Dataset images = synthetic_images(Rng::root(cfg.seed).split("bench"),
                                          bc.n, bc.w, bc.h, bc.c);
  const PatchGeometry geom = PatchGeometry::image(bc.w, bc.h, bc.c, bc.patch_w,
                                                  bc.patch_h, bc.stride);
  const Index p = geom.patch_count();
  const Index k =
      std::max<Index>(1, static_cast<Index>(bc.subsample_fraction * p));

  KernelValues kv;
  kv.log_sf2 = Mat::Zero(1, 1);
  kv.log_kappa = Mat::Constant(1, 1, std::log(100.0));
  kv.log_sn2 = Mat::Constant(1, 1, std::log(1e-2));

  KernelSpec full;
  full.kind = KernelKind::Conv;
  full.geom = geom;

  KernelSpec sub = full;
  Rng root = Rng::root(cfg.seed);
  sub.subset_s = draw_subset(p, k, root.split("bench_subset", 0));
  sub.subset_sp = draw_subset(p, k, root.split("bench_subset", 1));

  using clock = std::chrono::steady_clock;
  double full_seconds = 0.0, sub_seconds = 0.0;
  Mat kf, ks;
  for (int r = 0; r < std::max(1, bc.repeats); ++r) {
    auto t0 = clock::now();
    kf = kff_diag_value(images.images, kv, full);
    auto t1 = clock::now();
    ks = kff_diag_value(images.images, kv, sub);
    auto t2 = clock::now();
    full_seconds += std::chrono::duration<double>(t1 - t0).count();
    sub_seconds += std::chrono::duration<double>(t2 - t1).count();
  }
  const double ratio = full_seconds / sub_seconds;

  std::cout << "P,S,wall_seconds_full,wall_seconds_sub,ratio\n";
  std::cout << p << "," << k << "," << full_seconds << "," << sub_seconds << ","
            << ratio << "\n";
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream csv(cfg.out_dir + "/bench.csv");
    csv << "P,S,wall_seconds_full,wall_seconds_sub,ratio\n";
    csv << p << "," << k << "," << full_seconds << "," << sub_seconds << ","
        << ratio << "\n";
  }
  // values must actually differ when the restriction is active
  if (k < p && (kf - ks).cwiseAbs().maxCoeff() == 0.0)
    throw Error(ErrorCategory::Numeric, "Internal",
                "subsampled kernel equals the full kernel");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"convolutional deep GP classifier"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, bench_flags;
  std::string resume, checkpoint, split = "test";

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, train_flags);
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_flags);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint path")
      ->required();
  eval_cmd->add_option("--split", split, "train or test split");

  CLI::App* bench_cmd =
      app.add_subcommand("bench", "time full vs subsampled kernels");
  add_common(bench_cmd, bench_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(train_flags, resume);
    if (eval_cmd->parsed()) return cmd_eval(eval_flags, checkpoint, split);
    if (bench_cmd->parsed()) return cmd_bench(bench_flags);
  } catch (const cdgp::Error& e) {
    const char* category = "internal";
    switch (e.category()) {
      case cdgp::ErrorCategory::Config: category = "config"; break;
      case cdgp::ErrorCategory::Data: category = "data"; break;
      case cdgp::ErrorCategory::Numeric: category = "numeric"; break;
    }
    std::cerr << "error: category=" << category << " kind=" << e.kind()
              << " message=\"" << e.what() << "\"\n";
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: category=internal message=\"" << e.what() << "\"\n";
    return 1;
  }
  return 0;
}
