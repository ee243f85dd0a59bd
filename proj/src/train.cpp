#include "cdgp/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace cdgp {

void Adam::step(const std::vector<Parameter*>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (!p->grad.allFinite())
      throw NonFiniteGradient("gradient of " + p->name + " is not finite");
    auto& [m, v] = moments_[p->name];
    if (m.size() == 0) {
      m = Mat::Zero(p->value.rows(), p->value.cols());
      v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * p->grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * p->grad.cwiseProduct(p->grad);
    const Mat mhat = m / bc1;
    const Mat vhat = v / bc2;
    p->value -=
        cfg_.step_size *
        mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg_.epsilon).matrix());
  }
}

void Adam::save(CheckpointWriter& w) const {
  w.add_u64("opt/t", t_);
  for (const auto& [name, mv] : moments_) {
    w.add("opt/m/" + name, mv.first);
    w.add("opt/v/" + name, mv.second);
  }
}

void Adam::load(const CheckpointReader& r, const std::vector<Parameter*>& params) {
  t_ = r.u64("opt/t");
  moments_.clear();
  for (const Parameter* p : params) {
    if (r.has("opt/m/" + p->name))
      moments_[p->name] = {r.matrix("opt/m/" + p->name),
                           r.matrix("opt/v/" + p->name)};
  }
}

namespace {

void save_layer_extras(CheckpointWriter& w, SvgpLayer& layer) {
  const std::string prefix = "layer" + std::to_string(layer.index()) + "/";
  if (layer.mean_function().kind == MeanFunction::Kind::Linear)
    w.add(prefix + "mean_W", layer.mean_function().w);
  if (layer.spec().subset_s)
    w.add_ints(prefix + "subset_s", layer.spec().subset_s->indices);
  if (layer.spec().subset_sp)
    w.add_ints(prefix + "subset_sp", layer.spec().subset_sp->indices);
}

void load_layer_extras(const CheckpointReader& r, SvgpLayer& layer) {
  const std::string prefix = "layer" + std::to_string(layer.index()) + "/";
  if (layer.mean_function().kind == MeanFunction::Kind::Linear) {
    MeanFunction mf = layer.mean_function();
    mf.w = r.matrix(prefix + "mean_W");
    layer.set_mean_function(std::move(mf));
  }
  if (r.has(prefix + "subset_s")) {
    PatchSubset s;
    s.indices = r.ints(prefix + "subset_s");
    layer.mutable_spec().subset_s = std::move(s);
  }
  if (r.has(prefix + "subset_sp")) {
    PatchSubset s;
    s.indices = r.ints(prefix + "subset_sp");
    layer.mutable_spec().subset_sp = std::move(s);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, DgpModel& model, const Adam* opt,
                     int epoch, long step, std::uint64_t seed,
                     std::uint64_t config_digest) {
  CheckpointWriter w;
  w.add_u64("meta/config_digest", config_digest);
  w.add_u64("meta/seed", seed);
  w.add_scalar("meta/epoch", epoch);
  w.add_scalar("meta/step", static_cast<double>(step));
  for (Parameter* p : model.parameters()) w.add(p->name, p->value);
  for (SvgpLayer& layer : model.layers()) save_layer_extras(w, layer);
  if (opt) opt->save(w);
  w.write(path);
}

CheckpointMeta load_checkpoint(const std::string& path, DgpModel& model,
                               Adam* opt) {
  CheckpointReader r(path);
  CheckpointMeta meta;
  meta.config_digest = r.u64("meta/config_digest");
  meta.seed = r.u64("meta/seed");
  meta.epoch = static_cast<int>(r.scalar("meta/epoch"));
  meta.step = static_cast<long>(r.scalar("meta/step"));
  for (Parameter* p : model.parameters()) {
    const Mat m = r.matrix(p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw VersionMismatch("checkpoint/architecture mismatch for " + p->name +
                            ": stored " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", model expects " +
                            std::to_string(p->value.rows()) + "x" +
                            std::to_string(p->value.cols()));
    p->value = m;
  }
  for (SvgpLayer& layer : model.layers()) load_layer_extras(r, layer);
  if (opt) opt->load(r, model.trainable_parameters());
  return meta;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<StepRecord>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,step,elbo,wall_seconds\n";
  out.precision(17);
  for (const StepRecord& r : rows)
    out << r.epoch << "," << r.step << "," << r.elbo << "," << r.wall_seconds
        << "\n";
}

TrainResult train(DgpModel& model, const Dataset& data, const TrainOptions& opts) {
  data.validate();
  model.validate();
  if (opts.epochs < 0) throw ConfigError("epochs must be >= 0");
  const Index n = data.size();
  Index batch = opts.minibatch > 0 ? opts.minibatch : n;
  if (batch > n)
    throw ConfigError("minibatch " + std::to_string(batch) + " exceeds N=" +
                      std::to_string(n));
  model.set_num_train(n);

  Adam opt(opts.adam);
  int start_epoch = 0;
  long gstep = 0;
  if (!opts.resume_from.empty()) {
    const CheckpointMeta meta = load_checkpoint(opts.resume_from, model, &opt);
    if (opts.config_digest != 0 && meta.config_digest != 0 &&
        meta.config_digest != opts.config_digest)
      throw VersionMismatch("resume checkpoint was written by a different config");
    start_epoch = meta.epoch;
    gstep = meta.step;
  }

  const Rng root = Rng::root(opts.seed);
  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  namespace fs = std::filesystem;
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

  std::vector<Parameter*> trainables = model.trainable_parameters();
  for (int epoch = start_epoch; epoch < opts.epochs; ++epoch) {
    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), Index{0});
    Rng shuffle_rng = root.split("shuffle", static_cast<std::uint64_t>(epoch));
    shuffle(order, shuffle_rng);

    double epoch_elbo = 0.0;
    int epoch_batches = 0;
    for (Index at = 0; at < n; at += batch) {
      const Index b = std::min(batch, n - at);
      Mat xb(b, data.images.cols());
      std::vector<int> yb(b);
      for (Index i = 0; i < b; ++i) {
        xb.row(i) = data.images.row(order[at + i]);
        yb[i] = data.labels[order[at + i]];
      }

      ad::Tape tape;
      Rng eps_stream = root.split("eps", static_cast<std::uint64_t>(gstep));
      DgpModel::ElboResult res = model.elbo(tape, xb, yb, eps_stream);
      tape.backward(res.value);

      for (Parameter* p : trainables) p->zero_grad();
      for (auto& [param, var] : res.bindings)
        param->grad += tape.gradient(var);
      // ascent on the ELBO
      for (Parameter* p : trainables) p->grad = -p->grad;
      opt.step(trainables);

      const double elbo_val = res.value.value()(0, 0);
      ++gstep;
      result.steps.push_back(StepRecord{epoch, gstep, elbo_val, elapsed()});
      epoch_elbo += elbo_val;
      ++epoch_batches;
    }

    result.epoch_summary.push_back(StepRecord{
        epoch, gstep, epoch_elbo / std::max(1, epoch_batches), elapsed()});

    if (!opts.out_dir.empty() && opts.checkpoint_every > 0 &&
        (epoch + 1) % opts.checkpoint_every == 0 && epoch + 1 < opts.epochs) {
      save_checkpoint(opts.out_dir + "/ckpt_epoch" + std::to_string(epoch + 1) +
                          ".cdgp",
                      model, &opt, epoch + 1, gstep, opts.seed,
                      opts.config_digest);
    }
    if (!opts.out_dir.empty())
      write_metrics_csv(opts.out_dir + "/trace.csv", result.epoch_summary);
  }

  if (!opts.out_dir.empty()) {
    result.final_checkpoint = opts.out_dir + "/final.cdgp";
    save_checkpoint(result.final_checkpoint, model, &opt, opts.epochs, gstep,
                    opts.seed, opts.config_digest);
  }
  return result;
}

}  // namespace cdgp
