#include "cdgp/config.hpp"

#include <filesystem>
#include <fstream>

namespace cdgp {

using nlohmann::json;

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw ConfigError(field + ": " + why);
}

template <typename T>
T field_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(key, "has the wrong type");
  }
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  if (!j.contains("dataset") || !j.at("dataset").is_object())
    bad_field("dataset", "missing or not an object");
  const json& jd = j.at("dataset");
  cfg.dataset.kind = field_or<std::string>(jd, "kind", "");
  if (cfg.dataset.kind.empty()) bad_field("dataset.kind", "is required");
  cfg.dataset.data_dir = field_or<std::string>(jd, "data_dir", "");
  cfg.dataset.classes = field_or<std::vector<int>>(jd, "classes", {});
  cfg.dataset.train_limit = field_or<Index>(jd, "train_limit", 0);
  cfg.dataset.test_limit = field_or<Index>(jd, "test_limit", 0);
  cfg.dataset.toy_n = field_or<Index>(jd, "toy_n", 200);
  cfg.dataset.toy_size = field_or<Index>(jd, "toy_size", 8);
  cfg.dataset.synth_n = field_or<Index>(jd, "synth_n", 64);
  cfg.dataset.synth_w = field_or<Index>(jd, "synth_w", 50);
  cfg.dataset.synth_h = field_or<Index>(jd, "synth_h", 50);
  cfg.dataset.synth_c = field_or<Index>(jd, "synth_c", 3);

  if (!j.contains("model") || !j.at("model").is_object())
    bad_field("model", "missing or not an object");
  const json& jm = j.at("model");
  if (!jm.contains("layers") || !jm.at("layers").is_array() ||
      jm.at("layers").empty())
    bad_field("model.layers", "must be a non-empty array");
  int li = 0;
  for (const json& jl : jm.at("layers")) {
    const std::string at = "model.layers[" + std::to_string(li) + "]";
    LayerConfig lc;
    lc.kernel = field_or<std::string>(jl, "kernel", "");
    if (lc.kernel != "rbf" && lc.kernel != "sumrbf" && lc.kernel != "conv" &&
        lc.kernel != "wconv" && lc.kernel != "sumrbf-base")
      bad_field(at + ".kernel", "'" + lc.kernel +
                                    "' is not one of rbf, sumrbf, conv, wconv, "
                                    "sumrbf-base");
    lc.width = field_or<Index>(jl, "width", 0);
    if (lc.width <= 0) bad_field(at + ".width", "must be positive");
    lc.num_inducing = field_or<Index>(jl, "m", 100);
    if (lc.num_inducing <= 0) bad_field(at + ".m", "must be positive");
    if (jl.contains("patch")) {
      const auto patch = jl.at("patch").get<std::vector<Index>>();
      if (patch.size() != 2) bad_field(at + ".patch", "must be [w, h]");
      lc.patch_w = patch[0];
      lc.patch_h = patch[1];
    }
    lc.stride = field_or<Index>(jl, "stride", 1);
    lc.window = field_or<Index>(jl, "window", 0);
    lc.window_stride = field_or<Index>(jl, "window_stride", 1);
    lc.subsample_fraction = field_or<double>(jl, "subsample_fraction", 1.0);
    if (lc.subsample_fraction <= 0.0 || lc.subsample_fraction > 1.0)
      bad_field(at + ".subsample_fraction", "must lie in (0, 1]");
    lc.share_subsets = field_or<bool>(jl, "share_subsets", false);
    lc.trainable_z = field_or<bool>(jl, "trainable_z", false);
    cfg.layers.push_back(lc);
    ++li;
  }
  cfg.lengthscale_init = field_or<double>(jm, "lengthscale_init", 2.0);
  cfg.lengthscale_init2 = field_or<double>(jm, "lengthscale_init2", 10.0);
  if (cfg.lengthscale_init <= 0.0 || cfg.lengthscale_init2 <= 0.0)
    bad_field("model.lengthscale_init", "must be positive");
  cfg.s_train = field_or<int>(jm, "s_train", 1);
  cfg.s_pred = field_or<int>(jm, "s_pred", 25);
  if (cfg.s_train < 1 || cfg.s_pred < 1)
    bad_field("model.s_train", "sample counts must be >= 1");

  const json jt = j.contains("train") ? j.at("train") : json::object();
  cfg.epochs = field_or<int>(jt, "epochs", 1);
  if (cfg.epochs < 0) bad_field("train.epochs", "must be >= 0");
  cfg.minibatch = field_or<Index>(jt, "minibatch", 0);
  if (cfg.minibatch < 0) bad_field("train.minibatch", "must be >= 0");
  cfg.step_size = field_or<double>(jt, "step_size", 0.01);
  if (cfg.step_size <= 0.0) bad_field("train.step_size", "must be positive");
  cfg.seed = field_or<std::uint64_t>(jt, "seed", 0);
  cfg.checkpoint_every = field_or<int>(jt, "checkpoint_every", 0);
  cfg.resume_from = field_or<std::string>(jt, "resume_from", "");

  cfg.out_dir = field_or<std::string>(j, "out_dir", "out");

  if (j.contains("bench")) {
    const json& jb = j.at("bench");
    cfg.bench.n = field_or<Index>(jb, "n", 64);
    cfg.bench.w = field_or<Index>(jb, "w", 50);
    cfg.bench.h = field_or<Index>(jb, "h", 50);
    cfg.bench.c = field_or<Index>(jb, "c", 3);
    if (jb.contains("patch")) {
      const auto patch = jb.at("patch").get<std::vector<Index>>();
      if (patch.size() != 2) bad_field("bench.patch", "must be [w, h]");
      cfg.bench.patch_w = patch[0];
      cfg.bench.patch_h = patch[1];
    }
    cfg.bench.stride = field_or<Index>(jb, "stride", 1);
    cfg.bench.subsample_fraction =
        field_or<double>(jb, "subsample_fraction", 0.1);
    cfg.bench.repeats = field_or<int>(jb, "repeats", 1);
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

namespace {

json architecture_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"classes", cfg.dataset.classes},
                  {"train_limit", cfg.dataset.train_limit},
                  {"test_limit", cfg.dataset.test_limit},
                  {"toy_n", cfg.dataset.toy_n},
                  {"toy_size", cfg.dataset.toy_size}};
  json layers = json::array();
  for (const LayerConfig& lc : cfg.layers) {
    layers.push_back({{"kernel", lc.kernel},
                      {"width", lc.width},
                      {"m", lc.num_inducing},
                      {"patch", {lc.patch_w, lc.patch_h}},
                      {"stride", lc.stride},
                      {"window", lc.window},
                      {"window_stride", lc.window_stride},
                      {"subsample_fraction", lc.subsample_fraction},
                      {"share_subsets", lc.share_subsets},
                      {"trainable_z", lc.trainable_z}});
  }
  j["model"] = {{"layers", layers},
                {"lengthscale_init", cfg.lengthscale_init},
                {"lengthscale_init2", cfg.lengthscale_init2}};
  return j;
}

}  // namespace

std::uint64_t config_digest(const ExperimentConfig& cfg) {
  return Rng::fnv1a(architecture_json(cfg).dump());
}

namespace {

std::string find_existing(const std::vector<std::string>& candidates,
                          const std::string& what) {
  for (const std::string& c : candidates)
    if (std::filesystem::exists(c)) return c;
  std::string msg = what + " not found; tried:";
  for (const std::string& c : candidates) msg += " " + c;
  throw IoError(msg);
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& cfg, const std::string& split) {
  const DatasetConfig& dc = cfg.dataset;
  const bool train = split == "train";
  const std::string dir = dc.data_dir.empty() ? "." : dc.data_dir;
  Dataset d;
  if (dc.kind == "mnist") {
    const std::string img_name =
        train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
    const std::string lab_name =
        train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
    d = load_mnist(
        find_existing({dir + "/" + img_name, dir + "/mnist/" + img_name},
                      "MNIST image file"),
        find_existing({dir + "/" + lab_name, dir + "/mnist/" + lab_name},
                      "MNIST label file"),
        split);
  } else if (dc.kind == "rectangles_image") {
    const std::string stem = train ? "train" : "test";
    d = load_rectangles_image(
        find_existing({dir + "/rectangles_im_" + stem + ".amat",
                       dir + "/rectangles_images_" + stem + ".amat",
                       dir + "/rectangles-image/rectangles_im_" + stem + ".amat"},
                      "rectangles-image file"),
        split);
  } else if (dc.kind == "cifar10") {
    std::vector<std::string> paths;
    if (train) {
      for (int b = 1; b <= 5; ++b)
        paths.push_back(find_existing(
            {dir + "/data_batch_" + std::to_string(b) + ".bin",
             dir + "/cifar-10-batches-bin/data_batch_" + std::to_string(b) +
                 ".bin"},
            "CIFAR-10 batch"));
    } else {
      paths.push_back(
          find_existing({dir + "/test_batch.bin",
                         dir + "/cifar-10-batches-bin/test_batch.bin"},
                        "CIFAR-10 test batch"));
    }
    d = load_cifar10(paths, split);
  } else if (dc.kind == "toy_rectangles" || dc.kind == "toy_blobs") {
    const std::string task =
        dc.kind == "toy_rectangles" ? "rectangles" : "blobs";
    Rng root = Rng::root(cfg.seed);
    d = generate_toy(root.split("toy_data", train ? 0 : 1), dc.toy_n,
                     dc.toy_size, task);
    d.split = split;
  } else if (dc.kind == "synthetic") {
    Rng root = Rng::root(cfg.seed);
    d = synthetic_images(root.split("synthetic", train ? 0 : 1), dc.synth_n,
                         dc.synth_w, dc.synth_h, dc.synth_c);
    d.split = split;
  } else {
    bad_field("dataset.kind", "unknown kind '" + dc.kind + "'");
  }

  if (!dc.classes.empty())
    d = filter_classes(d, dc.classes,
                       train ? dc.train_limit : dc.test_limit);
  else if (train && dc.train_limit > 0 && d.size() > dc.train_limit)
    d = filter_classes(d, [&] {
      std::vector<int> all(d.num_classes);
      for (int c = 0; c < d.num_classes; ++c) all[c] = c;
      return all;
    }(), dc.train_limit);
  else if (!train && dc.test_limit > 0 && d.size() > dc.test_limit)
    d = filter_classes(d, [&] {
      std::vector<int> all(d.num_classes);
      for (int c = 0; c < d.num_classes; ++c) all[c] = c;
      return all;
    }(), dc.test_limit);
  return d;
}

DgpModel build_model(const ExperimentConfig& cfg, const Dataset& train) {
  train.validate();
  const std::size_t n_layers = cfg.layers.size();
  if (cfg.layers.back().width != train.num_classes)
    bad_field("model.layers[" + std::to_string(n_layers - 1) + "].width",
              "final width " + std::to_string(cfg.layers.back().width) +
                  " must equal the number of classes " +
                  std::to_string(train.num_classes));
  if (cfg.minibatch > train.size())
    bad_field("train.minibatch", "exceeds the training set size " +
                                     std::to_string(train.size()));

  Rng root = Rng::root(cfg.seed);
  std::vector<SvgpLayer> layers;
  Index input_dim = train.flat_dim();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const LayerConfig& lc = cfg.layers[l];
    const std::string at = "model.layers[" + std::to_string(l) + "]";
    KernelSpec spec;
    if (lc.kernel == "rbf") {
      spec.kind = KernelKind::Rbf;
    } else if (lc.kernel == "sumrbf") {
      spec.kind = KernelKind::SumRbf;
      spec.components = 2;
    } else if (lc.kernel == "conv" || lc.kernel == "sumrbf-base") {
      spec.kind = KernelKind::Conv;
      if (lc.kernel == "sumrbf-base") spec.components = 2;
    } else {
      spec.kind = KernelKind::WConv;
    }

    if (spec.is_conv()) {
      if (l == 0) {
        if (lc.patch_w <= 0 || lc.patch_h <= 0)
          bad_field(at + ".patch", "required for a first-layer conv kernel");
        try {
          spec.geom = PatchGeometry::image(train.width, train.height,
                                           train.channels, lc.patch_w,
                                           lc.patch_h, lc.stride);
        } catch (const GeometryMismatch& e) {
          bad_field(at + ".patch", e.what());
        }
      } else {
        if (lc.window <= 0)
          bad_field(at + ".window",
                    "required for a conv kernel on a hidden layer");
        try {
          spec.geom =
              PatchGeometry::signal(input_dim, lc.window, lc.window_stride);
        } catch (const GeometryMismatch& e) {
          bad_field(at + ".window", e.what());
        }
      }
      if (lc.subsample_fraction < 1.0) {
        const Index p = spec.geom.patch_count();
        const Index k = std::max<Index>(
            1, static_cast<Index>(lc.subsample_fraction * p));
        spec.subset_s = draw_subset(p, k, root.split("patchsubset", l, 0));
        spec.subset_sp = lc.share_subsets
                             ? spec.subset_s
                             : draw_subset(p, k, root.split("patchsubset", l, 1));
      }
    }

    MeanFunction mean;
    if (l + 1 == n_layers || spec.is_conv()) {
      mean.kind = MeanFunction::Kind::Zero;
    } else if (input_dim == lc.width) {
      mean.kind = MeanFunction::Kind::Identity;
    } else {
      mean.kind = MeanFunction::Kind::Linear;  // SVD map filled at init
    }

    layers.emplace_back(static_cast<int>(l), spec, input_dim, lc.width,
                        lc.num_inducing, mean, lc.trainable_z,
                        cfg.lengthscale_init, cfg.lengthscale_init2);
    input_dim = lc.width;
  }

  DgpModel model(std::move(layers), train.size(), cfg.s_train, cfg.s_pred);
  model.validate();
  return model;
}

TrainOptions train_options(const ExperimentConfig& cfg) {
  TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.minibatch = cfg.minibatch;
  opts.adam.step_size = cfg.step_size;
  opts.seed = cfg.seed;
  opts.checkpoint_every = cfg.checkpoint_every;
  opts.out_dir = cfg.out_dir;
  opts.resume_from = cfg.resume_from;
  opts.config_digest = config_digest(cfg);
  return opts;
}

}  // namespace cdgp
