#include "cdgp/config.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cstdlib>
#include <sstream>
#include <filesystem>
#include <fstream>

using namespace cdgp;
using namespace cdgp_test;

namespace {

namespace fs = std::filesystem;

nlohmann::json valid_json() {
  return {
      {"dataset", {{"kind", "toy_rectangles"}, {"toy_n", 40}, {"toy_size", 8}}},
      {"model",
       {{"layers",
         nlohmann::json::array(
             {{{"kernel", "wconv"}, {"width", 4}, {"patch", {3, 3}},
               {"m", 8}, {"subsample_fraction", 0.5}},
              {{"kernel", "rbf"}, {"width", 2}, {"m", 8}}})}}},
      {"train", {{"epochs", 2}, {"minibatch", 20}, {"seed", 5}}},
      {"out_dir", "out"}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CDGP_CLI_PATH) + " " + args +
                          " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_SUITE_BEGIN("config");

TEST_CASE("parse_config accepts a full description and applies defaults") {
  const ExperimentConfig cfg = parse_config(valid_json());
  CHECK(cfg.dataset.kind == "toy_rectangles");
  REQUIRE(cfg.layers.size() == 2);
  CHECK(cfg.layers[0].kernel == "wconv");
  CHECK(cfg.layers[0].patch_w == 3);
  CHECK(cfg.layers[0].subsample_fraction == 0.5);
  CHECK(cfg.layers[1].kernel == "rbf");
  CHECK(cfg.s_train == 1);
  CHECK(cfg.s_pred == 25);
  CHECK(cfg.step_size == 0.01);
  CHECK(cfg.seed == 5);
}

TEST_CASE("parse_config rejects bad fields with a named diagnostic") {
  auto expect_error = [](nlohmann::json j, const std::string& needle) {
    try {
      parse_config(j);
      FAIL("expected ConfigError for " << needle);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  nlohmann::json j = valid_json();
  j["model"]["layers"][0]["kernel"] = "matern";
  expect_error(j, "model.layers[0].kernel");

  j = valid_json();
  j["model"]["layers"][1]["width"] = 0;
  expect_error(j, "model.layers[1].width");

  j = valid_json();
  j["model"]["layers"][0]["subsample_fraction"] = 1.5;
  expect_error(j, "subsample_fraction");

  j = valid_json();
  j["train"]["step_size"] = -1.0;
  expect_error(j, "train.step_size");

  j = valid_json();
  j.erase("dataset");
  expect_error(j, "dataset");
}

TEST_CASE("build_model validates the architecture before any compute") {
  ExperimentConfig cfg = parse_config(valid_json());
  const Dataset data = load_dataset(cfg, "train");

  ExperimentConfig bad_width = cfg;
  bad_width.layers[1].width = 3;  // final width must equal C = 2
  CHECK_THROWS_AS(build_model(bad_width, data), ConfigError);

  ExperimentConfig bad_batch = cfg;
  bad_batch.minibatch = 100;  // N = 40
  CHECK_THROWS_AS(build_model(bad_batch, data), ConfigError);

  ExperimentConfig bad_patch = cfg;
  bad_patch.layers[0].patch_w = 11;
  CHECK_THROWS_AS(build_model(bad_patch, data), ConfigError);
}

TEST_CASE("build_model draws subsets and assigns mean functions") {
  ExperimentConfig cfg = parse_config(valid_json());
  const Dataset data = load_dataset(cfg, "train");
  DgpModel model = build_model(cfg, data);
  REQUIRE(model.layers().size() == 2);

  SvgpLayer& conv = model.layers()[0];
  CHECK(conv.spec().kind == KernelKind::WConv);
  CHECK(conv.spec().geom.patch_count() == 36);
  REQUIRE(conv.spec().subset_s.has_value());
  REQUIRE(conv.spec().subset_sp.has_value());
  CHECK(conv.spec().subset_s->size() == 18);  // floor(0.5 * 36)
  CHECK(conv.spec().subset_sp->size() == 18);
  CHECK(conv.spec().subset_s->indices != conv.spec().subset_sp->indices);
  CHECK(conv.mean_function().kind == MeanFunction::Kind::Zero);
  CHECK(conv.patch_weights().value.rows() == 36);

  SvgpLayer& rbf = model.layers()[1];
  CHECK(rbf.mean_function().kind == MeanFunction::Kind::Zero);  // final layer
  CHECK(rbf.z().value.cols() == 4);
}

TEST_CASE("shared subsets reuse the same index set") {
  nlohmann::json j = valid_json();
  j["model"]["layers"][0]["share_subsets"] = true;
  const ExperimentConfig cfg = parse_config(j);
  const Dataset data = load_dataset(cfg, "train");
  DgpModel model = build_model(cfg, data);
  CHECK(model.layers()[0].spec().subset_s->indices ==
        model.layers()[0].spec().subset_sp->indices);
}

TEST_CASE("hidden conv layers window their input representation") {
  nlohmann::json j = valid_json();
  j["model"]["layers"] = nlohmann::json::array(
      {{{"kernel", "wconv"}, {"width", 6}, {"patch", {3, 3}}, {"m", 8}},
       {{"kernel", "wconv"}, {"width", 4}, {"window", 3}, {"m", 8}},
       {{"kernel", "rbf"}, {"width", 2}, {"m", 8}}});
  const ExperimentConfig cfg = parse_config(j);
  const Dataset data = load_dataset(cfg, "train");
  DgpModel model = build_model(cfg, data);
  const PatchGeometry& g = model.layers()[1].spec().geom;
  CHECK(g.image_w == 6);
  CHECK(g.image_h == 1);
  CHECK(g.patch_w == 3);
  CHECK(g.patch_count() == 4);
  CHECK(model.layers()[1].z().value.cols() == 3);  // patch-space inducing
}

TEST_CASE("config digest tracks the architecture, not run management") {
  ExperimentConfig a = parse_config(valid_json());
  ExperimentConfig b = a;
  b.out_dir = "elsewhere";
  b.epochs = 99;
  CHECK(config_digest(a) == config_digest(b));
  ExperimentConfig c = a;
  c.layers[0].num_inducing = 9;
  CHECK(config_digest(a) != config_digest(c));
}

TEST_CASE("sumrbf-base selects a two-component conv kernel") {
  nlohmann::json j = valid_json();
  j["model"]["layers"][0] = {{"kernel", "sumrbf-base"},
                             {"width", 4},
                             {"patch", {3, 3}},
                             {"m", 8}};
  j["model"]["lengthscale_init"] = 0.01;
  j["model"]["lengthscale_init2"] = 10.0;
  const ExperimentConfig cfg = parse_config(j);
  const Dataset data = load_dataset(cfg, "train");
  DgpModel model = build_model(cfg, data);
  SvgpLayer& layer = model.layers()[0];
  CHECK(layer.spec().kind == KernelKind::Conv);
  CHECK(layer.spec().components == 2);
  REQUIRE(layer.log_kappa().value.cols() == 2);
  CHECK(layer.log_kappa().value(0, 0) ==
        doctest::Approx(std::log(0.01 * 0.01)).epsilon(1e-12));
  CHECK(layer.log_kappa().value(0, 1) ==
        doctest::Approx(std::log(100.0)).epsilon(1e-12));
}

TEST_CASE("cli: train runs a bundled toy config end to end") {
  const fs::path out = fs::temp_directory_path() / "cdgp_cli_test";
  fs::remove_all(out);
  const std::string config = std::string(CDGP_CONFIG_DIR) + "/toy_rectangles.json";
  REQUIRE(fs::exists(config));
  const int code =
      run_cli("train --config " + config + " --out-dir " + out.string());
  CHECK(code == 0);
  CHECK(fs::exists(out / "final.cdgp"));
  CHECK(fs::exists(out / "trace.csv"));
  CHECK(fs::exists(out / "summary.txt"));

  // eval on the written checkpoint prints metrics and exits cleanly
  const int eval_code =
      run_cli("eval --config " + config + " --checkpoint " +
              (out / "final.cdgp").string() + " --split train");
  CHECK(eval_code == 0);
}

TEST_CASE("cli: eval reproduces the train-time summary") {
  const fs::path out = fs::temp_directory_path() / "cdgp_cli_summary";
  fs::remove_all(out);
  const fs::path cfg_path = out / "cfg.json";
  fs::create_directories(out);
  {
    nlohmann::json j = valid_json();
    j["dataset"]["toy_n"] = 60;
    j["train"]["epochs"] = 3;
    std::ofstream f(cfg_path);
    f << j.dump();
  }
  REQUIRE(run_cli("train --config " + cfg_path.string() + " --out-dir " +
                  out.string()) == 0);
  std::ifstream summary(out / "summary.txt");
  std::string train_line;
  std::getline(summary, train_line);
  REQUIRE(!train_line.empty());

  const fs::path eval_out = out / "eval.txt";
  const std::string cmd = std::string(CDGP_CLI_PATH) + " eval --config " +
                          cfg_path.string() + " --checkpoint " +
                          (out / "final.cdgp").string() + " > " +
                          eval_out.string() + " 2>/dev/null";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  std::ifstream eval_in(eval_out);
  std::string eval_line;
  std::getline(eval_in, eval_line);
  // summary.txt holds full precision; the console line is rounded to 1e-6
  auto parse = [](const std::string& line) {
    const auto a = line.find("accuracy=");
    const auto b = line.find("nlpp=");
    return std::pair<double, double>(std::stod(line.substr(a + 9)),
                                     std::stod(line.substr(b + 5)));
  };
  const auto [train_acc, train_nlpp] = parse(train_line);
  const auto [eval_acc, eval_nlpp] = parse(eval_line);
  CHECK(std::abs(train_acc - eval_acc) < 1e-6);
  CHECK(std::abs(train_nlpp - eval_nlpp) < 1e-6);

  // running eval twice gives identical bytes
  const fs::path eval_out2 = out / "eval2.txt";
  const std::string cmd2 = std::string(CDGP_CLI_PATH) + " eval --config " +
                           cfg_path.string() + " --checkpoint " +
                           (out / "final.cdgp").string() + " > " +
                           eval_out2.string() + " 2>/dev/null";
  REQUIRE(WEXITSTATUS(std::system(cmd2.c_str())) == 0);
  std::ifstream again(eval_out2);
  std::string eval_line2;
  std::getline(again, eval_line2);
  CHECK(eval_line == eval_line2);
}

TEST_CASE("cli: bench emits well-formed CSV and ratio near 1 at |S| = P") {
  const fs::path out = fs::temp_directory_path() / "cdgp_cli_bench";
  fs::remove_all(out);
  fs::create_directories(out);

  auto bench_config = [&](Index side, Index patch, Index stride, double frac,
                          int repeats) {
    nlohmann::json j = {
        {"dataset", {{"kind", "synthetic"}}},
        {"model",
         {{"layers", nlohmann::json::array({{{"kernel", "rbf"},
                                             {"width", 2},
                                             {"m", 4}}})}}},
        {"bench",
         {{"n", 6}, {"w", side}, {"h", side}, {"c", 1},
          {"patch", {patch, patch}}, {"stride", stride},
          {"subsample_fraction", frac}, {"repeats", repeats}}}};
    const fs::path p = out / ("bench_" + std::to_string(side) + ".json");
    std::ofstream f(p);
    f << j.dump();
    return p.string();
  };

  // tiny P = 4 grid runs and produces the CSV
  REQUIRE(run_cli("bench --config " + bench_config(6, 3, 3, 0.5, 1) +
                  " --out-dir " + (out / "tiny").string()) == 0);
  std::ifstream csv(out / "tiny" / "bench.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header == "P,S,wall_seconds_full,wall_seconds_sub,ratio");
  CHECK(row.substr(0, 4) == "4,2,");

  // |S| = P: both paths do the same work
  REQUIRE(run_cli("bench --config " + bench_config(16, 3, 1, 1.0, 20) +
                  " --out-dir " + (out / "full").string()) == 0);
  std::ifstream csv2(out / "full" / "bench.csv");
  std::getline(csv2, header);
  std::getline(csv2, row);
  std::stringstream ss(row);
  std::string field;
  std::vector<std::string> fields;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  REQUIRE(fields.size() == 5);
  CHECK(fields[0] == "196");
  CHECK(fields[1] == "196");
  const double ratio = std::stod(fields[4]);
  CHECK(ratio > 0.2);
  CHECK(ratio < 5.0);
}

TEST_CASE("cli: missing data files exit with code 3") {
  const fs::path out = fs::temp_directory_path() / "cdgp_cli_nodata";
  fs::remove_all(out);
  fs::create_directories(out);
  const fs::path cfg_path = out / "cfg.json";
  {
    nlohmann::json j = valid_json();
    j["dataset"] = {{"kind", "mnist"}, {"data_dir", (out / "empty").string()}};
    j["model"]["layers"][0]["patch"] = {5, 5};
    j["model"]["layers"][1]["width"] = 10;
    std::ofstream f(cfg_path);
    f << j.dump();
  }
  CHECK(run_cli("train --config " + cfg_path.string() + " --out-dir " +
                out.string()) == 3);
}

TEST_CASE("cli: config errors exit with code 2") {
  const fs::path bad = fs::temp_directory_path() / "cdgp_bad_config.json";
  {
    std::ofstream out(bad);
    out << R"({"dataset": {"kind": "toy_rectangles"}, "model": {"layers": []}})";
  }
  CHECK(run_cli("train --config " + bad.string()) == 2);
  CHECK(run_cli("train --config /nonexistent/zzz.json") == 2);
}

TEST_SUITE_END();
