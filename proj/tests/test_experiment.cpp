#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "vaelab/experiment.hpp"
#include "vaelab/io.hpp"

using namespace vaelab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string write_config(const fs::path& dir, const std::string& name, const json& cfg) {
  const fs::path p = dir / name;
  std::ofstream out(p);
  out << cfg.dump(2);
  return p.string();
}

json minimal_fixed_points(const std::string& out_dir) {
  json cfg;
  cfg["kind"] = "fixed-points";
  cfg["seed"] = 7;
  cfg["output_dir"] = out_dir;
  cfg["dataset"] = {{"kind", "gaussian-blobs"},
                    {"centers", json::array({json::array({0.1, 0.2})})},
                    {"sigma", 0.0},
                    {"per_blob", 1}};
  cfg["grid"] = {{"dim", 2}, {"resolution", 4}};
  cfg["iteration"] = {{"beta", 0.01}, {"alpha", 0.0}, {"max_iter", 50}, {"tol", 1e-9}};
  return cfg;
}

}  // namespace

TEST_CASE("validate: well-formed configs pass, defects are named") {
  TempDir tmp("vaelab_test_validate");
  const json good = minimal_fixed_points((tmp.path / "out").string());
  CHECK(experiment::validate(good).empty());

  json bad = good;
  bad.erase("seed");
  auto diags = experiment::validate(bad);
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].field == "seed");

  bad = good;
  bad["kind"] = "mystery";
  diags = experiment::validate(bad);
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].field == "kind");

  // beta list must increase
  json sweep = good;
  sweep["kind"] = "phase-sweep";
  sweep["sweep"] = {{"betas", json::array({0.1, 0.05, 0.2})}, {"top_k", 3}};
  diags = experiment::validate(sweep);
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].field == "sweep.betas");

  // kappa must be positive for RE
  json train = good;
  train["kind"] = "geco-train";
  train["model"] = {{"d_z", 2}, {"hidden", 8}};
  train["train"] = {{"steps", 5},
                    {"batch", 4},
                    {"constraints", json::array({{{"kind", "re"}, {"kappa", -0.1}}})}};
  diags = experiment::validate(train);
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].field == "train.constraints[0].kappa");
}

TEST_CASE("validate_file reports parse failures with position info") {
  TempDir tmp("vaelab_test_parse");
  const fs::path p = tmp.path / "broken.json";
  std::ofstream(p) << "{ \"kind\": ";
  CHECK_THROWS_AS(experiment::validate_file(p.string()), experiment::RunError);
  try {
    experiment::validate_file(p.string());
  } catch (const experiment::RunError& e) {
    CHECK(e.code == experiment::kInvalidConfig);
    CHECK(std::string(e.what()).find("parse") != std::string::npos);
  }
}

TEST_CASE("run: minimal fixed-points config succeeds and manifests its artifacts") {
  TempDir tmp("vaelab_test_run_min");
  const json cfg = minimal_fixed_points((tmp.path / "out").string());
  const auto path = write_config(tmp.path, "cfg.json", cfg);
  const auto manifest = experiment::run(path);
  CHECK(manifest.summary["converged"].get<bool>());
  CHECK(manifest.version == std::string(experiment::kVersion));
  REQUIRE(manifest.files.size() == 1);
  CHECK(manifest.files[0].name == "fixed_points.csv");

  // manifest completeness: everything in the directory except manifest.json
  // is listed
  std::set<std::string> on_disk;
  for (const auto& entry : fs::directory_iterator(tmp.path / "out"))
    on_disk.insert(entry.path().filename().string());
  CHECK(on_disk.count("manifest.json") == 1);
  on_disk.erase("manifest.json");
  std::set<std::string> listed;
  for (const auto& f : manifest.files) listed.insert(f.name);
  CHECK(on_disk == listed);
}

TEST_CASE("run: identical configs produce byte-identical data files") {
  TempDir tmp("vaelab_test_repro");
  json cfg;
  cfg["kind"] = "phase-sweep";
  cfg["seed"] = 11;
  cfg["dataset"] = {{"kind", "mixture-of-lines"}, {"n", 30}};
  cfg["grid"] = {{"dim", 2}, {"resolution", 4}};
  cfg["iteration"] = {{"beta", 0.01}, {"max_iter", 80}};
  cfg["sweep"] = {{"beta_min", 1e-3}, {"beta_max", 0.5}, {"beta_count", 8}};

  cfg["output_dir"] = (tmp.path / "a").string();
  const auto run_a = experiment::run(write_config(tmp.path, "a.json", cfg));
  cfg["output_dir"] = (tmp.path / "b").string();
  const auto run_b = experiment::run(write_config(tmp.path, "b.json", cfg));

  REQUIRE(run_a.files.size() == run_b.files.size());
  for (std::size_t i = 0; i < run_a.files.size(); ++i) {
    CHECK(run_a.files[i].name == run_b.files[i].name);
    CHECK(run_a.files[i].sha256 == run_b.files[i].sha256);
  }
}

TEST_CASE("run: training, diagnostics, equipartition and lipschitz kinds emit their schemas") {
  TempDir tmp("vaelab_test_kinds");

  json train;
  train["kind"] = "geco-train";
  train["seed"] = 3;
  train["output_dir"] = (tmp.path / "train").string();
  train["dataset"] = {{"kind", "micro-bars"}, {"n", 12}};
  train["model"] = {{"d_z", 2}, {"hidden", 8}};
  train["train"] = {{"steps", 12},
                    {"batch", 4},
                    {"lr", 1e-3},
                    {"constraints", json::array({{{"kind", "re"}, {"kappa", 0.3}}})}};
  const auto tm = experiment::run(write_config(tmp.path, "train.json", train));
  std::set<std::string> names;
  for (const auto& f : tm.files) names.insert(f.name);
  CHECK(names == std::set<std::string>{"trace.csv", "model.ckpt"});
  {
    std::ifstream trace(tmp.path / "train" / "trace.csv");
    std::string header;
    std::getline(trace, header);
    CHECK(header == "step,distortion,kl,b_0,c_ma_0,c_hat_0,elbo");
  }

  json diag;
  diag["kind"] = "diagnostics";
  diag["seed"] = 4;
  diag["output_dir"] = (tmp.path / "diag").string();
  diag["dataset"] = {{"kind", "micro-bars"}, {"n", 12}};
  diag["diagnostics"] = {{"checkpoint", (tmp.path / "train" / "model.ckpt").string()},
                         {"marginal_kl_samples", 2000}};
  const auto dm = experiment::run(write_config(tmp.path, "diag.json", diag));
  CHECK(dm.summary.contains("average_kl"));
  CHECK(dm.summary.contains("sigma_opt"));

  json equi;
  equi["kind"] = "equipartition";
  equi["seed"] = 5;
  equi["output_dir"] = (tmp.path / "equi").string();
  equi["equipartition"] = {{"source", "random"}, {"rows", 2}, {"cells", 3}, {"beta", 1.0}};
  const auto em = experiment::run(write_config(tmp.path, "equi.json", equi));
  CHECK(em.summary["residual"].get<double>() < 1e-10);
  {
    std::ifstream gamma(tmp.path / "equi" / "gamma.csv");
    std::string header;
    std::getline(gamma, header);
    CHECK(header == "cell,gamma");
  }

  json lip;
  lip["kind"] = "lipschitz";
  lip["seed"] = 6;
  lip["output_dir"] = (tmp.path / "lip").string();
  lip["dataset"] = {{"kind", "mixture-of-circles"}, {"n", 25}};
  lip["grid"] = {{"dim", 2}, {"resolution", 4}};
  lip["iteration"] = {{"beta", 0.02}, {"max_iter", 60}, {"tol", 1e-4}};
  lip["lipschitz"] = {{"mode", "global"}, {"strength", 0.05}};
  const auto lm = experiment::run(write_config(tmp.path, "lip.json", lip));
  names.clear();
  for (const auto& f : lm.files) names.insert(f.name);
  CHECK(names == std::set<std::string>{"lipschitz_trajectory.csv", "fixed_points.csv"});
}

TEST_CASE("run: error codes distinguish config, kind and output failures") {
  TempDir tmp("vaelab_test_errors");

  json unknown = minimal_fixed_points((tmp.path / "o1").string());
  unknown["kind"] = "not-a-kind";
  try {
    experiment::run(write_config(tmp.path, "u.json", unknown));
    CHECK(false);
  } catch (const experiment::RunError& e) {
    CHECK(e.code == experiment::kUnknownKind);
  }

  json invalid = minimal_fixed_points((tmp.path / "o2").string());
  invalid["iteration"]["beta"] = -1.0;
  try {
    experiment::run(write_config(tmp.path, "i.json", invalid));
    CHECK(false);
  } catch (const experiment::RunError& e) {
    CHECK(e.code == experiment::kInvalidConfig);
  }

  // output path collides with an existing file
  const fs::path blocker = tmp.path / "blocked";
  std::ofstream(blocker) << "x";
  json unwritable = minimal_fixed_points(blocker.string());
  try {
    experiment::run(write_config(tmp.path, "w.json", unwritable));
    CHECK(false);
  } catch (const experiment::RunError& e) {
    CHECK(e.code == experiment::kUnwritableOutput);
  }
}

TEST_CASE("run: output root override relocates the run directory") {
  TempDir tmp("vaelab_test_root");
  json cfg = minimal_fixed_points("nested/run");
  const auto path = write_config(tmp.path, "cfg.json", cfg);
  experiment::run(path, (tmp.path / "root").string());
  CHECK(fs::exists(tmp.path / "root" / "nested" / "run" / "fixed_points.csv"));
  CHECK(fs::exists(tmp.path / "root" / "nested" / "run" / "manifest.json"));
}
