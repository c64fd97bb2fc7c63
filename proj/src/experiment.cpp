#include "vaelab/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include "vaelab/data.hpp"
#include "vaelab/equipartition.hpp"
#include "vaelab/geco.hpp"
#include "vaelab/io.hpp"
#include "vaelab/lipschitz.hpp"
#include "vaelab/phase.hpp"
#include "vaelab/rng.hpp"
#include "vaelab/tiling.hpp"
#include "vaelab/vae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vaelab::experiment {

namespace {

const std::set<std::string> kKinds = {
    "fixed-points", "phase-sweep", "lipschitz",  "equipartition",
    "elbo-train",   "geco-train",  "diagnostics"};

const std::set<std::string> kDatasetKinds = {"gaussian-blobs", "mixture-of-lines",
                                             "mixture-of-circles", "micro-bars"};

void check_block(const json& cfg, const std::string& name, std::vector<Diagnostic>& out) {
  if (!cfg.contains(name) || !cfg[name].is_object())
    out.push_back({name, "required section is missing"});
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

void validate_dataset(const json& ds, std::vector<Diagnostic>& out) {
  const std::string kind = get_or<std::string>(ds, "kind", "");
  if (kDatasetKinds.count(kind) == 0) {
    out.push_back({"dataset.kind", "unknown dataset kind '" + kind + "'"});
    return;
  }
  if (kind == "gaussian-blobs") {
    if (!ds.contains("centers") || !ds["centers"].is_array() || ds["centers"].empty())
      out.push_back({"dataset.centers", "gaussian-blobs needs a nonempty centers array"});
    if (get_or<int>(ds, "per_blob", 1) < 1)
      out.push_back({"dataset.per_blob", "must be >= 1"});
  } else if (get_or<int>(ds, "n", 1) < 1) {
    out.push_back({"dataset.n", "must be >= 1"});
  }
}

void validate_iteration(const json& it, std::vector<Diagnostic>& out) {
  if (get_or<double>(it, "beta", 0.01) <= 0.0)
    out.push_back({"iteration.beta", "must be positive"});
  if (get_or<double>(it, "tol", 1e-3) <= 0.0)
    out.push_back({"iteration.tol", "must be positive"});
  const double alpha = get_or<double>(it, "alpha", 0.9);
  if (alpha < 0.0 || alpha >= 1.0)
    out.push_back({"iteration.alpha", "must be in [0, 1)"});
  if (get_or<int>(it, "max_iter", 400) < 1)
    out.push_back({"iteration.max_iter", "must be >= 1"});
}

void validate_grid(const json& g, std::vector<Diagnostic>& out) {
  const int dim = get_or<int>(g, "dim", 2);
  if (dim < 1 || dim > 3) out.push_back({"grid.dim", "must be in [1, 3]"});
  if (get_or<int>(g, "resolution", 32) < 1)
    out.push_back({"grid.resolution", "must be >= 1"});
}

void validate_constraints(const json& train, std::vector<Diagnostic>& out) {
  if (!train.contains("constraints") || !train["constraints"].is_array() ||
      train["constraints"].empty()) {
    out.push_back({"train.constraints", "geco training needs at least one constraint"});
    return;
  }
  int idx = 0;
  for (const auto& c : train["constraints"]) {
    const std::string where = "train.constraints[" + std::to_string(idx) + "]";
    const std::string kind = get_or<std::string>(c, "kind", "");
    if (kind != "re" && kind != "fre" && kind != "pncc") {
      out.push_back({where + ".kind", "unknown constraint kind '" + kind + "'"});
    } else {
      const double kappa = get_or<double>(c, "kappa", 0.0);
      if (kind == "pncc") {
        if (!(kappa > 0.0 && kappa <= 1.0))
          out.push_back({where + ".kappa", "must be in (0, 1] for pncc"});
      } else if (kappa <= 0.0) {
        out.push_back({where + ".kappa", "must be positive"});
      }
      if (kind != "re") {
        const int side = get_or<int>(c, "image_side", 8);
        const int patch = get_or<int>(c, "patch", 4);
        if (patch < 1 || patch > side)
          out.push_back({where + ".patch", "must be in [1, image_side]"});
        if (get_or<int>(c, "stride", 4) < 1)
          out.push_back({where + ".stride", "must be >= 1"});
      }
    }
    ++idx;
  }
}

}  // namespace

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RunError(kInvalidConfig, "cannot open config: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw RunError(kInvalidConfig, std::string("config parse failure: ") + e.what());
  }
}

std::vector<Diagnostic> validate(const json& cfg) {
  std::vector<Diagnostic> out;
  if (!cfg.is_object()) {
    out.push_back({"", "config root must be an object"});
    return out;
  }
  const std::string kind = get_or<std::string>(cfg, "kind", "");
  if (kKinds.count(kind) == 0) {
    out.push_back({"kind", "unknown experiment kind '" + kind + "'"});
    return out;
  }
  if (!cfg.contains("seed") || !cfg["seed"].is_number_integer())
    out.push_back({"seed", "mandatory integer seed is missing"});
  if (get_or<std::string>(cfg, "output_dir", "").empty())
    out.push_back({"output_dir", "mandatory output directory is missing"});

  const bool needs_tiling = kind == "fixed-points" || kind == "phase-sweep" ||
                            kind == "lipschitz";
  const bool needs_dataset = kind != "equipartition" ||
      get_or<std::string>(cfg.value("equipartition", json::object()), "source", "tiling") == "tiling";

  if (needs_dataset) {
    check_block(cfg, "dataset", out);
    if (cfg.contains("dataset") && cfg["dataset"].is_object())
      validate_dataset(cfg["dataset"], out);
  }
  if (needs_tiling ||
      (kind == "equipartition" &&
       get_or<std::string>(cfg.value("equipartition", json::object()), "source", "tiling") ==
           "tiling")) {
    check_block(cfg, "grid", out);
    if (cfg.contains("grid") && cfg["grid"].is_object()) validate_grid(cfg["grid"], out);
    check_block(cfg, "iteration", out);
    if (cfg.contains("iteration") && cfg["iteration"].is_object())
      validate_iteration(cfg["iteration"], out);
  }

  if (kind == "phase-sweep") {
    check_block(cfg, "sweep", out);
    if (cfg.contains("sweep") && cfg["sweep"].is_object()) {
      const auto& sw = cfg["sweep"];
      if (sw.contains("betas")) {
        const auto& betas = sw["betas"];
        if (!betas.is_array() || betas.size() < 2) {
          out.push_back({"sweep.betas", "needs at least two values"});
        } else {
          double prev = 0.0;
          bool ok = true;
          for (const auto& b : betas) {
            const double v = b.get<double>();
            if (v <= prev) ok = false;
            prev = v;
          }
          if (!ok)
            out.push_back({"sweep.betas", "must be strictly increasing and positive"});
        }
      } else {
        const double lo = get_or<double>(sw, "beta_min", 1e-4);
        const double hi = get_or<double>(sw, "beta_max", 1.0);
        const int count = get_or<int>(sw, "beta_count", 64);
        if (!(lo > 0.0) || !(hi > lo))
          out.push_back({"sweep.beta_min", "need 0 < beta_min < beta_max"});
        if (count < 2) out.push_back({"sweep.beta_count", "must be >= 2"});
      }
      if (get_or<int>(sw, "top_k", 3) < 1) out.push_back({"sweep.top_k", "must be >= 1"});
      if (get_or<double>(sw, "merge_radius", 0.05) <= 0.0)
        out.push_back({"sweep.merge_radius", "must be positive"});
      const std::string restart = get_or<std::string>(sw, "restart", "fresh-init");
      if (restart != "fresh-init" && restart != "warm-start")
        out.push_back({"sweep.restart", "must be fresh-init or warm-start"});
    }
  }

  if (kind == "lipschitz") {
    check_block(cfg, "lipschitz", out);
    if (cfg.contains("lipschitz") && cfg["lipschitz"].is_object()) {
      const auto& lp = cfg["lipschitz"];
      const std::string mode = get_or<std::string>(lp, "mode", "global");
      if (mode != "local" && mode != "global")
        out.push_back({"lipschitz.mode", "must be local or global"});
      if (get_or<double>(lp, "radius", 1.0) <= 0.0)
        out.push_back({"lipschitz.radius", "must be positive"});
      if (get_or<double>(lp, "strength", 0.0) < 0.0)
        out.push_back({"lipschitz.strength", "must be nonnegative"});
      if (get_or<double>(lp, "lipschitz_constant", 1.0) <= 0.0)
        out.push_back({"lipschitz.lipschitz_constant", "must be positive"});
    }
  }

  if (kind == "equipartition") {
    check_block(cfg, "equipartition", out);
    if (cfg.contains("equipartition") && cfg["equipartition"].is_object()) {
      const auto& eq = cfg["equipartition"];
      if (get_or<double>(eq, "beta", 1.0) <= 0.0)
        out.push_back({"equipartition.beta", "must be positive"});
      if (get_or<double>(eq, "tol", 1e-10) <= 0.0)
        out.push_back({"equipartition.tol", "must be positive"});
      const std::string source = get_or<std::string>(eq, "source", "tiling");
      if (source != "tiling" && source != "random")
        out.push_back({"equipartition.source", "must be tiling or random"});
      if (source == "random") {
        if (get_or<int>(eq, "rows", 2) < 1) out.push_back({"equipartition.rows", "must be >= 1"});
        if (get_or<int>(eq, "cells", 3) < 1)
          out.push_back({"equipartition.cells", "must be >= 1"});
      }
    }
  }

  if (kind == "elbo-train" || kind == "geco-train") {
    check_block(cfg, "model", out);
    check_block(cfg, "train", out);
    if (cfg.contains("model") && cfg["model"].is_object()) {
      if (get_or<int>(cfg["model"], "d_z", 2) < 1)
        out.push_back({"model.d_z", "must be >= 1"});
      if (get_or<int>(cfg["model"], "hidden", 64) < 1)
        out.push_back({"model.hidden", "must be >= 1"});
    }
    if (cfg.contains("train") && cfg["train"].is_object()) {
      const auto& tr = cfg["train"];
      if (get_or<double>(tr, "lr", 1e-3) <= 0.0)
        out.push_back({"train.lr", "must be positive"});
      if (get_or<int>(tr, "steps", 1) < 0) out.push_back({"train.steps", "must be >= 0"});
      if (get_or<int>(tr, "batch", 16) < 1) out.push_back({"train.batch", "must be >= 1"});
      if (kind == "geco-train") validate_constraints(tr, out);
    }
  }

  if (kind == "diagnostics") {
    check_block(cfg, "diagnostics", out);
    if (cfg.contains("diagnostics") && cfg["diagnostics"].is_object()) {
      const auto& dg = cfg["diagnostics"];
      if (get_or<std::string>(dg, "checkpoint", "").empty())
        out.push_back({"diagnostics.checkpoint", "checkpoint path is missing"});
      if (get_or<int>(dg, "marginal_kl_samples", 10000) < 100)
        out.push_back({"diagnostics.marginal_kl_samples", "must be >= 100"});
    }
  }
  return out;
}

std::vector<Diagnostic> validate_file(const std::string& path) {
  return validate(load_config(path));
}

json RunManifest::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["version"] = version;
  j["wall_seconds"] = wall_seconds;
  j["summary"] = summary;
  j["files"] = json::array();
  for (const auto& f : files)
    j["files"].push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  return j;
}

namespace {

// Records every artifact written into the run directory so the manifest is
// complete by construction.
class ArtifactDir {
 public:
  explicit ArtifactDir(const fs::path& dir) : dir_(dir) {}

  std::string path_for(const std::string& name) {
    names_.push_back(name);
    return (dir_ / name).string();
  }

  std::vector<RunManifest::FileEntry> entries() const {
    std::vector<RunManifest::FileEntry> out;
    for (const auto& name : names_) {
      RunManifest::FileEntry e;
      e.name = name;
      const fs::path p = dir_ / name;
      e.bytes = static_cast<std::uint64_t>(fs::file_size(p));
      e.sha256 = io::sha256_file_hex(p.string());
      out.push_back(e);
    }
    return out;
  }

 private:
  fs::path dir_;
  std::vector<std::string> names_;
};

tiling::Dataset build_dataset(const json& ds, std::uint64_t seed) {
  const std::string kind = ds.at("kind").get<std::string>();
  const std::uint64_t dseed = derive_seed(seed, 100);
  if (kind == "gaussian-blobs") {
    std::vector<std::vector<double>> centers;
    for (const auto& c : ds.at("centers"))
      centers.push_back(c.get<std::vector<double>>());
    return data::gaussian_blobs(centers, get_or<double>(ds, "sigma", 0.05),
                                get_or<int>(ds, "per_blob", 40), dseed);
  }
  const int n = get_or<int>(ds, "n", 200);
  if (kind == "mixture-of-lines")
    return data::mixture_of_lines(n, dseed, get_or<double>(ds, "noise", 0.01));
  if (kind == "mixture-of-circles")
    return data::mixture_of_circles(n, dseed, get_or<double>(ds, "noise", 0.01));
  return data::micro_bars(n, dseed);
}

tiling::LatentGrid build_grid(const json& g) {
  return tiling::LatentGrid(get_or<int>(g, "dim", 2), get_or<int>(g, "resolution", 32));
}

tiling::IterationConfig build_iteration(const json& it, std::uint64_t seed) {
  tiling::IterationConfig cfg;
  cfg.beta = get_or<double>(it, "beta", 0.01);
  cfg.alpha = get_or<double>(it, "alpha", 0.9);
  cfg.max_iter = get_or<int>(it, "max_iter", 400);
  cfg.tol = get_or<double>(it, "tol", 1e-3);
  cfg.init_noise = get_or<double>(it, "init_noise", 0.1);
  cfg.seed = derive_seed(seed, 200);
  return cfg;
}

std::vector<geco::ConstraintSpec> build_constraints(const json& train) {
  std::vector<geco::ConstraintSpec> specs;
  for (const auto& c : train.at("constraints")) {
    geco::ConstraintSpec spec;
    const std::string kind = c.at("kind").get<std::string>();
    spec.kind = kind == "re"    ? geco::ConstraintKind::RE
                : kind == "fre" ? geco::ConstraintKind::FRE
                                : geco::ConstraintKind::PNCC;
    spec.kappa = c.at("kappa").get<double>();
    spec.patch = get_or<int>(c, "patch", 4);
    spec.stride = get_or<int>(c, "stride", 4);
    spec.image_side = get_or<int>(c, "image_side", 8);
    specs.push_back(spec);
  }
  return specs;
}

void write_psi_csv(const std::string& path, const Eigen::MatrixXd& psi) {
  io::CsvWriter csv(path);
  std::vector<std::string> head = {"cell"};
  for (int j = 0; j < psi.cols(); ++j) head.push_back("psi_" + std::to_string(j));
  csv.header(head);
  for (int a = 0; a < psi.rows(); ++a) {
    csv.begin_row();
    csv.cell(a);
    for (int j = 0; j < psi.cols(); ++j) csv.cell(psi(a, j));
    csv.end_row();
  }
}

void write_trajectory_csv(const std::string& path,
                          const std::vector<Eigen::MatrixXd>& trajectory) {
  io::CsvWriter csv(path);
  std::vector<std::string> head = {"iteration", "cell"};
  const int d = trajectory.empty() ? 0 : static_cast<int>(trajectory.front().cols());
  for (int j = 0; j < d; ++j) head.push_back("psi_" + std::to_string(j));
  csv.header(head);
  for (std::size_t t = 0; t < trajectory.size(); ++t)
    for (int a = 0; a < trajectory[t].rows(); ++a) {
      csv.begin_row();
      csv.cell(static_cast<int>(t));
      csv.cell(a);
      for (int j = 0; j < d; ++j) csv.cell(trajectory[t](a, j));
      csv.end_row();
    }
}

void write_trace_csv(const std::string& path, const std::vector<vae::TraceRow>& trace) {
  io::CsvWriter csv(path);
  const int L = trace.empty() ? 0 : static_cast<int>(trace.front().b.size());
  std::vector<std::string> head = {"step", "distortion", "kl"};
  for (int l = 0; l < L; ++l) head.push_back("b_" + std::to_string(l));
  for (int l = 0; l < L; ++l) head.push_back("c_ma_" + std::to_string(l));
  for (int l = 0; l < L; ++l) head.push_back("c_hat_" + std::to_string(l));
  head.push_back("elbo");
  csv.header(head);
  for (const auto& row : trace) {
    csv.begin_row();
    csv.cell(row.step);
    csv.cell(row.distortion);
    csv.cell(row.kl);
    for (int l = 0; l < L; ++l) csv.cell(row.b[l]);
    for (int l = 0; l < L; ++l) csv.cell(row.c_ma[l]);
    for (int l = 0; l < L; ++l) csv.cell(row.c_hat[l]);
    csv.cell(row.elbo);
    csv.end_row();
  }
}

json run_fixed_points(const json& cfg, std::uint64_t seed, ArtifactDir& dir) {
  const auto dataset = build_dataset(cfg.at("dataset"), seed);
  const auto grid = build_grid(cfg.at("grid"));
  const auto it = build_iteration(cfg.at("iteration"), seed);
  const bool record = get_or<bool>(cfg.at("iteration"), "record_trajectory", false);
  const auto fp = tiling::smoothed_iterate(dataset, grid, it, record);
  write_psi_csv(dir.path_for("fixed_points.csv"), fp.psi.psi);
  if (record) write_trajectory_csv(dir.path_for("trajectory.csv"), fp.trajectory);
  const auto terms = tiling::objective_terms(fp.posterior, fp.psi, dataset, grid);
  json summary;
  summary["converged"] = fp.converged;
  summary["iterations"] = fp.iterations;
  summary["dead_cell_freezes"] = fp.dead_cell_freezes;
  summary["distortion"] = terms.distortion;
  summary["rate"] = terms.rate;
  return summary;
}

json run_phase_sweep(const json& cfg, std::uint64_t seed, ArtifactDir& dir) {
  const auto dataset = build_dataset(cfg.at("dataset"), seed);
  const auto grid = build_grid(cfg.at("grid"));
  const auto& sw = cfg.at("sweep");
  phase::BetaSweepConfig sweep_cfg;
  sweep_cfg.iteration = build_iteration(cfg.at("iteration"), seed);
  if (sw.contains("betas")) {
    sweep_cfg.betas = sw.at("betas").get<std::vector<double>>();
  } else {
    sweep_cfg.betas = phase::log_spaced(get_or<double>(sw, "beta_min", 1e-4),
                                        get_or<double>(sw, "beta_max", 1.0),
                                        get_or<int>(sw, "beta_count", 64));
  }
  sweep_cfg.restart = get_or<std::string>(sw, "restart", "fresh-init") == "warm-start"
                          ? phase::RestartPolicy::WarmStart
                          : phase::RestartPolicy::FreshInit;
  sweep_cfg.top_k = get_or<int>(sw, "top_k", 3);
  sweep_cfg.merge_radius = get_or<double>(sw, "merge_radius", 0.05);
  const int threads = get_or<int>(sw, "threads", 1);

  const auto result = phase::sweep(dataset, grid, sweep_cfg, threads);

  io::CsvWriter csv(dir.path_for("sweep.csv"));
  csv.header({"beta", "u", "d2u", "cluster_count", "converged", "iterations"});
  for (std::size_t k = 0; k < result.records.size(); ++k) {
    const auto& rec = result.records[k];
    csv.begin_row();
    csv.cell(rec.beta);
    csv.cell(rec.u);
    csv.cell(result.d2u[k]);
    csv.cell(rec.cluster_count);
    csv.cell(rec.converged ? 1 : 0);
    csv.cell(rec.iterations);
    csv.end_row();
  }
  csv.close();

  json summary;
  summary["critical"] = json::array();
  for (const auto& c : result.critical)
    summary["critical"].push_back({{"beta", c.beta}, {"height", c.height}});
  int converged = 0;
  for (const auto& rec : result.records) converged += rec.converged ? 1 : 0;
  summary["converged_points"] = converged;
  summary["total_points"] = result.records.size();
  return summary;
}

json run_lipschitz(const json& cfg, std::uint64_t seed, ArtifactDir& dir) {
  const auto dataset = build_dataset(cfg.at("dataset"), seed);
  const auto grid = build_grid(cfg.at("grid"));
  const auto it = build_iteration(cfg.at("iteration"), seed);
  const auto& lp = cfg.at("lipschitz");
  lipschitz::LipschitzSpec spec;
  spec.mode = get_or<std::string>(lp, "mode", "global") == "local"
                  ? lipschitz::Mode::Local
                  : lipschitz::Mode::Global;
  spec.radius = get_or<double>(lp, "radius", 1.0);
  spec.strength = get_or<double>(lp, "strength", 0.0);
  spec.lipschitz_constant = get_or<double>(lp, "lipschitz_constant", 1.0);
  spec.rebuild_every = get_or<int>(lp, "rebuild_every", 1);

  const auto fp = lipschitz::projected_iterate(dataset, grid, it, spec, true);
  write_trajectory_csv(dir.path_for("lipschitz_trajectory.csv"), fp.trajectory);
  write_psi_csv(dir.path_for("fixed_points.csv"), fp.psi.psi);
  json summary;
  summary["converged"] = fp.converged;
  summary["iterations"] = fp.iterations;
  summary["dead_cell_freezes"] = fp.dead_cell_freezes;
  return summary;
}

json run_equipartition(const json& cfg, std::uint64_t seed, ArtifactDir& dir) {
  const auto& eq = cfg.at("equipartition");
  equipartition::EnergyTable table;
  table.beta = get_or<double>(eq, "beta", 1.0);
  json summary;
  if (get_or<std::string>(eq, "source", "tiling") == "random") {
    const int rows = get_or<int>(eq, "rows", 2);
    const int cells = get_or<int>(eq, "cells", 3);
    const double scale = get_or<double>(eq, "scale", 1.0);
    Rng rng(derive_seed(seed, 300));
    table.h.resize(rows, cells);
    for (int i = 0; i < rows; ++i)
      for (int a = 0; a < cells; ++a) table.h(i, a) = scale * rng.uniform();
  } else {
    const auto dataset = build_dataset(cfg.at("dataset"), seed);
    const auto grid = build_grid(cfg.at("grid"));
    const auto it = build_iteration(cfg.at("iteration"), seed);
    const auto fp = tiling::smoothed_iterate(dataset, grid, it);
    table.h.resize(dataset.size(), grid.cells());
    for (int i = 0; i < dataset.size(); ++i)
      for (int a = 0; a < grid.cells(); ++a)
        table.h(i, a) = (dataset.points.row(i) - fp.psi.psi.row(a)).squaredNorm();
    summary["tiling_converged"] = fp.converged;
  }
  const double tol = get_or<double>(eq, "tol", 1e-10);
  const int max_iter = get_or<int>(eq, "max_iter", 10000);
  const Eigen::VectorXd gamma = equipartition::solve_gamma(table, tol, max_iter);
  io::CsvWriter csv(dir.path_for("gamma.csv"));
  csv.header({"cell", "gamma"});
  for (int a = 0; a < gamma.size(); ++a) {
    csv.begin_row();
    csv.cell(a);
    csv.cell(gamma[a]);
    csv.end_row();
  }
  csv.close();
  summary["residual"] = equipartition::residual(gamma, table);
  summary["cells"] = gamma.size();
  return summary;
}

json run_train(const json& cfg, std::uint64_t seed, ArtifactDir& dir, bool geco) {
  const auto dataset = build_dataset(cfg.at("dataset"), seed);
  const auto& mj = cfg.at("model");
  vae::VaeArch arch;
  arch.d_x = dataset.dim();
  arch.d_z = get_or<int>(mj, "d_z", 2);
  arch.hidden = get_or<int>(mj, "hidden", 64);
  vae::GaussianVae model = vae::GaussianVae::init(arch, derive_seed(seed, 400));

  const auto& tr = cfg.at("train");
  vae::TrainConfig tc;
  tc.steps = get_or<int>(tr, "steps", 2000);
  tc.batch = get_or<int>(tr, "batch", 16);
  tc.lr = get_or<double>(tr, "lr", 1e-3);
  tc.seed = derive_seed(seed, 500);
  tc.trace_every = get_or<int>(tr, "trace_every", 1);
  tc.objective = geco ? vae::TrainConfig::Objective::Geco : vae::TrainConfig::Objective::Elbo;
  if (geco) {
    tc.constraints = build_constraints(tr);
    tc.ma_alpha = get_or<double>(tr, "ma_alpha", 0.99);
    tc.lr_b = get_or<double>(tr, "lr_b", 0.01);
  }
  const auto result = vae::train(model, dataset, tc);
  write_trace_csv(dir.path_for("trace.csv"), result.trace);
  vae::save_checkpoint(model, dir.path_for("model.ckpt"));

  json summary;
  summary["steps"] = tc.steps;
  summary["sigma_floor_events"] = result.sigma_floor_events;
  if (!result.trace.empty()) {
    summary["final_kl"] = result.trace.back().kl;
    summary["final_distortion"] = result.trace.back().distortion;
  }
  if (geco) {
    const Eigen::VectorXd b = result.lagrange.b();
    summary["final_b"] = std::vector<double>(b.data(), b.data() + b.size());
    summary["clamp_events"] = result.lagrange.clamp_events;
  }
  return summary;
}

json run_diagnostics(const json& cfg, std::uint64_t seed, ArtifactDir& dir) {
  const auto dataset = build_dataset(cfg.at("dataset"), seed);
  const auto& dg = cfg.at("diagnostics");
  const auto model = vae::load_checkpoint(dg.at("checkpoint").get<std::string>());
  const int samples = get_or<int>(dg, "marginal_kl_samples", 20000);

  const double avg = vae::average_kl(model, dataset);
  const auto marginal = vae::marginal_kl(model, dataset, samples, derive_seed(seed, 600));
  const double sopt = vae::sigma_opt(model, dataset, derive_seed(seed, 700));

  io::CsvWriter csv(dir.path_for("diagnostics.csv"));
  csv.header({"metric", "value", "stderr"});
  csv.begin_row();
  csv.cell(std::string("average_kl"));
  csv.cell(avg);
  csv.cell(0.0);
  csv.end_row();
  csv.begin_row();
  csv.cell(std::string("marginal_kl"));
  csv.cell(marginal.value);
  csv.cell(marginal.stderr_);
  csv.end_row();
  csv.begin_row();
  csv.cell(std::string("sigma_opt"));
  csv.cell(sopt);
  csv.cell(0.0);
  csv.end_row();
  csv.close();

  json summary;
  summary["average_kl"] = avg;
  summary["marginal_kl"] = marginal.value;
  summary["marginal_kl_stderr"] = marginal.stderr_;
  summary["sigma_opt"] = sopt;
  return summary;
}

}  // namespace

RunManifest run(const std::string& config_path, const std::string& output_root) {
  const auto start = std::chrono::steady_clock::now();
  const json cfg = load_config(config_path);

  const auto diagnostics = validate(cfg);
  if (!diagnostics.empty()) {
    const std::string kind = cfg.is_object() ? get_or<std::string>(cfg, "kind", "") : "";
    std::string msg;
    for (const auto& d : diagnostics)
      msg += d.field + ": " + d.message + "; ";
    if (cfg.is_object() && kKinds.count(kind) == 0)
      throw RunError(kUnknownKind, "unknown experiment kind; " + msg);
    throw RunError(kInvalidConfig, "invalid config: " + msg);
  }

  fs::path out_dir = cfg.at("output_dir").get<std::string>();
  if (!output_root.empty()) out_dir = fs::path(output_root) / out_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw RunError(kUnwritableOutput, "cannot create output dir: " + out_dir.string());
  {
    std::ofstream probe(out_dir / ".write_probe");
    if (!probe) throw RunError(kUnwritableOutput, "output dir not writable: " + out_dir.string());
  }
  fs::remove(out_dir / ".write_probe");

  RunManifest manifest;
  manifest.version = kVersion;
  manifest.config_hash = io::sha256_hex(io::read_text_file(config_path));

  const std::string kind = cfg.at("kind").get<std::string>();
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  ArtifactDir dir(out_dir);
  try {
    if (kind == "fixed-points")
      manifest.summary = run_fixed_points(cfg, seed, dir);
    else if (kind == "phase-sweep")
      manifest.summary = run_phase_sweep(cfg, seed, dir);
    else if (kind == "lipschitz")
      manifest.summary = run_lipschitz(cfg, seed, dir);
    else if (kind == "equipartition")
      manifest.summary = run_equipartition(cfg, seed, dir);
    else if (kind == "elbo-train")
      manifest.summary = run_train(cfg, seed, dir, false);
    else if (kind == "geco-train")
      manifest.summary = run_train(cfg, seed, dir, true);
    else
      manifest.summary = run_diagnostics(cfg, seed, dir);
  } catch (const RunError&) {
    throw;
  } catch (const std::exception& e) {
    throw RunError(kExecutionFailure, e.what());
  }

  manifest.files = dir.entries();
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  io::write_text_file((out_dir / "manifest.json").string(), manifest.to_json().dump(2) + "\n");
  return manifest;
}

}  // namespace vaelab::experiment
