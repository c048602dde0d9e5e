// Command-line front end for the experiments.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "fpf/harness.hpp"
#include "fpf/kernels.hpp"
#include "fpf/metrics.hpp"
#include "fpf/riccati.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  std::string out;
  bool force = false;
};

fpf::ExperimentConfig load_config(const Options& o, fpf::ExperimentKind kind) {
  fpf::ExperimentConfig cfg = fpf::ExperimentConfig::defaults(kind);
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw std::runtime_error("cannot open config " + o.config);
    cfg = fpf::ExperimentConfig::from_json(nlohmann::json::parse(in), kind);
  }
  if (o.seed) cfg.master_seed = *o.seed;
  cfg.workers = o.workers > 0 ? o.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  cfg.output_dir = o.out.empty() ? std::filesystem::path("results") / fpf::to_string(kind) : std::filesystem::path(o.out);
  return cfg;
}

int run(const Options& o, fpf::ExperimentKind kind) {
  const fpf::ExperimentConfig cfg = load_config(o, kind);
  std::cerr << "running " << fpf::to_string(kind) << " (config " << cfg.hash() << ", " << cfg.workers
            << " workers, kernels " << fpf::kernels::active().name << ")\n";
  const fpf::ExperimentResult r = fpf::run_experiment(cfg);
  fpf::write_result(r, cfg.output_dir, o.force);
  for (const auto& c : r.checks)
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  std::cout << "results in " << cfg.output_dir.string() << " (" << r.wall_seconds << " s)\n";
  return r.all_passed() ? 0 : 1;
}

// Prints the model's assumption report, stability constants and bound
// constants, then any fits and checks found in --out.
int report(const Options& o) {
  const fpf::ExperimentConfig cfg = load_config(o, fpf::ExperimentKind::convergence);
  const fpf::AssumptionReport a = fpf::validate_assumptions(cfg.model);
  std::cout << "assumptions: " << a.describe() << '\n';
  if (a.a1) {
    const fpf::StabilityConstants c = fpf::solve_are(cfg.model);
    std::cout << c.report();
    if (cfg.model.is_scalar() && a.a3) {
      const fpf::TheoreticalBounds b = fpf::theoretical_bounds(cfg.model, c, cfg.p);
      std::cout << "C1 = " << b.C1 << "\nC2 = " << b.C2 << "\nC3 = " << b.C3 << "\nC4 = " << b.C4 << '\n';
    }
  }
  if (!o.out.empty()) {
    bool ok = true;
    for (const char* f : {"fits.csv", "constants.txt"}) {
      std::ifstream in(std::filesystem::path(o.out) / f);
      if (!in) continue;
      std::cout << "\n== " << f << '\n';
      std::string line;
      while (std::getline(in, line)) {
        std::cout << line << '\n';
        if (line.rfind("all_checks = FAIL", 0) == 0) ok = false;
      }
    }
    return ok ? 0 : 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fpflab: linear feedback particle filter experiments"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config");
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--workers", o.workers, "worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", o.out, "result directory");
    sub->add_flag("--force", o.force, "overwrite results of a different config");
  };
  const std::pair<const char*, fpf::ExperimentKind> experiments[] = {
      {"validate", fpf::ExperimentKind::riccati_validation},
      {"exactness", fpf::ExperimentKind::exactness},
      {"stability", fpf::ExperimentKind::stability},
      {"convergence", fpf::ExperimentKind::convergence},
      {"chaos", fpf::ExperimentKind::chaos},
  };
  for (const auto& [name, kind] : experiments) add_common(app.add_subcommand(name, "run the " + fpf::to_string(kind) + " experiment"));
  add_common(app.add_subcommand("report", "print constants for a config and summarize a result directory"));
  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [name, kind] : experiments)
      if (app.got_subcommand(name)) return run(o, kind);
    return report(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
