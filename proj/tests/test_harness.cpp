#include <stdexcept>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fpf/harness.hpp"
#include "fpf/kernels.hpp"

using namespace fpf;
using nlohmann::json;

namespace {

ExperimentConfig small_convergence() {
  auto c = ExperimentConfig::defaults(ExperimentKind::convergence);
  c.grid = TimeGrid::make(0.5, 1e-3);
  c.N_list = {10, 20, 40};
  c.n_trials = 30;
  c.checkpoints = {0.25, 0.5};
  c.n_boot = 200;
  return c;
}

std::string trials_text(const ExperimentResult& r) {
  std::ostringstream os;
  write_trials_csv(os, r);
  return os.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fpflab_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config JSON round trip and hashing") {
  auto c = ExperimentConfig::defaults(ExperimentKind::chaos);
  c.master_seed = 0xFFFFFFFFFFFFFFF1ull;
  const auto back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 16);
  auto d = c;
  d.n_trials = 201;
  CHECK(d.hash() != c.hash());
  d = c;
  d.workers = 8;
  d.output_dir = "elsewhere";
  CHECK(d.hash() == c.hash());
}

TEST_CASE("config validation") {
  const json base = {{"experiment", "convergence"}};
  CHECK_NOTHROW(ExperimentConfig::from_json(base));
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"experiment", "convergence"}, {"bogus", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"experiment", "convergence"}, {"N_list", {4, 50}}}), std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"experiment", "convergence"}, {"p", 2}, {"N_list", {8, 50}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"experiment", "convergence"}, {"checkpoints", {1.0005}}}),
                  std::exception);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"experiment", "chaos"}}, ExperimentKind::convergence),
                  std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"experiment", "nope"}}), std::invalid_argument);
  const json unstable = {{"experiment", "convergence"},
                         {"model", {{"A", {0.5}}, {"H", {1}}, {"sigma_B", {1}}, {"m0", {0}}, {"Sigma0", {1}}}}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(unstable), std::invalid_argument);
  const json vec = {{"experiment", "chaos"},
                    {"model",
                     {{"d", 2}, {"m", 2}, {"A", {-1, 0, 0, -1}}, {"H", {1, 0, 0, 1}}, {"sigma_B", {1, 0, 0, 1}},
                      {"m0", {0, 0}}, {"Sigma0", {1, 0, 0, 1}}}}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(vec), std::invalid_argument);
}

TEST_CASE("seed tree separates experiments, N and trials") {
  const auto a = trial_seed(1, "convergence", 50, 0);
  CHECK(a == trial_seed(1, "convergence", 50, 0));
  CHECK(a != trial_seed(1, "convergence", 50, 1));
  CHECK(a != trial_seed(1, "convergence", 100, 0));
  CHECK(a != trial_seed(1, "chaos", 50, 0));
  CHECK(a != trial_seed(2, "convergence", 50, 0));
}

TEST_CASE("synthetic convergence: slope exactly -1") {
  auto c = small_convergence();
  c.synthetic_c = 2.0;
  const auto r = run_convergence(c);
  for (double t : c.checkpoints)
    for (const char* q : {"cov_err_2p", "mean_err"}) {
      const auto* f = r.find_fit(q, t);
      REQUIRE(f != nullptr);
      CHECK(f->fit.slope == doctest::Approx(-1.0).epsilon(1e-12));
      CHECK(f->fit.r_squared == doctest::Approx(1.0));
    }
  CHECK(r.all_passed());
}

TEST_CASE("synthetic chaos: slope exactly -1") {
  auto c = ExperimentConfig::defaults(ExperimentKind::chaos);
  c.N_list = {100, 200, 400};
  c.n_trials = 30;
  c.synthetic_c = 0.5;
  const auto r = run_chaos(c);
  REQUIRE(r.find_fit("particle_coupling", 2.0));
  CHECK(r.find_fit("particle_coupling", 2.0)->fit.slope == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.all_passed());
}

TEST_CASE("single-N convergence carries curves but no fit") {
  auto c = small_convergence();
  c.N_list = {20};
  c.dt_bias_check = false;
  const auto r = run_convergence(c);
  CHECK(r.curves.size() == 4);
  CHECK(r.fits.empty());
  for (const auto& ch : r.checks) CHECK(ch.name.rfind("slope_", 0) != 0);
}

TEST_CASE("trial records do not depend on worker count or kernel backend") {
  auto c = small_convergence();
  c.workers = 1;
  const std::string one = trials_text(run_convergence(c));
  c.workers = 3;
  CHECK(trials_text(run_convergence(c)) == one);

  const auto before = kernels::active().backend;
  kernels::select(kernels::Backend::scalar);
  c.workers = 2;
  const std::string scalar = trials_text(run_convergence(c));
  kernels::select(before);
  CHECK(scalar == one);
}

TEST_CASE("result directory protection") {
  auto c = small_convergence();
  c.synthetic_c = 1.0;
  const auto dir = temp_dir("protect");
  const auto r = run_convergence(c);
  write_result(r, dir, false);
  for (const char* f : {"trials.csv", "curves.csv", "fits.csv", "constants.txt", "config_echo"})
    CHECK(std::filesystem::exists(dir / f));
  CHECK_NOTHROW(write_result(r, dir, false));  // same config

  auto c2 = c;
  c2.n_trials = 31;
  const auto r2 = run_convergence(c2);
  CHECK_THROWS_AS(write_result(r2, dir, false), std::runtime_error);
  CHECK_NOTHROW(write_result(r2, dir, true));
  std::ifstream in(dir / "trials.csv");
  std::string first;
  std::getline(in, first);
  CHECK(first == "# config_hash=" + c2.hash());
  std::filesystem::remove_all(dir);
}

TEST_CASE("riccati validation scenarios") {
  SUBCASE("equilibrium start is exact") {
    auto c = ExperimentConfig::defaults(ExperimentKind::riccati_validation);
    c.grid = TimeGrid::make(1.0, 1e-3);
    c.model = ModelParams::scalar(-1, 1, 1, 0, std::sqrt(2.0) - 1);
    const auto r = run_riccati_validation(c);
    CHECK(r.all_passed());
    for (const auto& t : r.trials) CHECK(t.value < 1e-14);
  }
  SUBCASE("2x2 diagonal model agrees with the scalar closed forms") {
    auto c = ExperimentConfig::defaults(ExperimentKind::riccati_validation);
    Mat A = Mat::Zero(2, 2);
    A.diagonal() << -1, -2;
    c.model = ModelParams::make(A, Mat::Identity(2, 2), Mat::Identity(2, 2), Vec::Zero(2), Mat::Identity(2, 2));
    const auto r = run_riccati_validation(c);
    CHECK(r.all_passed());
    REQUIRE(r.find_check("sigma_inf_closed_form"));
    CHECK(r.find_check("sigma_inf_closed_form")->pass);
  }
  SUBCASE("A1 failure is refused") {
    auto c = ExperimentConfig::defaults(ExperimentKind::riccati_validation);
    c.model = ModelParams::scalar(1, 0, 1, 0, 1);
    CHECK_THROWS_AS(run_riccati_validation(c), std::domain_error);
  }
}

TEST_CASE("exactness scenarios") {
  SUBCASE("no noise and no prior spread: copies sit on the Kalman mean") {
    auto c = ExperimentConfig::defaults(ExperimentKind::exactness);
    c.model = ModelParams::scalar(-1, 1, 0, 0.8, 0);
    c.n_copies = 100;
    c.grid = TimeGrid::make(2.0, 1e-3);
    c.checkpoints = {1.0, 2.0};
    const auto r = run_exactness(c);
    CHECK(r.all_passed());
    for (const auto& t : r.trials)
      if (t.quantity == "var_copies") CHECK(t.value < 1e-24);
  }
  SUBCASE("skewed initial law still tracks the Kalman moments") {
    auto c = ExperimentConfig::defaults(ExperimentKind::exactness);
    c.initial_kind = InitialLaw::Kind::exponential;
    c.n_copies = 20000;
    c.grid = TimeGrid::make(2.0, 1e-3);
    c.checkpoints = {2.0};
    const auto r = run_exactness(c);
    CHECK(r.all_passed());
    CHECK(r.find_check("normality_t2") == nullptr);
  }
}

TEST_CASE("stability scenarios") {
  auto c = ExperimentConfig::defaults(ExperimentKind::stability);
  c.n_copies = 500;
  c.grid = TimeGrid::make(2.0, 1e-3);
  SUBCASE("identical initial laws give W2 identically zero") {
    c.alt_mean = c.model.m0;
    c.alt_cov = c.model.Sigma0;
    const auto r = run_stability(c);
    CHECK(r.all_passed());
    for (const auto& t : r.trials)
      if (t.quantity == "w2_populations") CHECK(t.value == 0.0);
  }
  SUBCASE("pure mean shift follows the Kalman mean difference") {
    c.alt_mean = c.model.m0.array() + 1.0;
    c.alt_cov = c.model.Sigma0;
    const auto r = run_stability(c);
    std::map<double, double> pop, kal;
    for (const auto& t : r.trials) {
      if (t.quantity == "w2_populations") pop[t.t] = t.value;
      if (t.quantity == "w2_kalman_laws") kal[t.t] = t.value;
    }
    for (const auto& [t, w] : pop) CHECK(w == doctest::Approx(kal[t]).epsilon(1e-9));
    CHECK(pop.rbegin()->second < 0.1 * pop.begin()->second);
  }
}
