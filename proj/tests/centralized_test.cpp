#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "mfsoc/centralized.hpp"
#include "mfsoc/linalg.hpp"
#include "mfsoc/scenario.hpp"

using namespace mfsoc;

namespace {

ScenarioParams load(const std::string& name) {
  std::ifstream in(std::string(MFSOC_SCENARIO_DIR) + "/" + name, std::ios::binary);
  REQUIRE_MESSAGE(bool(in), "cannot open scenario " << name);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

}  // namespace

TEST_CASE("joint assembly lays out drift, weights and offsets") {
  const ScenarioParams p = load("canonical.json");
  const JointLQ joint = assemble_social_cost(p, 2);
  CHECK(joint.N == 2);
  CHECK(joint.dim == 3);
  CHECK(joint.input_dim == 3);
  CHECK(joint.noise_dim == 3);

  const Matrix a = joint.drift.at_time(0.0);
  CHECK(a(0, 0) == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK(a(0, 1) == doctest::Approx(0.1).epsilon(1e-15));   // F0 / N
  CHECK(a(0, 2) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(a(1, 0) == doctest::Approx(0.3).epsilon(1e-15));   // G
  CHECK(a(1, 1) == doctest::Approx(-0.35).epsilon(1e-15)); // A + F / N
  CHECK(a(1, 2) == doctest::Approx(0.05).epsilon(1e-15));  // F / N
  CHECK(a(2, 1) == doctest::Approx(0.05).epsilon(1e-15));

  // weights: major selector [1, -H0/N, ...], minor selectors with -H1, -H2/N
  const Matrix q = joint.state_cost.at_time(0.0);
  CHECK(q(0, 0) == doctest::Approx(1.25).epsilon(1e-14));
  CHECK(q(0, 1) == doctest::Approx(-0.4).epsilon(1e-14));
  CHECK(q(1, 1) == doctest::Approx(0.45).epsilon(1e-14));
  CHECK(q(1, 2) == doctest::Approx(-0.05).epsilon(1e-14));
  CHECK(is_symmetric(q));

  const Vector lin = joint.state_cost_lin.at_time(0.0);
  CHECK(lin(0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(lin(1) == doctest::Approx(-0.2).epsilon(1e-14));
  CHECK(lin(2) == doctest::Approx(-0.2).epsilon(1e-14));
  CHECK(joint.cost_const.at_time(0.0) == doctest::Approx(0.25).epsilon(1e-14));

  const Matrix r = joint.control_weight.at_time(0.0);
  CHECK(r(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r(1, 1) == doctest::Approx(0.5).epsilon(1e-15));  // (lambda / N) R
  CHECK(r(2, 2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r(0, 1) == 0.0);

  const Matrix dmat = joint.noise.at_time(0.0);
  CHECK(dmat(0, 0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(dmat(1, 1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(dmat(0, 1) == 0.0);

  CHECK(joint.x_init(0) == 1.0);
  CHECK(joint.x_init(1) == 0.5);
  CHECK(joint.x_init(2) == 0.5);

  SUBCASE("population cap") {
    CHECK_THROWS_AS((void)assemble_social_cost(p, 2000), std::invalid_argument);
  }
}

TEST_CASE("decoupled social optimum is independent of the population size") {
  // with no interaction terms the social cost splits into J0 + lambda * J_minor
  // for identical minors, so the optimal value cannot depend on N
  const ScenarioParams p = load("decoupled.json");
  const TimeGrid grid(1.0, 200);
  const double j1 = solve_centralized(p, 1, grid).optimal_cost;
  const double j2 = solve_centralized(p, 2, grid).optimal_cost;
  const double j5 = solve_centralized(p, 5, grid).optimal_cost;
  CHECK(j2 == doctest::Approx(j1).epsilon(1e-10));
  CHECK(j5 == doctest::Approx(j1).epsilon(1e-10));
}

TEST_CASE("value sweep converges at fourth order in the step size") {
  const ScenarioParams p = load("canonical.json");
  const double j100 = solve_centralized(p, 2, TimeGrid(1.0, 100)).optimal_cost;
  const double j200 = solve_centralized(p, 2, TimeGrid(1.0, 200)).optimal_cost;
  const double j400 = solve_centralized(p, 2, TimeGrid(1.0, 400)).optimal_cost;
  const double ratio = (j100 - j200) / (j200 - j400);
  CHECK(ratio > 10.0);
  CHECK(ratio < 24.0);
}

TEST_CASE("moment-route cost agrees with frozen references") {
  const ScenarioParams p = load("canonical.json");
  const TimeGrid grid(1.0, 400);
  const JointLQ joint = assemble_social_cost(p, 2);
  const CentralizedSolution sol = solve_centralized(p, 2, grid);

  const double j_mom = evaluate_joint_feedback_cost(joint, sol, grid);
  CHECK(j_mom == doctest::Approx(0.75656448850830493).epsilon(1e-9));
  CHECK(sol.optimal_cost == doctest::Approx(0.75656279132269055).epsilon(1e-9));
  // the two routes differ only by time discretization, O(dt^2)
  CHECK(std::abs(j_mom - sol.optimal_cost) < 1e-5);
}

TEST_CASE("feedback gain is the weighted input map against the value quadratic") {
  const ScenarioParams p = load("canonical.json");
  const TimeGrid grid(1.0, 100);
  const CentralizedSolution sol = solve_centralized(p, 2, grid);
  REQUIRE(static_cast<int>(sol.feedback_gain.size()) == grid.n_nodes());

  // scalar data with B0 = 1, R0 = 1: the major row of R^-1 B^T Pi is Pi's row 0
  const Matrix& pi0 = sol.value_quad0;
  CHECK(is_psd(pi0).psd);
  for (int c = 0; c < 3; ++c)
    CHECK(sol.feedback_gain[0](0, c) == doctest::Approx(pi0(0, c)).epsilon(1e-12));
  // minor rows carry (lambda/N R)^-1 B^T = 2 against Pi's minor rows
  for (int c = 0; c < 3; ++c)
    CHECK(sol.feedback_gain[0](1, c) == doctest::Approx(2.0 * pi0(1, c)).epsilon(1e-12));
}

TEST_CASE("perturbation interface validates its inputs") {
  const ScenarioParams p = load("canonical.json");
  const TimeGrid grid(1.0, 160);
  const JointLQ joint = assemble_social_cost(p, 2);
  const CentralizedSolution sol = solve_centralized(p, 2, grid);

  std::vector<Vector> dirs(16, Vector::Ones(3));
  CHECK_NOTHROW((void)evaluate_joint_feedback_cost(joint, sol, grid, &dirs, 1e-3));

  std::vector<Vector> wrong_count(8, Vector::Ones(3));
  CHECK_THROWS_AS((void)evaluate_joint_feedback_cost(joint, sol, grid, &wrong_count, 1e-3),
                  std::invalid_argument);

  const TimeGrid odd(1.0, 150);  // not divisible into 16 segments
  const CentralizedSolution sol_odd = solve_centralized(p, 2, odd);
  CHECK_THROWS_AS((void)evaluate_joint_feedback_cost(joint, sol_odd, odd, &dirs, 1e-3),
                  std::invalid_argument);
}

TEST_CASE("open-loop perturbations never improve on the feedback law") {
  const ScenarioParams p = load("canonical.json");
  const TimeGrid grid(1.0, 512);
  const StationarityReport rep = centralized_stationarity_check(p, 2, grid, 7, 3, 1e-2);
  REQUIRE(rep.slopes.size() == 3);
  REQUIRE(rep.curvatures.size() == 3);
  CHECK(rep.max_abs_slope <= 1e-4 * (1.0 + std::abs(rep.optimal_cost)));
  for (double c : rep.curvatures) CHECK(c > 0.0);
}
