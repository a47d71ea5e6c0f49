#include <doctest.h>

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsoc/scenario.hpp"
#include "mfsoc/time_grid.hpp"

using namespace mfsoc;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(bool(in), "cannot open " << path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ScenarioParams load_canonical() {
  return parse_scenario(slurp(std::string(MFSOC_SCENARIO_DIR) + "/canonical.json"));
}

bool mentions(const ValidationReport& rep, const std::string& field) {
  for (const Violation& v : rep.violations)
    if (v.field.find(field) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("canonical scenario parses and validates") {
  const ScenarioParams p = load_canonical();
  CHECK(p.dims.n == 1);
  CHECK(p.dims.n1 == 1);
  CHECK(p.dims.n2 == 1);
  CHECK(p.horizon == 1.0);
  CHECK(p.lambda == 1.0);
  CHECK(p.A0.values.at(0)(0, 0) == -0.3);
  CHECK(p.eta.values.at(0)(0) == 0.5);
  CHECK(p.etaf(0) == 0.5);
  CHECK(p.z0(0) == 1.0);
  CHECK(p.m0(0) == 0.5);

  const ValidationReport rep = validate(p, TimeGrid(p.horizon, 400));
  CHECK_MESSAGE(rep.ok(), rep.to_text());
}

TEST_CASE("parser reports malformed input and missing members") {
  CHECK_THROWS_AS((void)parse_scenario("{ not json"), ScenarioError);
  try {
    ScenarioParams p = parse_scenario(R"({"dims": {"n": 1, "n1": 1, "n2": 1}})");
    FAIL("expected ScenarioError");
  } catch (const ScenarioError& e) {
    // the message names the missing member
    CHECK(std::string(e.what()).find("horizon") != std::string::npos);
  }
}

TEST_CASE("validation catches the classic input mistakes") {
  const TimeGrid grid(1.0, 400);

  SUBCASE("indefinite state weight") {
    ScenarioParams p = load_canonical();
    p.Q.values[0](0, 0) = -0.5;
    const ValidationReport rep = validate(p, grid);
    CHECK_FALSE(rep.ok());
    CHECK(mentions(rep, "Q[0]"));
  }

  SUBCASE("control weight below the positivity floor") {
    ScenarioParams p = load_canonical();
    p.R0.values[0](0, 0) = 1e-9;
    const ValidationReport rep = validate(p, grid);
    CHECK_FALSE(rep.ok());
    CHECK(mentions(rep, "R0[0]"));
  }

  SUBCASE("shape mismatch against the declared dimensions") {
    ScenarioParams p = load_canonical();
    p.B.values[0] = Matrix::Identity(2, 2);
    const ValidationReport rep = validate(p, grid);
    CHECK_FALSE(rep.ok());
    CHECK(mentions(rep, "B"));
  }

  SUBCASE("overlapping segments") {
    ScenarioParams p = load_canonical();
    p.A0.starts = {0.0, 0.0};
    p.A0.values = {Matrix::Constant(1, 1, -0.3), Matrix::Constant(1, 1, -0.2)};
    const ValidationReport rep = validate(p, grid);
    CHECK_FALSE(rep.ok());
    CHECK(mentions(rep, "A0"));
  }

  SUBCASE("breakpoint off the solver grid") {
    ScenarioParams p = load_canonical();
    p.A0.starts = {0.0, 0.31};  // not a node of a 400-step unit-horizon grid
    p.A0.values = {Matrix::Constant(1, 1, -0.3), Matrix::Constant(1, 1, -0.2)};
    const ValidationReport rep = validate(p, TimeGrid(1.0, 10));
    CHECK_FALSE(rep.ok());
    CHECK(mentions(rep, "A0"));
  }

  SUBCASE("to_text carries one line per violation") {
    ScenarioParams p = load_canonical();
    p.R0.values[0](0, 0) = -1.0;
    p.z0 = Vector::Zero(3);
    const ValidationReport rep = validate(p, grid);
    REQUIRE(rep.violations.size() >= 2);
    const std::string text = rep.to_text();
    CHECK(text.find("R0[0]") != std::string::npos);
    CHECK(text.find("init.z0") != std::string::npos);
  }
}

TEST_CASE("minor initial states") {
  MinorInit init;

  SUBCASE("constant rule repeats the mean-field start") {
    const Vector m0 = Vector::Constant(1, 0.5);
    const auto states = init.states(4, m0);
    REQUIRE(states.size() == 4);
    for (const Vector& x : states) CHECK(x(0) == 0.5);
  }

  SUBCASE("spread rule fans out symmetrically, preserving the mean") {
    init.rule = "spread";
    init.radius = 0.2;
    const Vector m0 = Vector::Constant(1, 0.5);
    const auto states = init.states(3, m0);
    REQUIRE(states.size() == 3);
    CHECK(states[0](0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(states[1](0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(states[2](0) == doctest::Approx(0.7).epsilon(1e-15));
    double sum = 0.0;
    for (const Vector& x : states) sum += x(0);
    CHECK(sum / 3.0 == doctest::Approx(0.5).epsilon(1e-15));
  }

  SUBCASE("explicit mode must match the population size") {
    init.mode = MinorInit::Mode::kExplicit;
    init.values = {Vector::Constant(1, 0.1), Vector::Constant(1, 0.9)};
    CHECK(init.states(2, Vector::Constant(1, 0.5)).size() == 2);
    CHECK_THROWS_AS((void)init.states(3, Vector::Constant(1, 0.5)), std::invalid_argument);
  }
}

TEST_CASE("derived coefficients on a hand-worked case") {
  // lambda = 3, Q0 = 2, Q = 1, H0 = 0.5, H1 = 1, H2 = 0, eta = 1, eta0 = 0
  ScenarioParams p = load_canonical();
  p.lambda = 3.0;
  p.Q0.values[0](0, 0) = 2.0;
  p.H0.values[0](0, 0) = 0.5;
  p.H1.values[0](0, 0) = 1.0;
  p.H2.values[0](0, 0) = 0.0;
  p.eta.values[0](0) = 1.0;
  p.eta0.values[0](0) = 0.0;

  const DerivedCoefficients d = derive_coefficients(p);
  CHECK(d.K0.at_time(0.0)(0, 0) == doctest::Approx(-4.0).epsilon(1e-14));
  CHECK(d.M0.at_time(0.0)(0, 0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(d.M.at_time(0.0)(0, 0) == doctest::Approx(3.5).epsilon(1e-14));
  CHECK(d.nu0.at_time(0.0)(0) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(d.nu.at_time(0.0)(0) == doctest::Approx(-3.0).epsilon(1e-14));
  CHECK(d.Rlam.at_time(0.0)(0, 0) == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("aggregate assembly lays out the joint blocks") {
  const ScenarioParams p = load_canonical();
  const DerivedCoefficients d = derive_coefficients(p);
  const AggregateSystem agg = assemble_aggregate(p, d);

  const Matrix drift = agg.drift.at_time(0.0);
  REQUIRE(drift.rows() == 2);
  CHECK(drift(0, 0) == doctest::Approx(-0.3).epsilon(1e-15));  // major dynamics
  CHECK(drift(0, 1) == doctest::Approx(0.2).epsilon(1e-15));   // mean-field feed-in
  CHECK(drift(1, 0) == doctest::Approx(0.3).epsilon(1e-15));   // major-to-minor
  CHECK(drift(1, 1) == doctest::Approx(-0.3).epsilon(1e-15));  // A + F

  // lambda = 1 canonical: K0 = -Q0 H0 - H1 Q (I - H2) = -0.4 - 0.4 = -0.8,
  // M0 = 1.25, M = 0.16 + 0.64 = 0.8, nu0 = 0.25, nu = 0.1 - 0.5 = -0.4
  const Matrix qc = agg.state_cost.at_time(0.0);
  CHECK(qc(0, 0) == doctest::Approx(1.25).epsilon(1e-14));
  CHECK(qc(0, 1) == doctest::Approx(-0.8).epsilon(1e-14));
  CHECK(qc(1, 0) == doctest::Approx(-0.8).epsilon(1e-14));
  CHECK(qc(1, 1) == doctest::Approx(0.8).epsilon(1e-14));
  const Vector vc = agg.cost_shift.at_time(0.0);
  CHECK(vc(0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(vc(1) == doctest::Approx(-0.4).epsilon(1e-14));

  const Matrix b1 = agg.input_block.at_time(0.0);
  CHECK(b1(0, 0) == 1.0);
  CHECK(b1(0, 1) == 0.0);
  CHECK(b1(1, 0) == 0.0);
  CHECK(b1(1, 1) == 1.0);
  CHECK(agg.noise.at_time(0.0)(0, 0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(agg.noise.at_time(0.0)(1, 0) == 0.0);
}

TEST_CASE("joint control weight scales the minor block by lambda") {
  ScenarioParams p = load_canonical();
  p.lambda = 2.0;
  const DerivedCoefficients d = derive_coefficients(p);
  const AggregateSystem agg = assemble_aggregate(p, d);
  const Matrix r1 = agg.control_weight.at_time(0.0);
  CHECK(r1(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r1(1, 1) == doctest::Approx(2.0).epsilon(1e-15));  // lambda * R
  // and the feedback quadratic uses its inverse
  const Matrix s = agg.feedback_quad.at_time(0.0);
  CHECK(s(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s(1, 1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(s(0, 1) == 0.0);
}

TEST_CASE("joint state-cost certificate") {
  const ScenarioParams p = load_canonical();
  const DerivedCoefficients d = derive_coefficients(p);
  AggregateSystem agg = assemble_aggregate(p, d);

  const PsdCertificate good = check_q0_psd(p, d, agg);
  CHECK(good.ok);
  CHECK(good.max_residual <= 1e-12);
  CHECK(good.witness_segment == -1);

  // tampering with the assembled block both breaks the decomposition residual
  // and produces an eigenvector witness
  Matrix tampered = agg.state_cost.value(0);
  tampered(0, 0) -= 5.0;
  std::vector<double> starts;
  std::vector<Matrix> vals;
  for (int i = 0; i < agg.state_cost.n_segments(); ++i) {
    starts.push_back(agg.state_cost.start(i));
    vals.push_back(agg.state_cost.value(i));
  }
  vals[0] = tampered;
  agg.state_cost = Piecewise<Matrix>(starts, vals);

  const PsdCertificate bad = check_q0_psd(p, d, agg);
  CHECK_FALSE(bad.ok);
  CHECK(bad.witness_segment == 0);
  CHECK(bad.witness_eigenvalue < 0.0);
  CHECK(bad.witness.dot(tampered * bad.witness) < 0.0);
}
