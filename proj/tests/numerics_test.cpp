#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mfsoc/integrate.hpp"
#include "mfsoc/linalg.hpp"
#include "mfsoc/moments.hpp"
#include "mfsoc/piecewise.hpp"
#include "mfsoc/rng.hpp"
#include "mfsoc/time_grid.hpp"

using namespace mfsoc;

TEST_CASE("time grid nodes and interval mapping") {
  TimeGrid grid(2.0, 4);
  CHECK(grid.n_nodes() == 5);
  CHECK(grid.dt() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(grid.node(0) == 0.0);
  CHECK(grid.node(4) == 2.0);
  CHECK(grid.node_interval(0) == 0);
  CHECK(grid.node_interval(3) == 3);
  CHECK(grid.node_interval(4) == 3);  // last node reads the last interval
  CHECK_THROWS_AS(TimeGrid(1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(TimeGrid(-1.0, 10), std::invalid_argument);
}

TEST_CASE("piecewise paths are right-continuous and interval-sampled") {
  Piecewise<double> path({0.0, 0.5}, {1.0, 2.0});
  CHECK(path.at_time(0.0) == 1.0);
  CHECK(path.at_time(0.49) == 1.0);
  CHECK(path.at_time(0.5) == 2.0);  // right-continuous at the breakpoint
  CHECK(path.at_time(0.9) == 2.0);

  TimeGrid grid(1.0, 4);
  CHECK(path.on_interval(grid, 0) == 1.0);
  CHECK(path.on_interval(grid, 1) == 1.0);  // interval [0.25, 0.5) keeps the left value
  CHECK(path.on_interval(grid, 2) == 2.0);
  CHECK(path.at_node(grid, 2) == 2.0);  // node on the break reads the right segment
  CHECK(path.at_node(grid, 4) == 2.0);

  CHECK(path.aligned_with(grid));
  Piecewise<double> off_grid({0.0, 0.3}, {1.0, 2.0});
  CHECK_FALSE(off_grid.aligned_with(grid));

  SUBCASE("combine merges breakpoints") {
    Piecewise<double> other({0.0, 0.75}, {10.0, 20.0});
    auto sum = combine<double>([](double a, double b) { return a + b; }, path, other);
    CHECK(sum.n_segments() == 3);
    CHECK(sum.at_time(0.1) == 11.0);
    CHECK(sum.at_time(0.6) == 12.0);
    CHECK(sum.at_time(0.8) == 22.0);
  }

  SUBCASE("constructor validation") {
    CHECK_THROWS_AS(Piecewise<double>({0.5}, {1.0}), std::invalid_argument);   // must start at 0
    CHECK_THROWS_AS(Piecewise<double>({0.0, 0.0}, {1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(Piecewise<double>({0.0}, {1.0, 2.0}), std::invalid_argument);
  }
}

namespace {

BlockState scalar_state(double v) {
  return {Matrix::Constant(1, 1, v)};
}

double rk4_exp_error(int steps) {
  TimeGrid grid(1.0, steps);
  BlockState y = scalar_state(1.0);
  double last = 0.0;
  rk4_forward(
      grid, y,
      [](const StagePoint&, const BlockState& s, BlockState& ds) { ds[0] = s[0]; },
      [&](int node, const BlockState& s) {
        if (node == steps) last = s[0](0, 0);
      });
  return std::abs(last - std::exp(1.0));
}

}  // namespace

TEST_CASE("classic fourth-order accuracy on the exponential") {
  CHECK(rk4_exp_error(100) < 1e-8);

  // halving the step divides the error by ~16
  const double e1 = rk4_exp_error(50);
  const double e2 = rk4_exp_error(100);
  CHECK(e1 / e2 > 12.0);
  CHECK(e1 / e2 < 20.0);
}

TEST_CASE("backward sweep matches the forward flow") {
  TimeGrid grid(1.0, 100);
  auto rhs = [](const StagePoint&, const BlockState& s, BlockState& ds) { ds[0] = s[0]; };

  BlockState y = scalar_state(std::exp(1.0));
  double at0 = 0.0;
  rk4_backward(grid, y, rhs, [&](int node, const BlockState& s) {
    if (node == 0) at0 = s[0](0, 0);
  });
  CHECK(at0 == doctest::Approx(1.0).epsilon(1e-10));

  SUBCASE("roundtrip is tight") {
    auto fwd = rk4_forward_path(grid, scalar_state(1.0), rhs);
    auto back = rk4_backward_path(grid, fwd.back(), rhs);
    CHECK(std::abs(back.front()[0](0, 0) - 1.0) < 1e-10);
    // every node agrees, not just the endpoint
    double worst = 0.0;
    for (int k = 0; k <= 100; ++k)
      worst = std::max(worst, std::abs(back[k][0](0, 0) - fwd[k][0](0, 0)));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("coupled blocks integrate as one system") {
  // dA = B, dB = -A from (1, 0): A = cos t, B = -sin t... with these signs
  // A(t) = cos t, B(t) = -sin t solves dA = B? cos' = -sin = B. dB = -A: -sin' = -cos. yes.
  TimeGrid grid(3.0, 300);
  BlockState y = {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.0)};
  BlockState out;
  rk4_forward(
      grid, y,
      [](const StagePoint&, const BlockState& s, BlockState& ds) {
        ds[0] = s[1];
        ds[1] = -s[0];
      },
      [&](int node, const BlockState& s) {
        if (node == 300) out = s;
      });
  CHECK(out[0](0, 0) == doctest::Approx(std::cos(3.0)).epsilon(1e-9));
  CHECK(out[1](0, 0) == doctest::Approx(-std::sin(3.0)).epsilon(1e-9));
}

TEST_CASE("divergence is reported with the failing node") {
  TimeGrid grid(1.0, 100);
  BlockState y = scalar_state(10.0);
  // dy = y^2 blows up at t = 0.1; the norm cap must trip with a located error
  try {
    rk4_forward(
        grid, y,
        [](const StagePoint&, const BlockState& s, BlockState& ds) { ds[0] = s[0] * s[0]; },
        [](int, const BlockState&) {});
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.node >= 1);
    CHECK(std::string(e.what()).find("at node") != std::string::npos);
  }
}

TEST_CASE("symmetry and positive semidefiniteness checks") {
  Matrix m(2, 2);
  m << 2.0, 1.0, 1.0, 2.0;
  CHECK(is_symmetric(m));
  CHECK(is_psd(m).psd);

  Matrix indef(2, 2);
  indef << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  const PsdResult r = is_psd(indef);
  CHECK_FALSE(r.psd);
  CHECK(r.min_eigenvalue == doctest::Approx(-1.0).epsilon(1e-12));
  // the witness direction certifies the failure
  CHECK(r.witness.dot(indef * r.witness) < 0.0);

  Matrix asym(2, 2);
  asym << 1.0, 0.5, -0.5, 1.0;
  CHECK_FALSE(is_symmetric(asym));
  CHECK_THROWS_AS(is_psd(asym), std::invalid_argument);
}

TEST_CASE("symmetric square root") {
  Matrix m(2, 2);
  m << 4.0, 2.0, 2.0, 5.0;
  const Matrix u = symmetric_sqrt(m);
  CHECK((u.transpose() * u - m).norm() < 1e-12);

  SUBCASE("tiny negative eigenvalues clamp to zero") {
    Matrix nearly = Matrix::Zero(2, 2);
    nearly(0, 0) = 1.0;
    nearly(1, 1) = -1e-14;
    Matrix clamped = Matrix::Zero(2, 2);
    clamped(0, 0) = 1.0;
    const Matrix v = symmetric_sqrt(nearly);
    CHECK((v.transpose() * v - clamped).norm() < 1e-10);
  }

  SUBCASE("genuinely indefinite input throws") {
    Matrix indef(2, 2);
    indef << 1.0, 0.0, 0.0, -0.5;
    CHECK_THROWS_AS(symmetric_sqrt(indef), std::invalid_argument);
  }
}

TEST_CASE("counter-based generator known answers") {
  // two published vectors for the 10-round 4x32 configuration
  const auto zero = philox::block({0u, 0u, 0u, 0u}, {0u, 0u});
  CHECK(zero[0] == 0x6627e8d5u);
  CHECK(zero[1] == 0xe169c58du);
  CHECK(zero[2] == 0xbc57ac4cu);
  CHECK(zero[3] == 0x9b00dbd8u);

  const auto pi = philox::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                {0xa4093822u, 0x299f31d0u});
  CHECK(pi[0] == 0xd16cfe09u);
  CHECK(pi[1] == 0x94fdccebu);
  CHECK(pi[2] == 0x5001e420u);
  CHECK(pi[3] == 0x24126ea1u);
}

TEST_CASE("normal streams: random access, independence, moments") {
  NormalStream a(42, 0, 7);
  SequentialNormals seq{NormalStream(42, 0, 7)};
  for (int i = 0; i < 64; ++i) CHECK(seq.next() == a.at(i));

  NormalStream b(42, 0, 8);
  NormalStream c(42, 1, 7);
  CHECK(a.at(0) != b.at(0));  // different stream id
  CHECK(a.at(0) != c.at(0));  // different purpose

  const int n = 100000;
  double mean = 0.0, var = 0.0;
  for (int i = 0; i < n; ++i) mean += a.at(i);
  mean /= n;
  for (int i = 0; i < n; ++i) var += (a.at(i) - mean) * (a.at(i) - mean);
  var /= (n - 1);
  CHECK(std::abs(mean) < 0.02);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("affine moment propagation reproduces the OU law") {
  // dX = -X dt + dW from X(0) = 1: mean e^{-t}, variance (1 - e^{-2t}) / 2
  TimeGrid grid(1.0, 400);
  Vector mu0 = Vector::Constant(1, 1.0);
  Matrix s0 = Matrix::Zero(1, 1);
  double mean_T = 0.0, var_T = 0.0;
  propagate_affine_moments(
      grid, mu0, s0,
      [](int, Stage, Matrix& a) { a(0, 0) = -1.0; },
      [](int, Stage, Vector& b) { b(0) = 0.0; },
      [](int, Matrix& c) { c(0, 0) = 1.0; },
      [&](int node, const Vector& mu, const Matrix& sigma) {
        if (node == 400) {
          mean_T = mu(0);
          var_T = sigma(0, 0);
        }
      });
  CHECK(mean_T == doctest::Approx(std::exp(-1.0)).epsilon(1e-8));
  CHECK(var_T == doctest::Approx(0.5 * (1.0 - std::exp(-2.0))).epsilon(1e-8));
}

TEST_CASE("pure diffusion accumulates covariance linearly") {
  TimeGrid grid(2.0, 100);
  Matrix dd(2, 2);
  dd << 0.09, 0.0, 0.0, 0.04;  // D D^T for D = diag(0.3, 0.2)
  Matrix at_T;
  propagate_affine_moments(
      grid, Vector::Zero(2), Matrix::Zero(2, 2),
      [](int, Stage, Matrix& a) { a.setZero(); },
      [](int, Stage, Vector& b) { b.setZero(); },
      [&](int, Matrix& c) { c = dd; },
      [&](int node, const Vector&, const Matrix& sigma) {
        if (node == 100) at_T = sigma;
      });
  CHECK((at_T - 2.0 * dd).norm() < 1e-12);
}
