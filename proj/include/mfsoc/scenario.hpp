#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mfsoc/linalg.hpp"
#include "mfsoc/piecewise.hpp"
#include "mfsoc/time_grid.hpp"

namespace mfsoc {

/// Thrown by parse_scenario when the input text cannot be turned into a
/// ScenarioParams at all (malformed JSON, non-rectangular arrays, missing
/// required keys). Semantic problems are reported by validate() instead.
struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dims {
  int n = 0;   ///< state dimension (major and each minor)
  int n1 = 0;  ///< control dimension
  int n2 = 0;  ///< noise dimension
};

/// Raw coefficient segments as parsed, before any well-formedness guarantee.
/// validate() reports ordering/coverage problems; to_piecewise() converts for
/// solver use and throws std::invalid_argument when malformed.
template <class V>
struct SegmentList {
  std::vector<double> starts;
  std::vector<V> values;

  static SegmentList constant(V v) { return {{0.0}, {std::move(v)}}; }

  [[nodiscard]] bool well_formed() const {
    if (starts.empty() || starts.size() != values.size()) return false;
    if (starts.front() != 0.0) return false;
    for (std::size_t i = 1; i < starts.size(); ++i)
      if (starts[i] <= starts[i - 1]) return false;
    return true;
  }

  [[nodiscard]] Piecewise<V> to_piecewise() const { return Piecewise<V>(starts, values); }
};

/// How the N minor initial states are produced for a given population size.
struct MinorInit {
  enum class Mode { kExplicit, kGrid };
  Mode mode = Mode::kGrid;
  std::vector<Vector> values;      ///< explicit mode: one state per minor
  std::string rule = "constant";   ///< grid mode: "constant" | "spread"
  double radius = 0.0;             ///< spread mode half-width around m0

  /// Initial states for N minors. "constant" repeats m0 (the population mean
  /// then equals m0 exactly for every N); "spread" places them at
  /// m0 + radius * (2i - N - 1)/(N - 1), i = 1..N, an integer-symmetric fan.
  [[nodiscard]] std::vector<Vector> states(int N, const Vector& m0) const;
};

/// Model data: dynamics/cost coefficients as piecewise-constant segment
/// lists, terminal weights, and initial conditions. Field names follow the
/// usual linear-quadratic naming (A/B/D dynamics, Q/R weights); the 0
/// suffix marks the major player, H* are the coupling maps into the tracking
/// targets, eta* their constant offsets.
struct ScenarioParams {
  Dims dims;
  double horizon = 0.0;
  double lambda = 1.0;  ///< weight of the average minor cost in the social cost

  SegmentList<Matrix> A0, B0, F0, D0;      // major dynamics
  SegmentList<Matrix> A, B, F, G, D;       // minor dynamics
  SegmentList<Matrix> H0, H1, H2;          // tracking couplings
  SegmentList<Matrix> Q0, Q, R0, R;        // running weights
  SegmentList<Vector> eta0, eta;           // tracking offsets

  Matrix H0f, H1f, H2f, Q0f, Qf;           // terminal analogues
  Vector eta0f, etaf;

  Vector z0;  ///< major initial state
  Vector m0;  ///< minor initial mean
  MinorInit minor_init;
};

struct Violation {
  std::string field;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  void add(std::string field, std::string message) {
    violations.push_back({std::move(field), std::move(message)});
  }
  [[nodiscard]] bool ok() const { return violations.empty(); }
  [[nodiscard]] std::string to_text() const;  // one "FIELD: message" line each
};

/// Numerical guardrails shared by validation and the solvers.
struct Tolerances {
  double positivity_floor = 1e-6;  ///< R0, R (and the joint weight) >= floor * I
  double magnitude_cap = 1e6;      ///< coefficient entries and solver norms
  double psd_tol = 1e-10;          ///< min eig >= -psd_tol * (1 + ||.||_F)
  double symmetry_tol = 1e-12;
};

/// Parse a JSON scenario (see README for the schema). Throws ScenarioError.
[[nodiscard]] ScenarioParams parse_scenario(const std::string& json_text);

/// Semantic checks: dims, segment coverage and grid alignment, symmetry and
/// positivity of the weights, magnitude caps, init block consistency.
[[nodiscard]] ValidationReport validate(const ScenarioParams& params, const TimeGrid& grid,
                                        const Tolerances& tol = {});

/// Normalized coefficient paths (validated segment lists as Piecewise).
/// Solvers construct this once; throws std::invalid_argument when a segment
/// list is malformed (run validate() first for a readable report).
struct CoefficientPaths {
  Piecewise<Matrix> A0, B0, F0, D0, A, B, F, G, D, H0, H1, H2, Q0, Q, R0, R;
  Piecewise<Vector> eta0, eta;
  explicit CoefficientPaths(const ScenarioParams& params);
};

/// Cost coefficients of the person-by-person optimality system, derived from
/// the tracking weights: cross term K0, quadratic blocks M0/M, offsets
/// nu0/nu, and the lambda-scaled minor control weight.
struct DerivedCoefficients {
  Piecewise<Matrix> K0, M0, M, Rlam;
  Piecewise<Vector> nu0, nu;
  Matrix K0f, M0f, Mf;
  Vector nu0f, nuf;
};

[[nodiscard]] DerivedCoefficients derive_coefficients(const ScenarioParams& params);

/// The 2n-dimensional limit-pair system (major state stacked over the minor
/// mean) with its quadratic cost data and the block control weight
/// blockdiag(R0, lambda R) used by the aggregate Riccati equation.
struct AggregateSystem {
  int n = 0, n1 = 0, n2 = 0;
  Piecewise<Matrix> drift;           // [[A0, F0], [G, A + F]]
  Piecewise<Matrix> input_major;     // [B0; 0]
  Piecewise<Matrix> input_mean;      // [0; B]
  Piecewise<Matrix> noise;           // [D0; 0]
  Piecewise<Matrix> state_cost;      // [[M0, K0], [K0^T, M]]
  Piecewise<Vector> cost_shift;      // [nu0; nu]
  Piecewise<Matrix> input_block;     // blockdiag(B0, B)
  Piecewise<Matrix> control_weight;  // blockdiag(R0, lambda R)
  Piecewise<Matrix> feedback_quad;   // input_block control_weight^{-1} input_block^T
  Matrix state_cost_final;
  Vector cost_shift_final;
};

[[nodiscard]] AggregateSystem assemble_aggregate(const ScenarioParams& params,
                                                 const DerivedCoefficients& derived);

/// Constructive positive-semidefiniteness certificate for the aggregate state
/// cost: on every segment (and the terminal block) the cost is rebuilt as
/// U0^T U0 + U^T U from square roots of Q0 and Q; `max_residual` is the worst
/// Frobenius reconstruction error. On failure `witness_*` carry an
/// eigen-direction with negative value.
struct PsdCertificate {
  bool ok = false;
  double max_residual = 0.0;
  int witness_segment = -1;  ///< -1: none; n_segments(): terminal block
  double witness_eigenvalue = 0.0;
  Vector witness;
  std::string detail;
};

[[nodiscard]] PsdCertificate check_q0_psd(const ScenarioParams& params,
                                          const DerivedCoefficients& derived,
                                          const AggregateSystem& agg,
                                          const Tolerances& tol = {});

}  // namespace mfsoc
