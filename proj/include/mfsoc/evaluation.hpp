#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfsoc/centralized.hpp"
#include "mfsoc/mean_field.hpp"
#include "mfsoc/scenario.hpp"

namespace mfsoc {

/// Exact first and second moments of the augmented verification system: the
/// N-player population under the decentralized strategies, coupled with the
/// limit processes that drive those strategies. State layout (dimension
/// (2N+3) n): real major, N real minors, limit major, mean field, N limit
/// minors. Real and limit players share their driving noises, so the moments
/// capture every cross term the approximation-error metrics need.
struct MomentPath {
  TimeGrid grid;
  int N = 0;
  int dim = 0;  ///< (2N+3) n
  VectorPath mean;
  MatrixPath covariance;
};

/// Propagate the augmented moments on the solution's grid and store the full
/// path (memory is nodes * dim^2 doubles; the study entry points below use a
/// streaming variant instead). The augmented dimension is capped at 2048.
[[nodiscard]] MomentPath propagate_moments(const ScenarioParams& params,
                                           const MeanFieldSolution& solution, int N);

/// Social cost of the decentralized strategies for population size N,
/// evaluated exactly from the moment path: interval-wise trapezoid in time
/// (each panel uses that interval's piecewise-constant weights) plus the
/// terminal cost.
[[nodiscard]] double social_cost_exact(const ScenarioParams& params,
                                       const MeanFieldSolution& solution,
                                       const MomentPath& moments);

/// Mean-field approximation errors along the moment path (sup over nodes):
///   eps1: the limit-minor population mean against the mean field, plus the
///         same difference propagated through the minor Riccati gain
///   eps2: real major vs limit major, real population mean vs mean field,
///         and average applied control vs the mean control
/// Both vanish as N grows (at rate 1/N in expectation-square).
struct ErrorMetrics {
  double eps1 = 0.0;
  double eps2 = 0.0;
};

[[nodiscard]] ErrorMetrics meanfield_error_metrics(const ScenarioParams& params,
                                                   const MeanFieldSolution& solution,
                                                   const MomentPath& moments);

/// One row of the decentralized-vs-centralized comparison. J_dec and J_opt
/// are both exact-moment evaluations through the same quadrature, so their
/// shared discretization error cancels in the gap.
struct CostReport {
  int N = 0;
  double J_dec = 0.0;
  double J_opt = 0.0;
  double gap = 0.0;  ///< J_dec - J_opt
  double eps1 = 0.0;
  double eps2 = 0.0;
  double dt = 0.0;
  std::uint64_t seed = 0;
};

/// Full comparison for one population size: decentralized exact cost and
/// error metrics (streaming moments), centralized optimum via the joint
/// feedback evaluated through the same moment machinery.
[[nodiscard]] CostReport optimality_gap(const ScenarioParams& params, int N, const TimeGrid& grid,
                                        std::uint64_t seed = 0);

/// Monte Carlo check of the exact decentralized cost: Euler-Maruyama paths
/// of the augmented system with per-path counter-based noise streams.
/// Deterministic for fixed (seed, n_paths, grid) regardless of `threads`.
struct SimReport {
  int n_paths = 0;
  double empirical_mean = 0.0;
  double standard_error = 0.0;  ///< sample std of per-path cost / sqrt(n_paths)
  double exact_cost = 0.0;      ///< moment-route value on the same grid
};

[[nodiscard]] SimReport simulate_paths(const ScenarioParams& params,
                                       const MeanFieldSolution& solution, int N, int n_paths,
                                       std::uint64_t seed, int threads = 1);

/// Gap and error metrics across population sizes, with log-log slopes fitted
/// by least squares over all rows. The CSV is byte-stable across reruns:
/// header, one row per N with 17-significant-digit numbers, and a trailing
/// comment line with the gap slope.
struct ConvergenceReport {
  std::vector<CostReport> rows;
  double gap_slope = 0.0;
  double eps2_slope = 0.0;
  [[nodiscard]] std::string to_csv() const;
};

[[nodiscard]] ConvergenceReport convergence_study(const ScenarioParams& params,
                                                  const std::vector<int>& population_sizes,
                                                  const TimeGrid& grid, std::uint64_t seed = 0);

}  // namespace mfsoc
