#pragma once

#include <vector>

#include "mfsoc/integrate.hpp"
#include "mfsoc/linalg.hpp"
#include "mfsoc/scenario.hpp"
#include "mfsoc/time_grid.hpp"

namespace mfsoc {

/// Node-indexed solution paths on the shared grid.
using MatrixPath = std::vector<Matrix>;
using VectorPath = std::vector<Vector>;

/// The decentralized strategies and the closed-loop limit pair, sampled at
/// the grid nodes (piecewise-constant coefficient factors are taken from the
/// interval that represents each node, see TimeGrid::node_interval).
///
/// With Z = [major limit state; mean field] (dimension 2n):
///   major control  u0(t) = major_gain(t) Z + major_shift(t)
///   minor control  ui(t) = minor_own_gain(t) Xi + minor_field_gain(t) Z + minor_shift(t)
///   mean control  ubar(t) = mean_gain(t) Z + mean_shift(t)
///   limit pair     dZ = (limit_drift Z + limit_shift) dt + limit_noise dW0
struct DecentralizedLaw {
  int n = 0, n1 = 0, n2 = 0;
  MatrixPath major_gain;        // n1 x 2n
  VectorPath major_shift;       // n1
  MatrixPath minor_own_gain;    // n1 x n
  MatrixPath minor_field_gain;  // n1 x 2n
  VectorPath minor_shift;       // n1
  MatrixPath mean_gain;         // n1 x 2n
  VectorPath mean_shift;        // n1
  MatrixPath limit_drift;       // 2n x 2n
  VectorPath limit_shift;       // 2n
  MatrixPath limit_noise;       // 2n x n2
};

/// Minor-level offset equation solved against given aggregate paths.
/// `matching_residual` is the sup-norm distance between the directly
/// integrated (gain, shift) and the closed forms built from the aggregate
/// solution: gain = [-P_21, P_minor - P_22], shift = offset tail. The two
/// routes agree to machine precision when all equations share one grid, so
/// the residual is a cheap internal-consistency alarm.
struct MinorOffset {
  MatrixPath gain;   // n x 2n
  VectorPath shift;  // n
  double matching_residual = 0.0;
};

/// Everything the decentralized design produces: the aggregate Riccati pair,
/// the minor-level Riccati and offsets, the noise gain of the minor adjoint
/// process, and the resulting feedback law.
struct MeanFieldSolution {
  TimeGrid grid;
  MatrixPath aggregate_riccati;   // 2n x 2n, symmetric PSD
  VectorPath aggregate_offset;    // 2n
  MatrixPath minor_riccati;       // n x n, symmetric PSD
  MatrixPath minor_noise_gain;    // n x n2, identically -minor_riccati * D
  MatrixPath minor_offset_gain;   // n x 2n
  VectorPath minor_offset_shift;  // n
  double matching_residual = 0.0;
  DecentralizedLaw law;
};

/// Backward Riccati sweep for the aggregate (major + mean-field) problem:
///   -P' = P Ab + Ab^T P - P S P + Qb,  P(T) = Qb_f,
/// with S the aggregate feedback quadratic. The path is re-symmetrized each
/// step and checked for positive semidefiniteness at every node; violations
/// raise SolverError.
[[nodiscard]] MatrixPath solve_aggregate_riccati(const AggregateSystem& agg, const TimeGrid& grid,
                                                 const Tolerances& tol = {});

/// Backward offset sweep
///   phi' = -Ab^T phi + P S phi + vb,  phi(T) = -vb_f,
/// integrated jointly with the Riccati path so the stage values of P are
/// exact (the recomputed P is bit-identical to solve_aggregate_riccati).
[[nodiscard]] VectorPath solve_aggregate_offset(const AggregateSystem& agg, const TimeGrid& grid);

/// Backward Riccati sweep for one representative minor:
///   -P' = P A + A^T P - P B Rlam^{-1} B^T P + lambda Q,  P(T) = lambda Qf.
[[nodiscard]] MatrixPath solve_minor_riccati(const ScenarioParams& params,
                                             const DerivedCoefficients& derived,
                                             const TimeGrid& grid, const Tolerances& tol = {});

/// Gain of the minor adjoint process on the minor's own noise. Defined as
/// -minor_riccati * D node by node; kept as an explicit path because the
/// evaluation layer and tests consume it directly.
[[nodiscard]] MatrixPath minor_noise_gain(const MatrixPath& minor_riccati,
                                          const ScenarioParams& params, const TimeGrid& grid);

/// Minor-level offset pair (S, s):
///   S' = (P_minor SB - A^T) S + P_minor [G, F] + [K0^T, M - lambda Q]
///        + [F0^T, F^T] P - S (Ab - S_agg P),              S(T) = -[K0f^T, Mf - lambda Qf]
///   s' = (P_minor SB - A^T) s - [F0^T, F^T] phi + nu - S (S_agg phi),   s(T) = -nu_f.
/// All five backward equations are re-integrated jointly; the residual
/// compares against the caller-supplied aggregate/minor paths.
[[nodiscard]] MinorOffset derive_minor_offset(const ScenarioParams& params,
                                              const DerivedCoefficients& derived,
                                              const AggregateSystem& agg,
                                              const MatrixPath& aggregate_riccati,
                                              const VectorPath& aggregate_offset,
                                              const MatrixPath& minor_riccati,
                                              const TimeGrid& grid);

/// Assemble the feedback law from the solution paths (gains at the nodes).
[[nodiscard]] DecentralizedLaw build_decentralized_law(const ScenarioParams& params,
                                                       const AggregateSystem& agg,
                                                       const MatrixPath& aggregate_riccati,
                                                       const VectorPath& aggregate_offset,
                                                       const MatrixPath& minor_riccati,
                                                       const MinorOffset& minor_offset,
                                                       const TimeGrid& grid);

/// One-call decentralized design: a single joint backward pass for all five
/// equations, then the noise gain and the law. Throws SolverError on blow-up
/// or loss of positive semidefiniteness.
[[nodiscard]] MeanFieldSolution solve_mean_field(const ScenarioParams& params,
                                                 const TimeGrid& grid,
                                                 const Tolerances& tol = {});

/// Fixed-point check of the mean-field construction. The mean control
/// implied by the law (plus `mean_control_shift` on every component) is
/// injected as an exogenous affine input into the major-level problem, which
/// is then re-solved; the return value is the sup-norm distance between the
/// re-solved mean-feedback rows and the law's own. Zero (to solver accuracy)
/// certifies the law reproduces itself; shifted inputs must give a visibly
/// positive residual.
[[nodiscard]] double consistency_residual(const ScenarioParams& params, const TimeGrid& grid,
                                          double mean_control_shift = 0.0);

}  // namespace mfsoc
