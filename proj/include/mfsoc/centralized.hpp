#pragma once

#include <vector>

#include "mfsoc/mean_field.hpp"
#include "mfsoc/scenario.hpp"

namespace mfsoc {

/// The finite-N social problem written as one joint LQ control problem over
/// the stacked state (major first, then the N minors). Running cost
///   x^T Q x + 2 s^T x + c + u^T R u
/// plus the terminal analogue, with the minor cost weights already carrying
/// their lambda/N social weighting.
struct JointLQ {
  int N = 0;
  int dim = 0;        ///< (N+1) n
  int input_dim = 0;  ///< (N+1) n1
  int noise_dim = 0;  ///< (N+1) n2
  Piecewise<Matrix> drift;
  Piecewise<Matrix> input;           // blockdiag(B0, B, ..., B)
  Piecewise<Matrix> noise;           // blockdiag(D0, D, ..., D)
  Piecewise<Matrix> control_weight;  // blockdiag(R0, lambda/N R, ...)
  Piecewise<Matrix> state_cost;
  Piecewise<Vector> state_cost_lin;
  Piecewise<double> cost_const;
  Matrix state_cost_final;
  Vector state_cost_lin_final;
  double cost_const_final = 0.0;
  Vector x_init;
};

/// Assemble the joint problem for population size N. The joint dimension
/// (N+1)n is capped at 1024; larger requests throw std::invalid_argument.
[[nodiscard]] JointLQ assemble_social_cost(const ScenarioParams& params, int N);

/// Backward value sweep of the joint problem. The optimal control is
///   u*(t) = -feedback_gain(t) x - feedback_shift(t),
/// and the optimal cost from the deterministic start x_init is
///   x^T value_quad0 x + 2 value_lin0^T x + value_const0
/// (the constant carries the accumulated noise term).
struct CentralizedSolution {
  TimeGrid grid;
  int N = 0;
  int dim = 0;
  MatrixPath feedback_gain;   // (N+1)n1 x (N+1)n per node
  VectorPath feedback_shift;  // (N+1)n1 per node
  Matrix value_quad0;
  Vector value_lin0;
  double value_const0 = 0.0;
  double optimal_cost = 0.0;  ///< value function at (0, x_init)
  Vector x_init;
};

[[nodiscard]] CentralizedSolution solve_centralized(const ScenarioParams& params, int N,
                                                    const TimeGrid& grid,
                                                    const Tolerances& tol = {});

/// Exact cost of the affine feedback u = -gain x - shift (+ eps * direction)
/// applied to the joint problem: closed-loop mean/covariance moments plus the
/// interval-wise trapezoidal cost rule — the same quadrature used for the
/// decentralized cost, so the two sides of a gap share discretization error.
///
/// `direction`, when given, is an open-loop perturbation with 16 equal time
/// segments (requires steps divisible by 16): u += eps * direction[segment].
[[nodiscard]] double evaluate_joint_feedback_cost(
    const JointLQ& joint, const CentralizedSolution& sol, const TimeGrid& grid,
    const std::vector<Vector>* direction = nullptr, double eps = 0.0);

/// First-order optimality probe of the centralized feedback: central
/// difference of the exact cost along random piecewise-constant open-loop
/// directions. At the optimum every slope is zero up to O(eps^2) curvature
/// pickup and discretization noise, and every curvature is positive.
struct StationarityReport {
  double j0 = 0.0;            ///< exact moment-route cost of the feedback
  double optimal_cost = 0.0;  ///< value-function route, for reference
  std::vector<double> slopes;
  std::vector<double> curvatures;
  double max_abs_slope = 0.0;
  double min_curvature = 0.0;
};

[[nodiscard]] StationarityReport centralized_stationarity_check(const ScenarioParams& params,
                                                                int N, const TimeGrid& grid,
                                                                std::uint64_t seed,
                                                                int n_directions = 10,
                                                                double epsilon = 1e-2);

}  // namespace mfsoc
