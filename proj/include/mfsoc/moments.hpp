#pragma once

#include "mfsoc/integrate.hpp"
#include "mfsoc/linalg.hpp"
#include "mfsoc/time_grid.hpp"

namespace mfsoc {

/// First and second moments of an affine SDE dX = (A(t) X + b(t)) dt + D(t) dW:
///   mu'    = A mu + b
///   Sigma' = A Sigma + Sigma A^T + D D^T
/// integrated forward with classical RK4 on the grid.
///
/// Callbacks:
///   drift(interval, stage, A)   fill the dim x dim drift for the stage point
///   offset(interval, stage, b)  fill the dim offset for the stage point
///   noise_cov(interval, C)      fill D D^T, held constant on the interval
///   visit(node, mu, Sigma)      called at every node, including node 0
///
/// Piecewise-constant coefficient data must be sampled per *interval* (the
/// same value at all three stage points); only continuous factors (e.g.
/// solution paths stored at nodes) should vary across Stage, with kMid the
/// average of the two nodes. This keeps the scheme second order and matches
/// the trapezoidal cost rule used downstream.
///
/// The kMid drift/offset is assembled once and reused for both middle RK4
/// stages. Sigma is re-symmetrized after every step. Throws SolverError on
/// non-finite or blown-up state.
template <class Drift, class Offset, class NoiseCov, class Visit>
void propagate_affine_moments(const TimeGrid& grid, Vector mu, Matrix sigma, Drift&& drift,
                              Offset&& offset, NoiseCov&& noise_cov, Visit&& visit,
                              const IntegrateOptions& opts = {}) {
  const Eigen::Index dim = mu.size();
  if (sigma.rows() != dim || sigma.cols() != dim)
    throw std::invalid_argument("propagate_affine_moments: mu/sigma dimension mismatch");
  const double h = grid.dt();

  Matrix a_left(dim, dim), a_mid(dim, dim), a_right(dim, dim), c(dim, dim);
  Matrix prod(dim, dim), k(dim, dim), acc(dim, dim), stage_in(dim, dim);
  Vector kv(dim), accv(dim), stage_inv(dim), b_left(dim), b_mid(dim), b_right(dim);

  // k = A X + X A^T + C and kv = A x + b for the stage input (stage_in, stage_inv)
  auto eval_rhs = [&](const Matrix& a, const Vector& b) {
    prod.noalias() = a * stage_in;
    k = prod + prod.transpose() + c;
    kv.noalias() = a * stage_inv;
    kv += b;
  };

  visit(0, static_cast<const Vector&>(mu), static_cast<const Matrix&>(sigma));
  for (int step = 0; step < grid.steps(); ++step) {
    drift(step, Stage::kLeft, a_left);
    drift(step, Stage::kMid, a_mid);
    drift(step, Stage::kRight, a_right);
    offset(step, Stage::kLeft, b_left);
    offset(step, Stage::kMid, b_mid);
    offset(step, Stage::kRight, b_right);
    noise_cov(step, c);

    stage_in = sigma;
    stage_inv = mu;
    eval_rhs(a_left, b_left);
    acc = k;
    accv = kv;
    stage_in = sigma + (0.5 * h) * k;
    stage_inv = mu + (0.5 * h) * kv;

    eval_rhs(a_mid, b_mid);
    acc += 2.0 * k;
    accv += 2.0 * kv;
    stage_in = sigma + (0.5 * h) * k;
    stage_inv = mu + (0.5 * h) * kv;

    eval_rhs(a_mid, b_mid);
    acc += 2.0 * k;
    accv += 2.0 * kv;
    stage_in = sigma + h * k;
    stage_inv = mu + h * kv;

    eval_rhs(a_right, b_right);
    acc += k;
    accv += kv;

    sigma += (h / 6.0) * acc;
    symmetrize(sigma);
    mu += (h / 6.0) * accv;

    if (!mu.allFinite() || !sigma.allFinite() || mu.norm() > opts.norm_cap ||
        sigma.norm() > opts.norm_cap)
      throw SolverError("moment propagation diverged", step + 1);
    visit(step + 1, static_cast<const Vector&>(mu), static_cast<const Matrix&>(sigma));
  }
}

}  // namespace mfsoc
