#include "mfsoc/mean_field.hpp"

#include <algorithm>
#include <cmath>

namespace mfsoc {

namespace {

// ---------------------------------------------------------------------------
// per-interval coefficient bundles
// ---------------------------------------------------------------------------

/// weight^{-1} * input^T, segment-wise (the recurring gain factor).
Piecewise<Matrix> weighted_input_t(const Piecewise<Matrix>& weight, const Piecewise<Matrix>& input,
                                   const char* what) {
  return combine<Matrix>(
      [what](const Matrix& r, const Matrix& b) -> Matrix {
        Eigen::LLT<Matrix> llt(r);
        if (llt.info() != Eigen::Success)
          throw std::invalid_argument(std::string(what) + ": control weight block is not "
                                                          "positive definite");
        return llt.solve(b.transpose());
      },
      weight, input);
}

/// Everything the minor-level backward equations read per interval.
struct MinorData {
  Piecewise<Matrix> A;          // minor drift
  Piecewise<Matrix> SB;         // B Rlam^{-1} B^T
  Piecewise<Matrix> lamQ;       // lambda Q
  Piecewise<Matrix> C1;         // [G, F]
  Piecewise<Matrix> C2;         // [K0^T, M - lambda Q]
  Piecewise<Matrix> Fx;         // [F0^T, F^T]
  Piecewise<Vector> nu;
  Matrix PlT;                   // lambda Qf
  Matrix ST;                    // -[K0f^T, Mf - lambda Qf]
  Vector sT;                    // -nu_f
};

MinorData build_minor_data(const ScenarioParams& p, const DerivedCoefficients& d) {
  const CoefficientPaths c(p);
  const int n = p.dims.n;
  const double lam = p.lambda;
  MinorData m;
  m.A = c.A;
  m.SB = combine<Matrix>(
      [](const Matrix& b, const Matrix& rl) -> Matrix {
        Eigen::LLT<Matrix> llt(rl);
        if (llt.info() != Eigen::Success)
          throw std::invalid_argument("minor control weight is not positive definite");
        return b * llt.solve(b.transpose());
      },
      c.B, d.Rlam);
  m.lamQ = combine<Matrix>([lam](const Matrix& q) -> Matrix { return lam * q; }, c.Q);
  m.C1 = combine<Matrix>(
      [n](const Matrix& g, const Matrix& f) -> Matrix {
        Matrix out(n, 2 * n);
        out << g, f;
        return out;
      },
      c.G, c.F);
  m.C2 = combine<Matrix>(
      [n, lam](const Matrix& k0, const Matrix& mm, const Matrix& q) -> Matrix {
        Matrix out(n, 2 * n);
        out << k0.transpose(), mm - lam * q;
        return out;
      },
      d.K0, d.M, c.Q);
  m.Fx = combine<Matrix>(
      [n](const Matrix& f0, const Matrix& f) -> Matrix {
        Matrix out(n, 2 * n);
        out << f0.transpose(), f.transpose();
        return out;
      },
      c.F0, c.F);
  m.nu = d.nu;
  m.PlT = lam * p.Qf;
  m.ST = Matrix(n, 2 * n);
  m.ST << -d.K0f.transpose(), -(d.Mf - lam * p.Qf);
  m.sT = -d.nuf;
  return m;
}

// ---------------------------------------------------------------------------
// stage derivatives (shared by every op so joint and standalone sweeps
// produce bit-identical paths)
// ---------------------------------------------------------------------------

void d_riccati(const Matrix& a, const Matrix& s, const Matrix& q, const Matrix& p, Matrix& out) {
  out.noalias() = -(p * a) - a.transpose() * p + p * (s * p) - q;
}

void d_offset(const Matrix& a, const Matrix& s, const Vector& v, const Matrix& p,
              const Matrix& phi, Matrix& out) {
  out.noalias() = -a.transpose() * phi + p * (s * phi);
  out.col(0) += v;
}

void d_minor_gain(const MinorData& m, const TimeGrid& g, int k, const Matrix& agg_a,
                  const Matrix& agg_s, const Matrix& pl, const Matrix& pb, const Matrix& sgain,
                  Matrix& out) {
  const Matrix& a = m.A.on_interval(g, k);
  out.noalias() = (pl * m.SB.on_interval(g, k) - a.transpose()) * sgain +
                  pl * m.C1.on_interval(g, k) + m.C2.on_interval(g, k) +
                  m.Fx.on_interval(g, k) * pb - sgain * (agg_a - agg_s * pb);
}

void d_minor_shift(const MinorData& m, const TimeGrid& g, int k, const Matrix& agg_s,
                   const Matrix& pl, const Matrix& phi, const Matrix& sgain, const Matrix& sshift,
                   Matrix& out) {
  const Matrix& a = m.A.on_interval(g, k);
  out.noalias() = (pl * m.SB.on_interval(g, k) - a.transpose()) * sshift -
                  m.Fx.on_interval(g, k) * phi - sgain * (agg_s * phi);
  out.col(0) += m.nu.on_interval(g, k);
}

void scan_psd(const Matrix& m, int node, double psd_tol, const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -psd_tol * (1.0 + m.norm()))
    throw SolverError(std::string(what) + " lost positive semidefiniteness", node);
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

// ---------------------------------------------------------------------------
// standalone sweeps
// ---------------------------------------------------------------------------

MatrixPath solve_aggregate_riccati(const AggregateSystem& agg, const TimeGrid& grid,
                                   const Tolerances& tol) {
  MatrixPath path(grid.n_nodes());
  IntegrateOptions opts;
  opts.norm_cap = tol.magnitude_cap;
  rk4_backward(
      grid, {agg.state_cost_final},
      [&](const StagePoint& sp, const BlockState& y, BlockState& dy) {
        d_riccati(agg.drift.on_interval(grid, sp.interval),
                  agg.feedback_quad.on_interval(grid, sp.interval),
                  agg.state_cost.on_interval(grid, sp.interval), y[0], dy[0]);
      },
      [&](int node, const BlockState& y) {
        scan_psd(y[0], node, tol.psd_tol, "aggregate Riccati");
        path[node] = y[0];
      },
      opts);
  return path;
}

VectorPath solve_aggregate_offset(const AggregateSystem& agg, const TimeGrid& grid) {
  VectorPath path(grid.n_nodes());
  rk4_backward(
      grid, {agg.state_cost_final, Matrix(-agg.cost_shift_final)},
      [&](const StagePoint& sp, const BlockState& y, BlockState& dy) {
        const Matrix& a = agg.drift.on_interval(grid, sp.interval);
        const Matrix& s = agg.feedback_quad.on_interval(grid, sp.interval);
        d_riccati(a, s, agg.state_cost.on_interval(grid, sp.interval), y[0], dy[0]);
        d_offset(a, s, agg.cost_shift.on_interval(grid, sp.interval), y[0], y[1], dy[1]);
      },
      [&](int node, const BlockState& y) { path[node] = y[1].col(0); });
  return path;
}

MatrixPath solve_minor_riccati(const ScenarioParams& params, const DerivedCoefficients& derived,
                               const TimeGrid& grid, const Tolerances& tol) {
  const MinorData m = build_minor_data(params, derived);
  MatrixPath path(grid.n_nodes());
  IntegrateOptions opts;
  opts.norm_cap = tol.magnitude_cap;
  rk4_backward(
      grid, {m.PlT},
      [&](const StagePoint& sp, const BlockState& y, BlockState& dy) {
        d_riccati(m.A.on_interval(grid, sp.interval), m.SB.on_interval(grid, sp.interval),
                  m.lamQ.on_interval(grid, sp.interval), y[0], dy[0]);
      },
      [&](int node, const BlockState& y) {
        scan_psd(y[0], node, tol.psd_tol, "minor Riccati");
        path[node] = y[0];
      },
      opts);
  return path;
}

MatrixPath minor_noise_gain(const MatrixPath& minor_riccati, const ScenarioParams& params,
                            const TimeGrid& grid) {
  const CoefficientPaths c(params);
  MatrixPath path(grid.n_nodes());
  for (int k = 0; k < grid.n_nodes(); ++k) path[k] = -(minor_riccati[k] * c.D.at_node(grid, k));
  return path;
}

namespace {

double offset_matching_residual(const MatrixPath& sgain, const VectorPath& sshift,
                                const MatrixPath& pb, const VectorPath& phi,
                                const MatrixPath& pl, int n) {
  double worst = 0.0;
  for (std::size_t k = 0; k < sgain.size(); ++k) {
    Matrix closed(n, 2 * n);
    closed << -pb[k].block(n, 0, n, n), pl[k] - pb[k].block(n, n, n, n);
    worst = std::max(worst, max_abs(sgain[k] - closed));
    worst = std::max(worst, (sshift[k] - phi[k].tail(n)).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

MinorOffset derive_minor_offset(const ScenarioParams& params, const DerivedCoefficients& derived,
                                const AggregateSystem& agg, const MatrixPath& aggregate_riccati,
                                const VectorPath& aggregate_offset,
                                const MatrixPath& minor_riccati, const TimeGrid& grid) {
  const MinorData m = build_minor_data(params, derived);
  MinorOffset out;
  out.gain.resize(grid.n_nodes());
  out.shift.resize(grid.n_nodes());
  rk4_backward(
      grid,
      {agg.state_cost_final, Matrix(-agg.cost_shift_final), m.PlT, m.ST, Matrix(m.sT)},
      [&](const StagePoint& sp, const BlockState& y, BlockState& dy) {
        const int k = sp.interval;
        const Matrix& a = agg.drift.on_interval(grid, k);
        const Matrix& s = agg.feedback_quad.on_interval(grid, k);
        d_riccati(a, s, agg.state_cost.on_interval(grid, k), y[0], dy[0]);
        d_offset(a, s, agg.cost_shift.on_interval(grid, k), y[0], y[1], dy[1]);
        d_riccati(m.A.on_interval(grid, k), m.SB.on_interval(grid, k),
                  m.lamQ.on_interval(grid, k), y[2], dy[2]);
        d_minor_gain(m, grid, k, a, s, y[2], y[0], y[3], dy[3]);
        d_minor_shift(m, grid, k, s, y[2], y[1], y[3], y[4], dy[4]);
      },
      [&](int node, const BlockState& y) {
        out.gain[node] = y[3];
        out.shift[node] = y[4].col(0);
      });
  out.matching_residual = offset_matching_residual(out.gain, out.shift, aggregate_riccati,
                                                   aggregate_offset, minor_riccati, params.dims.n);
  return out;
}

DecentralizedLaw build_decentralized_law(const ScenarioParams& params, const AggregateSystem& agg,
                                         const MatrixPath& aggregate_riccati,
                                         const VectorPath& aggregate_offset,
                                         const MatrixPath& minor_riccati,
                                         const MinorOffset& minor_offset, const TimeGrid& grid) {
  const CoefficientPaths c(params);
  const DerivedCoefficients d = derive_coefficients(params);
  const Piecewise<Matrix> r0_b0t = weighted_input_t(c.R0, c.B0, "build_decentralized_law");
  const Piecewise<Matrix> rl_bt = weighted_input_t(d.Rlam, c.B, "build_decentralized_law");
  const int n = params.dims.n, nodes = grid.n_nodes();

  DecentralizedLaw law;
  law.n = n;
  law.n1 = params.dims.n1;
  law.n2 = params.dims.n2;
  law.major_gain.resize(nodes);
  law.major_shift.resize(nodes);
  law.minor_own_gain.resize(nodes);
  law.minor_field_gain.resize(nodes);
  law.minor_shift.resize(nodes);
  law.mean_gain.resize(nodes);
  law.mean_shift.resize(nodes);
  law.limit_drift.resize(nodes);
  law.limit_shift.resize(nodes);
  law.limit_noise.resize(nodes);
  for (int k = 0; k < nodes; ++k) {
    const Matrix& pb = aggregate_riccati[k];
    const Vector& phi = aggregate_offset[k];
    const Matrix& g0 = r0_b0t.at_node(grid, k);
    const Matrix& gl = rl_bt.at_node(grid, k);
    law.major_gain[k] = -g0 * pb.topRows(n);
    law.major_shift[k] = g0 * phi.head(n);
    law.minor_own_gain[k] = -gl * minor_riccati[k];
    law.minor_field_gain[k] = gl * minor_offset.gain[k];
    law.minor_shift[k] = gl * minor_offset.shift[k];
    law.mean_gain[k] = -gl * pb.bottomRows(n);
    law.mean_shift[k] = gl * phi.tail(n);
    const Matrix& s = agg.feedback_quad.at_node(grid, k);
    law.limit_drift[k] = agg.drift.at_node(grid, k) - s * pb;
    law.limit_shift[k] = s * phi;
    law.limit_noise[k] = agg.noise.at_node(grid, k);
  }
  return law;
}

MeanFieldSolution solve_mean_field(const ScenarioParams& params, const TimeGrid& grid,
                                   const Tolerances& tol) {
  const DerivedCoefficients derived = derive_coefficients(params);
  const AggregateSystem agg = assemble_aggregate(params, derived);
  const MinorData m = build_minor_data(params, derived);
  const int nodes = grid.n_nodes();

  MeanFieldSolution sol{grid, MatrixPath(nodes), VectorPath(nodes), MatrixPath(nodes),
                        MatrixPath(nodes), MatrixPath(nodes), VectorPath(nodes),
                        0.0, DecentralizedLaw{}};
  IntegrateOptions opts;
  opts.norm_cap = tol.magnitude_cap;
  rk4_backward(
      grid,
      {agg.state_cost_final, Matrix(-agg.cost_shift_final), m.PlT, m.ST, Matrix(m.sT)},
      [&](const StagePoint& sp, const BlockState& y, BlockState& dy) {
        const int k = sp.interval;
        const Matrix& a = agg.drift.on_interval(grid, k);
        const Matrix& s = agg.feedback_quad.on_interval(grid, k);
        d_riccati(a, s, agg.state_cost.on_interval(grid, k), y[0], dy[0]);
        d_offset(a, s, agg.cost_shift.on_interval(grid, k), y[0], y[1], dy[1]);
        d_riccati(m.A.on_interval(grid, k), m.SB.on_interval(grid, k),
                  m.lamQ.on_interval(grid, k), y[2], dy[2]);
        d_minor_gain(m, grid, k, a, s, y[2], y[0], y[3], dy[3]);
        d_minor_shift(m, grid, k, s, y[2], y[1], y[3], y[4], dy[4]);
      },
      [&](int node, const BlockState& y) {
        scan_psd(y[0], node, tol.psd_tol, "aggregate Riccati");
        scan_psd(y[2], node, tol.psd_tol, "minor Riccati");
        sol.aggregate_riccati[node] = y[0];
        sol.aggregate_offset[node] = y[1].col(0);
        sol.minor_riccati[node] = y[2];
        sol.minor_offset_gain[node] = y[3];
        sol.minor_offset_shift[node] = y[4].col(0);
      },
      opts);

  sol.minor_noise_gain = minor_noise_gain(sol.minor_riccati, params, grid);
  sol.matching_residual =
      offset_matching_residual(sol.minor_offset_gain, sol.minor_offset_shift,
                               sol.aggregate_riccati, sol.aggregate_offset, sol.minor_riccati,
                               params.dims.n);
  MinorOffset offset;
  offset.gain = sol.minor_offset_gain;
  offset.shift = sol.minor_offset_shift;
  offset.matching_residual = sol.matching_residual;
  sol.law = build_decentralized_law(params, agg, sol.aggregate_riccati, sol.aggregate_offset,
                                    sol.minor_riccati, offset, grid);
  return sol;
}

// ---------------------------------------------------------------------------
// fixed-point consistency check
// ---------------------------------------------------------------------------

double consistency_residual(const ScenarioParams& params, const TimeGrid& grid,
                            double mean_control_shift) {
  const DerivedCoefficients derived = derive_coefficients(params);
  const AggregateSystem agg = assemble_aggregate(params, derived);
  const CoefficientPaths c(params);
  const int n = params.dims.n, n1 = params.dims.n1;

  // the major's own feedback quadratic [B0; 0] R0^{-1} [B0; 0]^T
  const Piecewise<Matrix> s0 = combine<Matrix>(
      [n](const Matrix& b0, const Matrix& r0) -> Matrix {
        Eigen::LLT<Matrix> llt(r0);
        if (llt.info() != Eigen::Success)
          throw std::invalid_argument("consistency_residual: R0 is not positive definite");
        Matrix out = Matrix::Zero(2 * n, 2 * n);
        out.topLeftCorner(n, n) = b0 * llt.solve(b0.transpose());
        return out;
      },
      c.B0, c.R0);
  const Piecewise<Matrix> rl_bt = weighted_input_t(derived.Rlam, c.B, "consistency_residual");
  const Vector shift = mean_control_shift * Vector::Ones(n1);

  // blocks: aggregate Riccati, aggregate offset, re-solved Riccati (mean
  // control exogenous), its cross-coupling gain, its offset
  double residual = 0.0;
  rk4_backward(
      grid,
      {agg.state_cost_final, Matrix(-agg.cost_shift_final), agg.state_cost_final,
       Matrix(Matrix::Zero(2 * n, 2 * n)), Matrix(-agg.cost_shift_final)},
      [&](const StagePoint& sp, const BlockState& y, BlockState& dy) {
        const int k = sp.interval;
        const Matrix& a = agg.drift.on_interval(grid, k);
        const Matrix& s = agg.feedback_quad.on_interval(grid, k);
        const Matrix& q = agg.state_cost.on_interval(grid, k);
        const Vector& v = agg.cost_shift.on_interval(grid, k);
        const Matrix& s0k = s0.on_interval(grid, k);
        const Matrix& glk = rl_bt.on_interval(grid, k);
        const Matrix& bmean = agg.input_mean.on_interval(grid, k);
        const Matrix& pb = y[0];
        const Matrix& phi = y[1];
        const Matrix& p1 = y[2];
        const Matrix& th = y[3];
        const Matrix& thv = y[4];
        d_riccati(a, s, q, pb, dy[0]);
        d_offset(a, s, v, pb, phi, dy[1]);
        const Matrix mean_gain = -glk * pb.middleRows(n, n);
        Vector mean_shift = glk * phi.col(0).tail(n);
        mean_shift += shift;
        const Matrix acl = a - s * pb;
        d_riccati(a, s0k, q, p1, dy[2]);
        dy[3].noalias() = -th * acl - a.transpose() * th + p1 * (s0k * th) +
                          p1 * (bmean * mean_gain);
        dy[4].noalias() = -a.transpose() * thv - th * (s * phi) + p1 * (s0k * thv) +
                          p1 * (bmean * mean_shift);
        dy[4].col(0) += v;
      },
      [&](int /*node*/, const BlockState& y) {
        const Matrix gain_gap = (y[3] - y[2] + y[0]).middleRows(n, n);
        const Matrix shift_gap = (y[4] - y[1]).middleRows(n, n);
        residual = std::max(residual, max_abs(gain_gap) + max_abs(shift_gap));
      });
  return residual;
}

}  // namespace mfsoc
