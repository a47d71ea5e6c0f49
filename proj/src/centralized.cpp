#include "mfsoc/centralized.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfsoc/moments.hpp"
#include "mfsoc/rng.hpp"

namespace mfsoc {

namespace {

constexpr int kMaxJointDim = 1024;
constexpr int kDirectionSegments = 16;

/// Major/minor diagonal blocks of a joint block-diagonal operator (all minor
/// blocks are identical, so two blocks describe the whole matrix).
struct DiagBlocks {
  Matrix major;
  Matrix minor;
};

/// out = blockdiag(major, minor, ..., minor) * x, row-block by row-block.
void apply_diag(const DiagBlocks& d, const Matrix& x, Matrix& out, int N) {
  const auto rj = d.major.rows(), cj = d.major.cols();
  const auto ri = d.minor.rows(), ci = d.minor.cols();
  out.resize(rj + N * ri, x.cols());
  out.topRows(rj).noalias() = d.major * x.middleRows(0, cj);
  for (int i = 0; i < N; ++i)
    out.middleRows(rj + i * ri, ri).noalias() = d.minor * x.middleRows(cj + i * ci, ci);
}

/// trace(blockdiag(major, minor, ...) * M) over the diagonal blocks of M.
double trace_diag(const DiagBlocks& d, const Matrix& m, int N) {
  const auto nj = d.major.rows(), ni = d.minor.rows();
  double tr = d.major.cwiseProduct(m.topLeftCorner(nj, nj).transpose()).sum();
  for (int i = 0; i < N; ++i)
    tr += d.minor.cwiseProduct(m.block(nj + i * ni, nj + i * ni, ni, ni).transpose()).sum();
  return tr;
}

/// Everything the backward sweep and the cost evaluator read per interval.
struct JointData {
  Piecewise<DiagBlocks> s_quad;     // blocks of B R^{-1} B^T
  Piecewise<DiagBlocks> gain_fact;  // blocks of R^{-1} B^T
  Piecewise<DiagBlocks> noise_cov;  // blocks of D D^T
  Piecewise<DiagBlocks> weight;     // blocks of R
};

JointData build_joint_data(const ScenarioParams& p, int N) {
  const CoefficientPaths c(p);
  const double w = p.lambda / N;
  auto solve_bt = [](const Matrix& r, const Matrix& b, double scale) -> Matrix {
    Eigen::LLT<Matrix> llt(Matrix(scale * r));
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("joint control weight block is not positive definite");
    return llt.solve(b.transpose());
  };
  JointData d;
  d.s_quad = combine<DiagBlocks>(
      [&](const Matrix& b0, const Matrix& r0, const Matrix& b, const Matrix& r) -> DiagBlocks {
        return {b0 * solve_bt(r0, b0, 1.0), b * solve_bt(r, b, w)};
      },
      c.B0, c.R0, c.B, c.R);
  d.gain_fact = combine<DiagBlocks>(
      [&](const Matrix& b0, const Matrix& r0, const Matrix& b, const Matrix& r) -> DiagBlocks {
        return {solve_bt(r0, b0, 1.0), solve_bt(r, b, w)};
      },
      c.B0, c.R0, c.B, c.R);
  d.noise_cov = combine<DiagBlocks>(
      [](const Matrix& d0, const Matrix& dm) -> DiagBlocks {
        return {d0 * d0.transpose(), dm * dm.transpose()};
      },
      c.D0, c.D);
  d.weight = combine<DiagBlocks>(
      [&](const Matrix& r0, const Matrix& r) -> DiagBlocks { return {r0, Matrix(w * r)}; },
      c.R0, c.R);
  return d;
}

int direction_segment(int interval, int steps) {
  return std::min(interval * kDirectionSegments / steps, kDirectionSegments - 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// assembly
// ---------------------------------------------------------------------------

JointLQ assemble_social_cost(const ScenarioParams& p, int N) {
  if (N < 1) throw std::invalid_argument("assemble_social_cost: N must be >= 1");
  const int n = p.dims.n, n1 = p.dims.n1, n2 = p.dims.n2;
  const int dim = (N + 1) * n;
  if (dim > kMaxJointDim)
    throw std::invalid_argument("assemble_social_cost: joint dimension " + std::to_string(dim) +
                                " exceeds the cap " + std::to_string(kMaxJointDim));
  const CoefficientPaths c(p);
  const double w = p.lambda / N;

  JointLQ j;
  j.N = N;
  j.dim = dim;
  j.input_dim = (N + 1) * n1;
  j.noise_dim = (N + 1) * n2;

  j.drift = combine<Matrix>(
      [&](const Matrix& a0, const Matrix& f0, const Matrix& g, const Matrix& a,
          const Matrix& f) -> Matrix {
        Matrix m = Matrix::Zero(dim, dim);
        m.topLeftCorner(n, n) = a0;
        for (int i = 0; i < N; ++i) {
          const int r = (1 + i) * n;
          m.block(0, r, n, n) = f0 / N;
          m.block(r, 0, n, n) = g;
          m.block(r, r, n, n) += a;
          for (int k = 0; k < N; ++k) m.block(r, (1 + k) * n, n, n) += f / N;
        }
        return m;
      },
      c.A0, c.F0, c.G, c.A, c.F);
  j.input = combine<Matrix>(
      [&](const Matrix& b0, const Matrix& b) -> Matrix {
        Matrix m = Matrix::Zero(dim, (N + 1) * n1);
        m.topLeftCorner(n, n1) = b0;
        for (int i = 0; i < N; ++i) m.block((1 + i) * n, (1 + i) * n1, n, n1) = b;
        return m;
      },
      c.B0, c.B);
  j.noise = combine<Matrix>(
      [&](const Matrix& d0, const Matrix& dm) -> Matrix {
        Matrix m = Matrix::Zero(dim, (N + 1) * n2);
        m.topLeftCorner(n, n2) = d0;
        for (int i = 0; i < N; ++i) m.block((1 + i) * n, (1 + i) * n2, n, n2) = dm;
        return m;
      },
      c.D0, c.D);
  j.control_weight = combine<Matrix>(
      [&](const Matrix& r0, const Matrix& r) -> Matrix {
        Matrix m = Matrix::Zero((N + 1) * n1, (N + 1) * n1);
        m.topLeftCorner(n1, n1) = r0;
        for (int i = 0; i < N; ++i) m.block((1 + i) * n1, (1 + i) * n1, n1, n1) = w * r;
        return m;
      },
      c.R0, c.R);

  // tracking selectors: major reads x0 - H0 xbar - eta0, minor i reads
  // xi - H1 x0 - H2 xbar - eta; the quadratic/linear/constant pieces follow
  auto tracking = [&](const Matrix& q0, const Matrix& q, const Matrix& h0, const Matrix& h1,
                      const Matrix& h2, const Vector& e0, const Vector& e, Matrix& quad,
                      Vector& lin, double& cnst) {
    Matrix l0 = Matrix::Zero(n, dim);
    l0.leftCols(n) = Matrix::Identity(n, n);
    for (int i = 0; i < N; ++i) l0.middleCols((1 + i) * n, n) = -h0 / N;
    quad = l0.transpose() * q0 * l0;
    lin = -l0.transpose() * (q0 * e0);
    cnst = e0.dot(q0 * e0);
    for (int i = 0; i < N; ++i) {
      Matrix li = Matrix::Zero(n, dim);
      li.leftCols(n) = -h1;
      for (int k = 0; k < N; ++k) li.middleCols((1 + k) * n, n) = -h2 / N;
      li.middleCols((1 + i) * n, n) += Matrix::Identity(n, n);
      quad += w * li.transpose() * q * li;
      lin -= w * li.transpose() * (q * e);
      cnst += w * e.dot(q * e);
    }
    symmetrize(quad);
  };

  struct CostPieces {
    Matrix quad;
    Vector lin;
    double cnst;
  };
  const Piecewise<CostPieces> pieces = combine<CostPieces>(
      [&](const Matrix& q0, const Matrix& q, const Matrix& h0, const Matrix& h1,
          const Matrix& h2, const Vector& e0, const Vector& e) -> CostPieces {
        CostPieces out;
        tracking(q0, q, h0, h1, h2, e0, e, out.quad, out.lin, out.cnst);
        return out;
      },
      c.Q0, c.Q, c.H0, c.H1, c.H2, c.eta0, c.eta);
  j.state_cost = combine<Matrix>([](const CostPieces& cp) -> Matrix { return cp.quad; }, pieces);
  j.state_cost_lin =
      combine<Vector>([](const CostPieces& cp) -> Vector { return cp.lin; }, pieces);
  j.cost_const = combine<double>([](const CostPieces& cp) -> double { return cp.cnst; }, pieces);
  tracking(p.Q0f, p.Qf, p.H0f, p.H1f, p.H2f, p.eta0f, p.etaf, j.state_cost_final,
           j.state_cost_lin_final, j.cost_const_final);

  j.x_init = Vector(dim);
  j.x_init.head(n) = p.z0;
  const std::vector<Vector> xi = p.minor_init.states(N, p.m0);
  for (int i = 0; i < N; ++i) j.x_init.segment((1 + i) * n, n) = xi[i];
  return j;
}

// ---------------------------------------------------------------------------
// backward value sweep
// ---------------------------------------------------------------------------

CentralizedSolution solve_centralized(const ScenarioParams& params, int N, const TimeGrid& grid,
                                      const Tolerances& tol) {
  const JointLQ joint = assemble_social_cost(params, N);
  const JointData data = build_joint_data(params, N);
  const int dim = joint.dim;

  CentralizedSolution sol{grid,
                          N,
                          dim,
                          MatrixPath(grid.n_nodes()),
                          VectorPath(grid.n_nodes()),
                          Matrix(),
                          Vector(),
                          0.0,
                          0.0,
                          joint.x_init};
  IntegrateOptions opts;
  opts.norm_cap = tol.magnitude_cap;

  Matrix t_buf(dim, dim), w_buf(dim, dim), pt_buf(dim, dim);
  rk4_backward(
      grid,
      {joint.state_cost_final, Matrix(joint.state_cost_lin_final),
       Matrix(Matrix::Constant(1, 1, joint.cost_const_final))},
      [&](const StagePoint& sp, const BlockState& y, BlockState& dy) {
        const int k = sp.interval;
        const Matrix& a = joint.drift.on_interval(grid, k);
        const DiagBlocks& s = data.s_quad.on_interval(grid, k);
        const DiagBlocks& dd = data.noise_cov.on_interval(grid, k);
        const Matrix& pi = y[0];
        const Matrix& g = y[1];
        apply_diag(s, pi, t_buf, N);                      // T = S Pi
        w_buf.noalias() = pi * a;                         // W = Pi A
        pt_buf.noalias() = pi * t_buf;                    // Pi S Pi
        dy[0] = -w_buf - w_buf.transpose() +
                0.5 * (pt_buf + pt_buf.transpose()) -
                joint.state_cost.on_interval(grid, k);
        dy[1].noalias() = -a.transpose() * g + t_buf.transpose() * g;
        dy[1].col(0) -= joint.state_cost_lin.on_interval(grid, k);
        Matrix sg(dim, 1);
        apply_diag(s, g, sg, N);
        dy[2](0, 0) = -joint.cost_const.on_interval(grid, k) + g.col(0).dot(sg.col(0)) -
                      trace_diag(dd, pi, N);
      },
      [&](int node, const BlockState& y) {
        const DiagBlocks& f = data.gain_fact.at_node(grid, node);
        Matrix gain(joint.input_dim, dim);
        apply_diag(f, y[0], gain, N);
        sol.feedback_gain[node] = std::move(gain);
        Matrix shift(joint.input_dim, 1);
        apply_diag(f, y[1], shift, N);
        sol.feedback_shift[node] = shift.col(0);
        if (node == 0) {
          sol.value_quad0 = y[0];
          sol.value_lin0 = y[1].col(0);
          sol.value_const0 = y[2](0, 0);
        }
      },
      opts);

  sol.optimal_cost = sol.x_init.dot(sol.value_quad0 * sol.x_init) +
                     2.0 * sol.value_lin0.dot(sol.x_init) + sol.value_const0;
  return sol;
}

// ---------------------------------------------------------------------------
// exact feedback cost via moments
// ---------------------------------------------------------------------------

double evaluate_joint_feedback_cost(const JointLQ& joint, const CentralizedSolution& sol,
                                    const TimeGrid& grid, const std::vector<Vector>* direction,
                                    double eps) {
  if (grid.n_nodes() != static_cast<int>(sol.feedback_gain.size()))
    throw std::invalid_argument("evaluate_joint_feedback_cost: solution grid mismatch");
  if (direction != nullptr) {
    if (static_cast<int>(direction->size()) != kDirectionSegments)
      throw std::invalid_argument("evaluate_joint_feedback_cost: direction needs " +
                                  std::to_string(kDirectionSegments) + " segments");
    if (grid.steps() % kDirectionSegments != 0)
      throw std::invalid_argument(
          "evaluate_joint_feedback_cost: steps must be divisible by the number of "
          "perturbation segments");
  }
  const int dim = joint.dim, steps = grid.steps();
  const double h = grid.dt();
  const MatrixPath& gain = sol.feedback_gain;
  const VectorPath& shift = sol.feedback_shift;

  auto perturbation = [&](int interval) -> Vector {
    if (direction == nullptr) return Vector::Zero(joint.input_dim);
    return eps * (*direction)[direction_segment(interval, steps)];
  };

  Matrix k_stage(joint.input_dim, dim);
  Vector u_stage(joint.input_dim);
  const Matrix* noise_seg = nullptr;  // last sampled noise segment, for caching
  Matrix noise_cov_buf(dim, dim);

  auto drift = [&](int interval, Stage stage, Matrix& a) {
    switch (stage) {
      case Stage::kLeft: k_stage = gain[interval]; break;
      case Stage::kMid: k_stage = 0.5 * (gain[interval] + gain[interval + 1]); break;
      case Stage::kRight: k_stage = gain[interval + 1]; break;
    }
    a = joint.drift.on_interval(grid, interval);
    a.noalias() -= joint.input.on_interval(grid, interval) * k_stage;
  };
  auto offset = [&](int interval, Stage stage, Vector& b) {
    switch (stage) {
      case Stage::kLeft: u_stage = -shift[interval]; break;
      case Stage::kMid: u_stage = -0.5 * (shift[interval] + shift[interval + 1]); break;
      case Stage::kRight: u_stage = -shift[interval + 1]; break;
    }
    u_stage += perturbation(interval);
    b.noalias() = joint.input.on_interval(grid, interval) * u_stage;
  };
  auto noise_cov = [&](int interval, Matrix& c) {
    const Matrix& d = joint.noise.on_interval(grid, interval);
    if (&d != noise_seg) {
      noise_cov_buf.noalias() = d * d.transpose();
      noise_seg = &d;
    }
    c = noise_cov_buf;
  };

  double total = 0.0;
  Matrix y_buf(joint.input_dim, dim), z_buf(joint.input_dim, joint.input_dim);
  Vector u_base(joint.input_dim);
  auto visit = [&](int node, const Vector& mu, const Matrix& sigma) {
    y_buf.noalias() = gain[node] * sigma;
    z_buf.noalias() = y_buf * gain[node].transpose();  // cov of K x
    u_base.noalias() = -(gain[node] * mu);
    u_base -= shift[node];
    auto panel = [&](int interval) -> double {
      const Matrix& q = joint.state_cost.on_interval(grid, interval);
      const Vector& lin = joint.state_cost_lin.on_interval(grid, interval);
      const Matrix& r = joint.control_weight.on_interval(grid, interval);
      const Vector u = u_base + perturbation(interval);
      return q.cwiseProduct(sigma).sum() + mu.dot(q * mu) + 2.0 * lin.dot(mu) +
             joint.cost_const.on_interval(grid, interval) +
             r.cwiseProduct(z_buf.transpose()).sum() + u.dot(r * u);
    };
    if (node > 0) total += 0.5 * h * panel(node - 1);
    if (node < steps) total += 0.5 * h * panel(node);
    if (node == steps)
      total += joint.state_cost_final.cwiseProduct(sigma).sum() +
               mu.dot(joint.state_cost_final * mu) + 2.0 * joint.state_cost_lin_final.dot(mu) +
               joint.cost_const_final;
  };

  propagate_affine_moments(grid, joint.x_init, Matrix::Zero(dim, dim), drift, offset, noise_cov,
                           visit);
  return total;
}

// ---------------------------------------------------------------------------
// stationarity probe
// ---------------------------------------------------------------------------

StationarityReport centralized_stationarity_check(const ScenarioParams& params, int N,
                                                  const TimeGrid& grid, std::uint64_t seed,
                                                  int n_directions, double epsilon) {
  if (n_directions < 1)
    throw std::invalid_argument("centralized_stationarity_check: need at least one direction");
  if (!(epsilon > 0.0))
    throw std::invalid_argument("centralized_stationarity_check: epsilon must be positive");
  const JointLQ joint = assemble_social_cost(params, N);
  const CentralizedSolution sol = solve_centralized(params, N, grid);

  StationarityReport rep;
  rep.optimal_cost = sol.optimal_cost;
  rep.j0 = evaluate_joint_feedback_cost(joint, sol, grid);
  rep.min_curvature = std::numeric_limits<double>::infinity();
  for (int d = 0; d < n_directions; ++d) {
    SequentialNormals draws{NormalStream(seed, /*purpose=*/1, static_cast<std::uint64_t>(d))};
    std::vector<Vector> dir(kDirectionSegments, Vector(joint.input_dim));
    for (auto& seg : dir)
      for (int i = 0; i < joint.input_dim; ++i) seg[i] = draws.next();
    const double jp = evaluate_joint_feedback_cost(joint, sol, grid, &dir, +epsilon);
    const double jm = evaluate_joint_feedback_cost(joint, sol, grid, &dir, -epsilon);
    const double slope = (jp - jm) / (2.0 * epsilon);
    const double curvature = (jp + jm - 2.0 * rep.j0) / (epsilon * epsilon);
    rep.slopes.push_back(slope);
    rep.curvatures.push_back(curvature);
    rep.max_abs_slope = std::max(rep.max_abs_slope, std::abs(slope));
    rep.min_curvature = std::min(rep.min_curvature, curvature);
  }
  return rep;
}

}  // namespace mfsoc
