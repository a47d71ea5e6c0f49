#include "mfsoc/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "mfsoc/csv.hpp"
#include "mfsoc/moments.hpp"
#include "mfsoc/rng.hpp"

namespace mfsoc {

namespace {

constexpr int kMaxAugmentedDim = 2048;
constexpr int kPathBlock = 64;  // fixed simulation batch width, see simulate_paths

/// weight^{-1} * input^T per segment (gain factor of one player level).
Piecewise<Matrix> gain_factor(const Piecewise<Matrix>& weight, const Piecewise<Matrix>& input) {
  return combine<Matrix>(
      [](const Matrix& r, const Matrix& b) -> Matrix {
        Eigen::LLT<Matrix> llt(r);
        if (llt.info() != Eigen::Success)
          throw std::invalid_argument("evaluation: control weight block is not positive definite");
        return llt.solve(b.transpose());
      },
      weight, input);
}

/// Feedback pieces sampled at one time point: piecewise-constant factors from
/// a grid interval, solution paths from a node (or a node average).
struct GainSet {
  Matrix major;        // n1 x 2n   u0 = major Z + major_off
  Vector major_off;    // n1
  Matrix own;          // n1 x n    ui = own Xi + field Z + own_off
  Matrix field;        // n1 x 2n
  Vector own_off;      // n1
  Matrix mean;         // n1 x 2n   ubar = mean Z + mean_off
  Vector mean_off;     // n1
};

/// The augmented verification system: real population and limit processes,
/// their exact moment dynamics, and the structured cost/metric evaluation.
class AugmentedEvaluator {
 public:
  AugmentedEvaluator(const ScenarioParams& p, const MeanFieldSolution& sol, int N)
      : p_(p),
        sol_(sol),
        grid_(sol.grid),
        coef_(p),
        n_(p.dims.n),
        n1_(p.dims.n1),
        n2_(p.dims.n2),
        N_(N),
        dim_((2 * N + 3) * p.dims.n) {
    if (N < 1) throw std::invalid_argument("augmented system: N must be >= 1");
    if (dim_ > kMaxAugmentedDim)
      throw std::invalid_argument("augmented system: dimension " + std::to_string(dim_) +
                                  " exceeds the cap " + std::to_string(kMaxAugmentedDim));
    if (static_cast<int>(sol.aggregate_riccati.size()) != grid_.n_nodes())
      throw std::invalid_argument("augmented system: solution grid mismatch");
    const DerivedCoefficients derived = derive_coefficients(p);
    major_factor_ = gain_factor(coef_.R0, coef_.B0);
    minor_factor_ = gain_factor(derived.Rlam, coef_.B);
  }

  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] int players() const { return N_; }
  [[nodiscard]] const TimeGrid& grid() const { return grid_; }

  // state layout: real major, N real minors, limit major, mean field, N limit minors
  [[nodiscard]] int r0() const { return 0; }
  [[nodiscard]] int ri(int i) const { return (1 + i) * n_; }
  [[nodiscard]] int l0() const { return (N_ + 1) * n_; }
  [[nodiscard]] int lm() const { return (N_ + 2) * n_; }
  [[nodiscard]] int li(int i) const { return (N_ + 3 + i) * n_; }

  [[nodiscard]] Vector initial_mean() const {
    Vector mu = Vector::Zero(dim_);
    const std::vector<Vector> xi = p_.minor_init.states(N_, p_.m0);
    mu.segment(r0(), n_) = p_.z0;
    for (int i = 0; i < N_; ++i) mu.segment(ri(i), n_) = xi[i];
    mu.segment(l0(), n_) = p_.z0;
    mu.segment(lm(), n_) = p_.m0;
    for (int i = 0; i < N_; ++i) mu.segment(li(i), n_) = xi[i];
    return mu;
  }

  /// Gains with factors from `interval` and solution paths at `node`.
  [[nodiscard]] GainSet gain_at_node(int interval, int node) const {
    return gain_from(interval, sol_.aggregate_riccati[node], sol_.aggregate_offset[node],
                     sol_.minor_riccati[node], sol_.minor_offset_gain[node],
                     sol_.minor_offset_shift[node]);
  }

  [[nodiscard]] GainSet gain_at_stage(int interval, Stage stage) const {
    switch (stage) {
      case Stage::kLeft:
        return gain_at_node(interval, interval);
      case Stage::kRight:
        return gain_at_node(interval, interval + 1);
      case Stage::kMid:
        break;
    }
    const int k = interval;
    return gain_from(interval, 0.5 * (sol_.aggregate_riccati[k] + sol_.aggregate_riccati[k + 1]),
                     0.5 * (sol_.aggregate_offset[k] + sol_.aggregate_offset[k + 1]),
                     0.5 * (sol_.minor_riccati[k] + sol_.minor_riccati[k + 1]),
                     0.5 * (sol_.minor_offset_gain[k] + sol_.minor_offset_gain[k + 1]),
                     0.5 * (sol_.minor_offset_shift[k] + sol_.minor_offset_shift[k + 1]));
  }

  void fill_drift(int interval, Stage stage, Matrix& a) const {
    const GainSet gs = gain_at_stage(interval, stage);
    const Matrix& a0 = coef_.A0.on_interval(grid_, interval);
    const Matrix& f0 = coef_.F0.on_interval(grid_, interval);
    const Matrix& b0 = coef_.B0.on_interval(grid_, interval);
    const Matrix& am = coef_.A.on_interval(grid_, interval);
    const Matrix& bm = coef_.B.on_interval(grid_, interval);
    const Matrix& fm = coef_.F.on_interval(grid_, interval);
    const Matrix& gm = coef_.G.on_interval(grid_, interval);
    const Matrix bg_major = b0 * gs.major;  // n x 2n
    const Matrix bg_own = bm * gs.own;      // n x n
    const Matrix bg_field = bm * gs.field;  // n x 2n
    const Matrix bg_mean = bm * gs.mean;    // n x 2n

    a.setZero();
    // real major: A0 X0 + F0 Xbar + B0 u0(Z)
    a.block(r0(), r0(), n_, n_) += a0;
    for (int i = 0; i < N_; ++i) a.block(r0(), ri(i), n_, n_) += f0 / N_;
    a.block(r0(), l0(), n_, 2 * n_) += bg_major;
    // real minors: A Xi + G X0 + F Xbar + B ui(limit minor i, Z)
    for (int i = 0; i < N_; ++i) {
      const int r = ri(i);
      a.block(r, r, n_, n_) += am;
      a.block(r, r0(), n_, n_) += gm;
      for (int k = 0; k < N_; ++k) a.block(r, ri(k), n_, n_) += fm / N_;
      a.block(r, li(i), n_, n_) += bg_own;
      a.block(r, l0(), n_, 2 * n_) += bg_field;
    }
    // limit major
    a.block(l0(), l0(), n_, n_) += a0;
    a.block(l0(), lm(), n_, n_) += f0;
    a.block(l0(), l0(), n_, 2 * n_) += bg_major;
    // mean field
    a.block(lm(), l0(), n_, n_) += gm;
    a.block(lm(), lm(), n_, n_) += am + fm;
    a.block(lm(), l0(), n_, 2 * n_) += bg_mean;
    // limit minors
    for (int i = 0; i < N_; ++i) {
      const int r = li(i);
      a.block(r, r, n_, n_) += am + bg_own;
      a.block(r, l0(), n_, n_) += gm;
      a.block(r, lm(), n_, n_) += fm;
      a.block(r, l0(), n_, 2 * n_) += bg_field;
    }
  }

  void fill_offset(int interval, Stage stage, Vector& b) const {
    const GainSet gs = gain_at_stage(interval, stage);
    const Matrix& b0 = coef_.B0.on_interval(grid_, interval);
    const Matrix& bm = coef_.B.on_interval(grid_, interval);
    const Vector b_major = b0 * gs.major_off;
    const Vector b_own = bm * gs.own_off;
    const Vector b_mean = bm * gs.mean_off;
    b.setZero();
    b.segment(r0(), n_) += b_major;
    for (int i = 0; i < N_; ++i) b.segment(ri(i), n_) += b_own;
    b.segment(l0(), n_) += b_major;
    b.segment(lm(), n_) += b_mean;
    for (int i = 0; i < N_; ++i) b.segment(li(i), n_) += b_own;
  }

  void fill_noise_cov(int interval, Matrix& c) const {
    const Matrix& d0 = coef_.D0.on_interval(grid_, interval);
    const Matrix& dm = coef_.D.on_interval(grid_, interval);
    const Matrix dd0 = d0 * d0.transpose();
    const Matrix dd = dm * dm.transpose();
    c.setZero();
    // real and limit players share their driving noises
    c.block(r0(), r0(), n_, n_) += dd0;
    c.block(r0(), l0(), n_, n_) += dd0;
    c.block(l0(), r0(), n_, n_) += dd0;
    c.block(l0(), l0(), n_, n_) += dd0;
    for (int i = 0; i < N_; ++i) {
      c.block(ri(i), ri(i), n_, n_) += dd;
      c.block(ri(i), li(i), n_, n_) += dd;
      c.block(li(i), ri(i), n_, n_) += dd;
      c.block(li(i), li(i), n_, n_) += dd;
    }
  }

  // ---- cost and error metrics from the moments ---------------------------

  /// Column-block sums and diagonal-block sums reused by every quadratic
  /// form at one node; O(N n dim) to build, everything after is O(N n^2).
  struct NodeProducts {
    Matrix cr;      // dim x n: sum_i Sigma[:, Ri]
    Matrix cl;      // dim x n: sum_i Sigma[:, Li]
    Matrix x1;      // Sigma[R0, sum Ri]
    Matrix x2;      // sum_{i,j} Sigma[Ri, Rj]
    Matrix x2l;     // sum_{i,j} Sigma[Li, Lj]
    Matrix drr;     // sum_i Sigma[Ri, Ri]
    Matrix dll;     // sum_i Sigma[Li, Li]
    Matrix crlm;    // sum_i Sigma[Lm, Ri]
    Matrix cllm;    // sum_i Sigma[Lm, Li]
    Matrix clw;     // sum_i Sigma[L0 window, Li], 2n x n
    Vector mur;     // sum_i mu[Ri]
    Vector mul;     // sum_i mu[Li]
  };

  [[nodiscard]] NodeProducts node_products(const Vector& mu, const Matrix& sigma) const {
    NodeProducts np;
    np.cr = Matrix::Zero(dim_, n_);
    np.cl = Matrix::Zero(dim_, n_);
    for (int i = 0; i < N_; ++i) {
      np.cr += sigma.middleCols(ri(i), n_);
      np.cl += sigma.middleCols(li(i), n_);
    }
    np.x1 = np.cr.middleRows(r0(), n_);
    np.x2 = Matrix::Zero(n_, n_);
    np.x2l = Matrix::Zero(n_, n_);
    np.drr = Matrix::Zero(n_, n_);
    np.dll = Matrix::Zero(n_, n_);
    np.mur = Vector::Zero(n_);
    np.mul = Vector::Zero(n_);
    for (int i = 0; i < N_; ++i) {
      np.x2 += np.cr.middleRows(ri(i), n_);
      np.x2l += np.cl.middleRows(li(i), n_);
      np.drr += sigma.block(ri(i), ri(i), n_, n_);
      np.dll += sigma.block(li(i), li(i), n_, n_);
      np.mur += mu.segment(ri(i), n_);
      np.mul += mu.segment(li(i), n_);
    }
    np.crlm = np.cr.middleRows(lm(), n_);
    np.cllm = np.cl.middleRows(lm(), n_);
    np.clw = np.cl.middleRows(l0(), 2 * n_);
    return np;
  }

  /// Running social cost density at one node, with the weights and gain
  /// factors of `interval` (so trapezoid panels straddling a coefficient
  /// breakpoint read each side's own data).
  [[nodiscard]] double running_cost(int interval, int node, const Vector& mu,
                                    const Matrix& sigma, const NodeProducts& np) const {
    const GainSet gs = gain_at_node(interval, node);
    const Matrix& q0 = coef_.Q0.on_interval(grid_, interval);
    const Matrix& q = coef_.Q.on_interval(grid_, interval);
    const Matrix& r0w = coef_.R0.on_interval(grid_, interval);
    const Matrix& rw = coef_.R.on_interval(grid_, interval);
    const Matrix& h0 = coef_.H0.on_interval(grid_, interval);
    const Matrix& h1 = coef_.H1.on_interval(grid_, interval);
    const Matrix& h2 = coef_.H2.on_interval(grid_, interval);
    const Vector& e0 = coef_.eta0.on_interval(grid_, interval);
    const Vector& e = coef_.eta.on_interval(grid_, interval);

    double total = tracking_cost(mu, sigma, np, q0, q, h0, h1, h2, e0, e);

    // major control: u0 = major Z + major_off on the limit window
    const Matrix sw = sigma.block(l0(), l0(), 2 * n_, 2 * n_);
    const Matrix cov0 = gs.major * sw * gs.major.transpose();
    const Vector u0 = gs.major * mu.segment(l0(), 2 * n_) + gs.major_off;
    total += r0w.cwiseProduct(cov0.transpose()).sum() + u0.dot(r0w * u0);

    // minor controls: ui = own Xi_limit + field Z + own_off, weight lambda/N
    const Matrix covw = gs.field * sw * gs.field.transpose();
    Matrix cov_sum = gs.own * np.dll * gs.own.transpose() +
                     gs.own * np.clw.transpose() * gs.field.transpose() +
                     gs.field * np.clw * gs.own.transpose() + double(N_) * covw;
    double mean_sum = 0.0;
    const Vector ucommon = gs.field * mu.segment(l0(), 2 * n_) + gs.own_off;
    for (int i = 0; i < N_; ++i) {
      const Vector ui = gs.own * mu.segment(li(i), n_) + ucommon;
      mean_sum += ui.dot(rw * ui);
    }
    total += p_.lambda / N_ * (rw.cwiseProduct(cov_sum.transpose()).sum() + mean_sum);
    return total;
  }

  [[nodiscard]] double terminal_cost(const Vector& mu, const Matrix& sigma,
                                     const NodeProducts& np) const {
    return tracking_cost(mu, sigma, np, p_.Q0f, p_.Qf, p_.H0f, p_.H1f, p_.H2f, p_.eta0f, p_.etaf);
  }

  [[nodiscard]] ErrorMetrics error_metrics(int node, const Vector& mu, const Matrix& sigma,
                                           const NodeProducts& np) const {
    const GainSet gs = gain_at_node(grid_.node_interval(node), node);
    ErrorMetrics m;

    // real major vs limit major
    const Matrix c_a = sigma.block(r0(), r0(), n_, n_) - sigma.block(r0(), l0(), n_, n_) -
                       sigma.block(l0(), r0(), n_, n_) + sigma.block(l0(), l0(), n_, n_);
    const Vector v_a = mu.segment(r0(), n_) - mu.segment(l0(), n_);
    // real population mean vs mean field
    const Matrix c_b = np.x2 / double(N_) / double(N_) - np.crlm.transpose() / double(N_) -
                       np.crlm / double(N_) + sigma.block(lm(), lm(), n_, n_);
    const Vector v_b = np.mur / double(N_) - mu.segment(lm(), n_);
    // average applied control vs the mean control
    const Matrix g_avg = gs.own / double(N_);
    const Matrix g_diff = gs.field - gs.mean;
    const Matrix sw = sigma.block(l0(), l0(), 2 * n_, 2 * n_);
    const Matrix c_c = g_avg * np.x2l * g_avg.transpose() +
                       g_avg * np.clw.transpose() * g_diff.transpose() +
                       g_diff * np.clw * g_avg.transpose() + g_diff * sw * g_diff.transpose();
    const Vector v_c =
        g_avg * np.mul + g_diff * mu.segment(l0(), 2 * n_) + (gs.own_off - gs.mean_off);
    m.eps2 = c_a.trace() + v_a.squaredNorm() + c_b.trace() + v_b.squaredNorm() + c_c.trace() +
             v_c.squaredNorm();

    // limit-minor mean vs mean field, plain and through the Riccati gain
    const Matrix c_y = np.x2l / double(N_) / double(N_) - np.cllm.transpose() / double(N_) -
                       np.cllm / double(N_) + sigma.block(lm(), lm(), n_, n_);
    const Vector v_y = np.mul / double(N_) - mu.segment(lm(), n_);
    const Matrix& pl = sol_.minor_riccati[node];
    m.eps1 = c_y.trace() + v_y.squaredNorm() + (pl * c_y * pl.transpose()).trace() +
             (pl * v_y).squaredNorm();
    return m;
  }

 private:
  [[nodiscard]] GainSet gain_from(int interval, const Matrix& pb, const Vector& phi,
                                  const Matrix& pl, const Matrix& sg, const Vector& ss) const {
    const Matrix& f0 = major_factor_.on_interval(grid_, interval);
    const Matrix& fl = minor_factor_.on_interval(grid_, interval);
    GainSet g;
    g.major = -f0 * pb.topRows(n_);
    g.major_off = f0 * phi.head(n_);
    g.own = -fl * pl;
    g.field = fl * sg;
    g.own_off = fl * ss;
    g.mean = -fl * pb.bottomRows(n_);
    g.mean_off = fl * phi.tail(n_);
    return g;
  }

  /// Tracking part of the social cost (major + lambda/N * sum of minors).
  [[nodiscard]] double tracking_cost(const Vector& mu, const Matrix& sigma,
                                     const NodeProducts& np, const Matrix& q0, const Matrix& q,
                                     const Matrix& h0, const Matrix& h1, const Matrix& h2,
                                     const Vector& e0, const Vector& e) const {
    const double nn = N_;
    const Matrix hn = h0 / nn;
    const Matrix cov0 = sigma.block(r0(), r0(), n_, n_) - np.x1 * hn.transpose() -
                        hn * np.x1.transpose() + hn * np.x2 * hn.transpose();
    const Vector v0 = mu.segment(r0(), n_) - hn * np.mur - e0;
    double total = q0.cwiseProduct(cov0.transpose()).sum() + v0.dot(q0 * v0);

    const Matrix hm = h2 / nn;
    const Matrix cov_sum = np.drr - np.x1.transpose() * h1.transpose() -
                           np.x2 * hm.transpose() - h1 * np.x1 - hm * np.x2 +
                           nn * h1 * sigma.block(r0(), r0(), n_, n_) * h1.transpose() +
                           h1 * np.x1 * h2.transpose() + h2 * np.x1.transpose() * h1.transpose() +
                           hm * np.x2 * h2.transpose();
    double mean_sum = 0.0;
    const Vector w = h1 * mu.segment(r0(), n_) + hm * np.mur + e;
    for (int i = 0; i < N_; ++i) {
      const Vector vi = mu.segment(ri(i), n_) - w;
      mean_sum += vi.dot(q * vi);
    }
    total += p_.lambda / nn * (q.cwiseProduct(cov_sum.transpose()).sum() + mean_sum);
    return total;
  }

  const ScenarioParams& p_;
  const MeanFieldSolution& sol_;
  TimeGrid grid_;
  CoefficientPaths coef_;
  Piecewise<Matrix> major_factor_;  // R0^{-1} B0^T
  Piecewise<Matrix> minor_factor_;  // Rlam^{-1} B^T
  int n_, n1_, n2_, N_, dim_;
};

/// Streaming pass over the augmented moments: trapezoid cost panels and the
/// sup-norm error metrics, plus an optional extra visitor (used to store the
/// full path for the public MomentPath op).
struct StreamResult {
  double cost = 0.0;
  double eps1 = 0.0;
  double eps2 = 0.0;
};

template <class Extra>
StreamResult run_augmented(const AugmentedEvaluator& ev, Extra&& extra) {
  const TimeGrid& grid = ev.grid();
  const double h = grid.dt();
  const int steps = grid.steps();
  StreamResult out;
  propagate_affine_moments(
      grid, ev.initial_mean(), Matrix::Zero(ev.dim(), ev.dim()),
      [&](int interval, Stage stage, Matrix& a) { ev.fill_drift(interval, stage, a); },
      [&](int interval, Stage stage, Vector& b) { ev.fill_offset(interval, stage, b); },
      [&](int interval, Matrix& c) { ev.fill_noise_cov(interval, c); },
      [&](int node, const Vector& mu, const Matrix& sigma) {
        const auto np = ev.node_products(mu, sigma);
        if (node > 0) out.cost += 0.5 * h * ev.running_cost(node - 1, node, mu, sigma, np);
        if (node < steps) out.cost += 0.5 * h * ev.running_cost(node, node, mu, sigma, np);
        if (node == steps) out.cost += ev.terminal_cost(mu, sigma, np);
        const ErrorMetrics m = ev.error_metrics(node, mu, sigma, np);
        out.eps1 = std::max(out.eps1, m.eps1);
        out.eps2 = std::max(out.eps2, m.eps2);
        extra(node, mu, sigma);
      });
  return out;
}

CostReport gap_with_solution(const ScenarioParams& params, const MeanFieldSolution& solution,
                             int N, const TimeGrid& grid, std::uint64_t seed) {
  const AugmentedEvaluator ev(params, solution, N);
  const StreamResult dec = run_augmented(ev, [](int, const Vector&, const Matrix&) {});
  const JointLQ joint = assemble_social_cost(params, N);
  const CentralizedSolution central = solve_centralized(params, N, grid);
  CostReport row;
  row.N = N;
  row.J_dec = dec.cost;
  row.J_opt = evaluate_joint_feedback_cost(joint, central, grid);
  row.gap = row.J_dec - row.J_opt;
  row.eps1 = dec.eps1;
  row.eps2 = dec.eps2;
  row.dt = grid.dt();
  row.seed = seed;
  return row;
}

/// Least-squares slope of log(y) against log(N); NaN when y is not positive.
double loglog_slope(const std::vector<CostReport>& rows, double CostReport::*field) {
  const auto nrows = rows.size();
  if (nrows < 2) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const CostReport& r : rows) {
    const double y = r.*field;
    if (!(y > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double lx = std::log(static_cast<double>(r.N)), ly = std::log(y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double d = static_cast<double>(nrows);
  return (d * sxy - sx * sy) / (d * sxx - sx * sx);
}

}  // namespace

// ---------------------------------------------------------------------------
// public moment / cost / metric ops
// ---------------------------------------------------------------------------

MomentPath propagate_moments(const ScenarioParams& params, const MeanFieldSolution& solution,
                             int N) {
  const AugmentedEvaluator ev(params, solution, N);
  MomentPath path{solution.grid, N, ev.dim(), VectorPath(solution.grid.n_nodes()),
                  MatrixPath(solution.grid.n_nodes())};
  run_augmented(ev, [&](int node, const Vector& mu, const Matrix& sigma) {
    path.mean[node] = mu;
    path.covariance[node] = sigma;
  });
  return path;
}

namespace {

void check_moment_path(const AugmentedEvaluator& ev, const MomentPath& moments) {
  if (moments.dim != ev.dim() ||
      static_cast<int>(moments.mean.size()) != ev.grid().n_nodes() ||
      moments.covariance.size() != moments.mean.size())
    throw std::invalid_argument("moment path does not match the scenario/solution pair");
}

}  // namespace

double social_cost_exact(const ScenarioParams& params, const MeanFieldSolution& solution,
                         const MomentPath& moments) {
  const AugmentedEvaluator ev(params, solution, moments.N);
  check_moment_path(ev, moments);
  const TimeGrid& grid = solution.grid;
  const double h = grid.dt();
  double cost = 0.0;
  for (int node = 0; node <= grid.steps(); ++node) {
    const Vector& mu = moments.mean[node];
    const Matrix& sigma = moments.covariance[node];
    const auto np = ev.node_products(mu, sigma);
    if (node > 0) cost += 0.5 * h * ev.running_cost(node - 1, node, mu, sigma, np);
    if (node < grid.steps()) cost += 0.5 * h * ev.running_cost(node, node, mu, sigma, np);
    if (node == grid.steps()) cost += ev.terminal_cost(mu, sigma, np);
  }
  return cost;
}

ErrorMetrics meanfield_error_metrics(const ScenarioParams& params,
                                     const MeanFieldSolution& solution,
                                     const MomentPath& moments) {
  const AugmentedEvaluator ev(params, solution, moments.N);
  check_moment_path(ev, moments);
  ErrorMetrics out;
  for (int node = 0; node <= solution.grid.steps(); ++node) {
    const auto np = ev.node_products(moments.mean[node], moments.covariance[node]);
    const ErrorMetrics m =
        ev.error_metrics(node, moments.mean[node], moments.covariance[node], np);
    out.eps1 = std::max(out.eps1, m.eps1);
    out.eps2 = std::max(out.eps2, m.eps2);
  }
  return out;
}

CostReport optimality_gap(const ScenarioParams& params, int N, const TimeGrid& grid,
                          std::uint64_t seed) {
  const MeanFieldSolution solution = solve_mean_field(params, grid);
  return gap_with_solution(params, solution, N, grid, seed);
}

// ---------------------------------------------------------------------------
// Monte Carlo verification
// ---------------------------------------------------------------------------

namespace {

/// Per-path running cost of one node state block (columns = paths), with the
/// weights and gain factors of `interval`.
void path_running_costs(const AugmentedEvaluator& ev, const ScenarioParams& p,
                        const CoefficientPaths& coef, const TimeGrid& grid, int interval,
                        int node, const Matrix& x, Eigen::RowVectorXd& out) {
  const int n = p.dims.n, N = ev.players();
  const GainSet gs = ev.gain_at_node(interval, node);
  const Matrix& q0 = coef.Q0.on_interval(grid, interval);
  const Matrix& q = coef.Q.on_interval(grid, interval);
  const Matrix& r0w = coef.R0.on_interval(grid, interval);
  const Matrix& rw = coef.R.on_interval(grid, interval);
  const Matrix& h0 = coef.H0.on_interval(grid, interval);
  const Matrix& h1 = coef.H1.on_interval(grid, interval);
  const Matrix& h2 = coef.H2.on_interval(grid, interval);
  const Vector& e0 = coef.eta0.on_interval(grid, interval);
  const Vector& e = coef.eta.on_interval(grid, interval);
  const auto cols = x.cols();

  Matrix sr = Matrix::Zero(n, cols);
  for (int i = 0; i < N; ++i) sr += x.middleRows(ev.ri(i), n);

  // major tracking
  Matrix v = x.middleRows(ev.r0(), n) - (h0 / N) * sr;
  v.colwise() -= e0;
  out = v.cwiseProduct(q0 * v).colwise().sum();
  // major control
  Matrix u = gs.major * x.middleRows(ev.l0(), 2 * n);
  u.colwise() += gs.major_off;
  out += u.cwiseProduct(r0w * u).colwise().sum();
  // minors
  Matrix w = h1 * x.middleRows(ev.r0(), n) + (h2 / N) * sr;
  w.colwise() += e;
  Matrix uc = gs.field * x.middleRows(ev.l0(), 2 * n);
  uc.colwise() += gs.own_off;
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(cols);
  for (int i = 0; i < N; ++i) {
    v = x.middleRows(ev.ri(i), n) - w;
    acc += v.cwiseProduct(q * v).colwise().sum();
    u = gs.own * x.middleRows(ev.li(i), n) + uc;
    acc += u.cwiseProduct(rw * u).colwise().sum();
  }
  out += (p.lambda / N) * acc;
}

void path_terminal_costs(const AugmentedEvaluator& ev, const ScenarioParams& p, const Matrix& x,
                         Eigen::RowVectorXd& out) {
  const int n = p.dims.n, N = ev.players();
  const auto cols = x.cols();
  Matrix sr = Matrix::Zero(n, cols);
  for (int i = 0; i < N; ++i) sr += x.middleRows(ev.ri(i), n);
  Matrix v = x.middleRows(ev.r0(), n) - (p.H0f / N) * sr;
  v.colwise() -= p.eta0f;
  out = v.cwiseProduct(p.Q0f * v).colwise().sum();
  Matrix w = p.H1f * x.middleRows(ev.r0(), n) + (p.H2f / N) * sr;
  w.colwise() += p.etaf;
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(cols);
  for (int i = 0; i < N; ++i) {
    v = x.middleRows(ev.ri(i), n) - w;
    acc += v.cwiseProduct(p.Qf * v).colwise().sum();
  }
  out += (p.lambda / N) * acc;
}

/// Euler-Maruyama over one fixed-width block of paths. Block boundaries and
/// per-path noise streams are independent of the thread layout, so the
/// per-path costs are bit-reproducible for any `threads`.
void simulate_block(const AugmentedEvaluator& ev, const ScenarioParams& p,
                    const CoefficientPaths& coef, const TimeGrid& grid, std::uint64_t seed,
                    int first_path, int n_block, std::vector<double>& costs) {
  const int n = p.dims.n, n2 = p.dims.n2, N = ev.players();
  const int dim = ev.dim(), steps = grid.steps();
  const double h = grid.dt();
  const double sqh = std::sqrt(h);

  std::vector<SequentialNormals> draws;
  draws.reserve(n_block);
  for (int j = 0; j < n_block; ++j)
    draws.emplace_back(NormalStream(seed, /*purpose=*/0,
                                    static_cast<std::uint64_t>(first_path + j)));

  Matrix x(dim, n_block);
  const Vector mu0 = ev.initial_mean();
  x.colwise() = mu0;
  Eigen::RowVectorXd cost = Eigen::RowVectorXd::Zero(n_block);
  Eigen::RowVectorXd run(n_block);

  Matrix a(dim, dim);
  Vector b(dim);
  Matrix xi((N + 1) * n2, n_block);
  Matrix dn(n, n_block);
  for (int k = 0; k < steps; ++k) {
    path_running_costs(ev, p, coef, grid, k, k, x, run);
    cost += (0.5 * h) * run;

    ev.fill_drift(k, Stage::kLeft, a);
    ev.fill_offset(k, Stage::kLeft, b);
    for (int j = 0; j < n_block; ++j)
      for (int c = 0; c < (N + 1) * n2; ++c) xi(c, j) = draws[j].next();

    Matrix next = x + h * (a * x);
    next.colwise() += h * b;
    dn.noalias() = sqh * (coef.D0.on_interval(grid, k) * xi.topRows(n2));
    next.middleRows(ev.r0(), n) += dn;
    next.middleRows(ev.l0(), n) += dn;
    const Matrix& dmin = coef.D.on_interval(grid, k);
    for (int i = 0; i < N; ++i) {
      dn.noalias() = sqh * (dmin * xi.middleRows((1 + i) * n2, n2));
      next.middleRows(ev.ri(i), n) += dn;
      next.middleRows(ev.li(i), n) += dn;
    }
    x.swap(next);

    path_running_costs(ev, p, coef, grid, k, k + 1, x, run);
    cost += (0.5 * h) * run;
  }
  path_terminal_costs(ev, p, x, run);
  cost += run;
  for (int j = 0; j < n_block; ++j) costs[first_path + j] = cost[j];
}

}  // namespace

SimReport simulate_paths(const ScenarioParams& params, const MeanFieldSolution& solution, int N,
                         int n_paths, std::uint64_t seed, int threads) {
  if (n_paths < 2) throw std::invalid_argument("simulate_paths: need at least 2 paths");
  const AugmentedEvaluator ev(params, solution, N);
  const CoefficientPaths coef(params);
  const TimeGrid& grid = solution.grid;
  threads = std::max(1, threads);

  std::vector<double> costs(n_paths);
  const int n_blocks = (n_paths + kPathBlock - 1) / kPathBlock;
  std::atomic<int> next_block{0};
  auto worker = [&] {
    for (;;) {
      const int blk = next_block.fetch_add(1);
      if (blk >= n_blocks) return;
      const int first = blk * kPathBlock;
      const int count = std::min(kPathBlock, n_paths - first);
      simulate_block(ev, params, coef, grid, seed, first, count, costs);
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // sequential reduction in path order: independent of the thread layout
  double mean = 0.0;
  for (double c : costs) mean += c;
  mean /= n_paths;
  double var = 0.0;
  for (double c : costs) var += (c - mean) * (c - mean);
  var /= (n_paths - 1);

  SimReport rep;
  rep.n_paths = n_paths;
  rep.empirical_mean = mean;
  rep.standard_error = std::sqrt(var / n_paths);
  rep.exact_cost = run_augmented(ev, [](int, const Vector&, const Matrix&) {}).cost;
  return rep;
}

// ---------------------------------------------------------------------------
// convergence study
// ---------------------------------------------------------------------------

ConvergenceReport convergence_study(const ScenarioParams& params,
                                    const std::vector<int>& population_sizes,
                                    const TimeGrid& grid, std::uint64_t seed) {
  if (population_sizes.empty())
    throw std::invalid_argument("convergence_study: need at least one population size");
  const MeanFieldSolution solution = solve_mean_field(params, grid);
  ConvergenceReport rep;
  rep.rows.reserve(population_sizes.size());
  for (int N : population_sizes)
    rep.rows.push_back(gap_with_solution(params, solution, N, grid, seed));
  rep.gap_slope = loglog_slope(rep.rows, &CostReport::gap);
  rep.eps2_slope = loglog_slope(rep.rows, &CostReport::eps2);
  return rep;
}

std::string ConvergenceReport::to_csv() const {
  std::string out = "N,J_dec,J_opt,gap,eps1,eps2,dt,seed\n";
  for (const CostReport& r : rows) {
    out += std::to_string(r.N);
    out += ',';
    out += format_g17(r.J_dec);
    out += ',';
    out += format_g17(r.J_opt);
    out += ',';
    out += format_g17(r.gap);
    out += ',';
    out += format_g17(r.eps1);
    out += ',';
    out += format_g17(r.eps2);
    out += ',';
    out += format_g17(r.dt);
    out += ',';
    out += std::to_string(r.seed);
    out += '\n';
  }
  out += "# slope=";
  out += format_g17(gap_slope);
  out += '\n';
  return out;
}

}  // namespace mfsoc
