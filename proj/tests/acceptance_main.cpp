// Acceptance gate: ten pinned checks, one PASS/FAIL line each, exit code =
// number of failures. Tolerances are fixed here on purpose — they are the
// contract, not knobs.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mfsoc/centralized.hpp"
#include "mfsoc/evaluation.hpp"
#include "mfsoc/mean_field.hpp"
#include "mfsoc/scenario.hpp"

using namespace mfsoc;

namespace {

ScenarioParams load(const std::string& name) {
  std::ifstream in(std::string(MFSOC_SCENARIO_DIR) + "/" + name, std::ios::binary);
  if (!in) throw ScenarioError("cannot open scenario " + name);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

std::string fmt(const char* pattern, ...) {
  char out[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(out, sizeof(out), pattern, args);
  va_end(args);
  return out;
}

int failures = 0;

void report(int k, bool ok, const std::string& desc, const std::string& observed) {
  std::printf("%s %d: %s (%s)\n", ok ? "PASS" : "FAIL", k, desc.c_str(), observed.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double subset_loglog_slope(const std::vector<CostReport>& rows, int n_lo, int n_hi,
                           double CostReport::*field) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0, cnt = 0;
  for (const CostReport& r : rows) {
    if (r.N < n_lo || r.N > n_hi) continue;
    const double lx = std::log(double(r.N)), ly = std::log(r.*field);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    cnt += 1.0;
  }
  return (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
}

}  // namespace

int main() {
  const ScenarioParams canonical = load("canonical.json");
  const ScenarioParams decoupled = load("decoupled.json");
  const TimeGrid grid(1.0, 2000);

  // 1. optimality gap decays with the population size, within the time budget
  const auto t0 = std::chrono::steady_clock::now();
  const ConvergenceReport study = convergence_study(canonical, {2, 4, 8, 16, 32, 64, 128}, grid, 0);
  const double study_secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  {
    bool positive = true, decreasing = true;
    for (std::size_t i = 0; i < study.rows.size(); ++i) {
      positive = positive && study.rows[i].gap > 0.0;
      if (i > 0) decreasing = decreasing && study.rows[i].gap < study.rows[i - 1].gap;
    }
    const bool ok = positive && decreasing && study.gap_slope <= -0.5 && study_secs <= 60.0;
    report(1, ok, "optimality gap positive, strictly decreasing, decaying in N",
           fmt("slope=%.4f, gap(2)=%.4e, gap(128)=%.4e, runtime=%.1fs", study.gap_slope,
               study.rows.front().gap, study.rows.back().gap, study_secs));
  }

  // 2. without interaction the decentralized strategies are exactly optimal
  {
    double worst = 0.0;
    for (int N : {1, 4, 16}) {
      const CostReport r = optimality_gap(decoupled, N, grid, 0);
      worst = std::max(worst, std::abs(r.gap) / (1.0 + std::abs(r.J_opt)));
    }
    report(2, worst <= 1e-8, "decoupled scenario: gap vanishes for N in {1,4,16}",
           fmt("max relative gap=%.3e, tol=1e-8", worst));
  }

  // 3. the mean control reproduces itself; a shifted one visibly does not
  {
    const double fixed_point = consistency_residual(canonical, grid);
    const double perturbed = consistency_residual(canonical, grid, 0.1);
    report(3, fixed_point <= 1e-8 && perturbed >= 1e-3,
           "mean-control fixed point tight, perturbation detected",
           fmt("residual=%.3e (tol 1e-8), perturbed=%.3e (floor 1e-3)", fixed_point, perturbed));
  }

  const MeanFieldSolution sol = solve_mean_field(canonical, grid);

  // 4. minor offset pair coincides with blocks of the aggregate solution
  report(4, sol.matching_residual <= 1e-8, "offset-block identity at every node",
         fmt("sup residual=%.3e, tol=1e-8", sol.matching_residual));

  // 5. noise gain is the constructed product, bitwise
  {
    const CoefficientPaths coef(canonical);
    double worst = 0.0;
    for (int k = 0; k < grid.n_nodes(); ++k) {
      const Matrix sum = sol.minor_noise_gain[k] + sol.minor_riccati[k] * coef.D.at_node(grid, k);
      worst = std::max(worst, sum.cwiseAbs().maxCoeff());
    }
    report(5, worst == 0.0, "adjoint noise gain identity holds bitwise",
           fmt("max |zeta + P D|=%.1e", worst));
  }

  // 6. mean-field control error rate over the mid-range populations
  {
    const double slope = subset_loglog_slope(study.rows, 4, 64, &CostReport::eps2);
    report(6, slope >= -1.15 && slope <= -0.85,
           "mean-field error decays at the 1/N rate over N in {4..64}",
           fmt("slope=%.4f, window=[-1.15,-0.85]", slope));
  }

  // 7. scalar closed forms on dedicated configurations + positivity everywhere
  {
    bool psd = true;
    for (int k = 0; k < grid.n_nodes(); ++k)
      psd = psd && is_psd(sol.aggregate_riccati[k]).psd && is_psd(sol.minor_riccati[k]).psd;

    ScenarioParams hyper = decoupled;
    hyper.A.values[0].setZero();
    hyper.Q.values[0].setZero();
    hyper.Qf.setIdentity();
    const TimeGrid fine(1.0, 10000);
    const MatrixPath inv_form = solve_minor_riccati(hyper, derive_coefficients(hyper), fine);
    double err_inv = 0.0;
    for (int k = 0; k <= 10000; ++k)
      err_inv = std::max(err_inv, std::abs(inv_form[k](0, 0) - 1.0 / (2.0 - fine.node(k))));

    ScenarioParams linear = decoupled;
    linear.A.values[0].setZero();
    linear.B.values[0].setZero();
    linear.B0.values[0].setZero();
    linear.Qf.setZero();
    const MatrixPath lin_form = solve_minor_riccati(linear, derive_coefficients(linear), fine);
    double err_lin = 0.0;
    for (int k = 0; k <= 10000; ++k)
      err_lin = std::max(err_lin, std::abs(lin_form[k](0, 0) - (1.0 - fine.node(k))));

    report(7, err_inv <= 1e-8 && err_lin <= 1e-10 && psd,
           "Riccati closed forms at fine resolution, positivity along the path",
           fmt("|P - 1/(2-t)|=%.2e (tol 1e-8), |P - (T-t)|=%.2e (tol 1e-10), psd=%s", err_inv,
               err_lin, psd ? "yes" : "no"));
  }

  // 8. Monte Carlo population cost agrees with the exact evaluation
  {
    const SimReport sim = simulate_paths(canonical, sol, 4, 10000, 0, 4);
    const double diff = std::abs(sim.empirical_mean - sim.exact_cost);
    report(8, diff <= 3.0 * sim.standard_error,
           "empirical social cost within three standard errors of exact",
           fmt("|diff|=%.3e, 3*SE=%.3e, exact=%.9f", diff, 3.0 * sim.standard_error,
               sim.exact_cost));
  }

  // 9. the centralized feedback is a stationary point of the social cost
  {
    const StationarityReport rep = centralized_stationarity_check(canonical, 2, grid, 0, 10, 1e-2);
    bool curok = true;
    for (double c : rep.curvatures) curok = curok && c > 0.0;
    const double tol = 1e-6 * (1.0 + std::abs(rep.optimal_cost));
    report(9, rep.max_abs_slope <= tol && curok,
           "open-loop perturbations: zero slope, positive curvature",
           fmt("max|slope|=%.3e (tol %.3e), min curvature=%.3e", rep.max_abs_slope, tol,
               rep.min_curvature));
  }

  // 10. byte-identical reruns, independent of parallelism
  {
    const ConvergenceReport again =
        convergence_study(canonical, {2, 4, 8, 16, 32, 64, 128}, grid, 0);
    const bool csv_same = study.to_csv() == again.to_csv();
    const SimReport sim1 = simulate_paths(canonical, sol, 4, 2000, 0, 1);
    const SimReport sim4 = simulate_paths(canonical, sol, 4, 2000, 0, 4);
    const bool sim_same = sim1.empirical_mean == sim4.empirical_mean &&
                          sim1.standard_error == sim4.standard_error;
    report(10, csv_same && sim_same, "reruns byte-identical; thread count does not change results",
           fmt("csv %s, simulation %s", csv_same ? "identical" : "differs",
               sim_same ? "identical" : "differs"));
  }

  std::printf("%d of 10 criteria failed\n", failures);
  return failures;
}
