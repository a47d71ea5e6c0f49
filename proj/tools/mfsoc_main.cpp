// Command-line front end: solve a scenario, evaluate the optimality gap for a
// finite population, run the Monte Carlo check, produce the convergence table,
// or verify the internal structural identities.
//
// Exit codes: 0 success, 1 solver failure or failed check, 2 usage/config error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mfsoc/centralized.hpp"
#include "mfsoc/csv.hpp"
#include "mfsoc/evaluation.hpp"
#include "mfsoc/mean_field.hpp"
#include "mfsoc/scenario.hpp"

namespace {

using namespace mfsoc;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScenarioError("cannot open scenario file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ScenarioParams load_scenario(const std::string& path, int steps, TimeGrid& grid) {
  ScenarioParams params = parse_scenario(read_file(path));
  grid = TimeGrid(params.horizon, steps);
  const ValidationReport report = validate(params, grid);
  if (!report.ok()) throw ScenarioError("scenario validation failed:\n" + report.to_text());
  return params;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  if (out.empty()) throw ScenarioError("empty population list: " + text);
  return out;
}

std::string row_text(const Matrix& m) {
  std::string out = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r > 0) out += "; ";
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ", ";
      out += format_g17(m(r, c));
    }
  }
  return out + "]";
}

void write_output(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ScenarioError("cannot write output file: " + path);
  out << content;
}

int run_solve(const std::string& scenario, int steps) {
  TimeGrid grid(1.0, 1);
  const ScenarioParams params = load_scenario(scenario, steps, grid);
  const MeanFieldSolution sol = solve_mean_field(params, grid);
  std::cout << "grid: " << grid.n_nodes() << " nodes, dt=" << format_g17(grid.dt()) << "\n";
  std::cout << "offset matching residual: " << format_g17(sol.matching_residual) << "\n";
  std::cout << "t=0 major gain:       " << row_text(sol.law.major_gain.front()) << "\n";
  std::cout << "t=0 major shift:      " << row_text(sol.law.major_shift.front()) << "\n";
  std::cout << "t=0 minor own gain:   " << row_text(sol.law.minor_own_gain.front()) << "\n";
  std::cout << "t=0 minor field gain: " << row_text(sol.law.minor_field_gain.front()) << "\n";
  std::cout << "t=0 minor shift:      " << row_text(sol.law.minor_shift.front()) << "\n";
  return 0;
}

int run_evaluate(const std::string& scenario, int steps, int N, std::uint64_t seed,
                 const std::string& out_path) {
  TimeGrid grid(1.0, 1);
  const ScenarioParams params = load_scenario(scenario, steps, grid);
  const CostReport r = optimality_gap(params, N, grid, seed);
  std::cout << "N=" << r.N << "\n";
  std::cout << "J_dec=" << format_g17(r.J_dec) << "\n";
  std::cout << "J_opt=" << format_g17(r.J_opt) << "\n";
  std::cout << "gap=" << format_g17(r.gap) << "\n";
  std::cout << "eps1=" << format_g17(r.eps1) << "\n";
  std::cout << "eps2=" << format_g17(r.eps2) << "\n";
  if (!out_path.empty()) {
    std::string csv = "N,J_dec,J_opt,gap,eps1,eps2,dt,seed\n";
    csv += std::to_string(r.N) + ',' + format_g17(r.J_dec) + ',' + format_g17(r.J_opt) + ',' +
           format_g17(r.gap) + ',' + format_g17(r.eps1) + ',' + format_g17(r.eps2) + ',' +
           format_g17(r.dt) + ',' + std::to_string(r.seed) + '\n';
    write_output(out_path, csv);
  }
  return 0;
}

int run_simulate(const std::string& scenario, int steps, int N, int paths, std::uint64_t seed,
                 int threads) {
  TimeGrid grid(1.0, 1);
  const ScenarioParams params = load_scenario(scenario, steps, grid);
  const MeanFieldSolution sol = solve_mean_field(params, grid);
  const SimReport rep = simulate_paths(params, sol, N, paths, seed, threads);
  const double diff = rep.empirical_mean - rep.exact_cost;
  std::cout << "paths=" << rep.n_paths << "\n";
  std::cout << "exact cost=" << format_g17(rep.exact_cost) << "\n";
  std::cout << "empirical mean=" << format_g17(rep.empirical_mean) << "\n";
  std::cout << "standard error=" << format_g17(rep.standard_error) << "\n";
  std::cout << "|difference|/SE=" << format_g17(std::abs(diff) / rep.standard_error) << "\n";
  const bool ok = std::abs(diff) <= 3.0 * rep.standard_error;
  std::cout << (ok ? "OK" : "FAIL") << ": empirical mean within 3 standard errors\n";
  return ok ? 0 : 1;
}

int run_converge(const std::string& scenario, int steps, const std::string& n_list,
                 std::uint64_t seed, const std::string& out_path) {
  TimeGrid grid(1.0, 1);
  const ScenarioParams params = load_scenario(scenario, steps, grid);
  const ConvergenceReport rep = convergence_study(params, parse_int_list(n_list), grid, seed);
  const std::string csv = rep.to_csv();
  if (out_path.empty())
    std::cout << csv;
  else
    write_output(out_path, csv);
  return 0;
}

int run_check(const std::string& scenario, int steps) {
  TimeGrid grid(1.0, 1);
  const ScenarioParams params = load_scenario(scenario, steps, grid);
  bool ok = true;

  const DerivedCoefficients derived = derive_coefficients(params);
  const AggregateSystem agg = assemble_aggregate(params, derived);
  const PsdCertificate cert = check_q0_psd(params, derived, agg);
  std::cout << (cert.ok ? "OK" : "FAIL") << ": aggregate state-cost certificate (max residual "
            << format_g17(cert.max_residual) << (cert.detail.empty() ? "" : "; " + cert.detail)
            << ")\n";
  ok = ok && cert.ok;

  const MeanFieldSolution sol = solve_mean_field(params, grid);
  std::cout << (sol.matching_residual <= 1e-8 ? "OK" : "FAIL")
            << ": offset matching residual " << format_g17(sol.matching_residual) << "\n";
  ok = ok && sol.matching_residual <= 1e-8;

  const double resid = consistency_residual(params, grid);
  std::cout << (resid <= 1e-8 ? "OK" : "FAIL") << ": fixed-point consistency residual "
            << format_g17(resid) << "\n";
  ok = ok && resid <= 1e-8;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linear-quadratic mean-field social optimization toolkit"};
  app.require_subcommand(1);

  std::string scenario;
  std::string n_list = "2,4,8,16,32,64,128";
  std::string out_path;
  int steps = 2000;
  int N = 2;
  int paths = 10000;
  int threads = 1;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", scenario, "scenario JSON file")->required();
    cmd->add_option("--steps", steps, "time steps on [0, horizon]")->check(CLI::PositiveNumber);
  };

  CLI::App* solve = app.add_subcommand("solve", "solve the decentralized strategy set");
  add_common(solve);

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "decentralized cost, exact optimum and gap for one N");
  add_common(evaluate);
  evaluate->add_option("--N", N, "population size")->check(CLI::PositiveNumber);
  evaluate->add_option("--seed", seed, "seed recorded in the report");
  evaluate->add_option("--out", out_path, "write a CSV row here");

  CLI::App* simulate =
      app.add_subcommand("simulate", "Monte Carlo check of the exact decentralized cost");
  add_common(simulate);
  simulate->add_option("--N", N, "population size")->check(CLI::PositiveNumber);
  simulate->add_option("--paths", paths, "number of sample paths")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", seed, "noise seed");
  simulate->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  CLI::App* converge =
      app.add_subcommand("converge", "gap and mean-field error across population sizes");
  add_common(converge);
  converge->add_option("--N", n_list, "comma-separated population sizes");
  converge->add_option("--seed", seed, "seed recorded in the report");
  converge->add_option("--out", out_path, "write the CSV table here");

  CLI::App* check = app.add_subcommand("check", "structural identities and certificates");
  add_common(check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (solve->parsed()) return run_solve(scenario, steps);
    if (evaluate->parsed()) return run_evaluate(scenario, steps, N, seed, out_path);
    if (simulate->parsed()) return run_simulate(scenario, steps, N, paths, seed, threads);
    if (converge->parsed()) return run_converge(scenario, steps, n_list, seed, out_path);
    if (check->parsed()) return run_check(scenario, steps);
  } catch (const ScenarioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
