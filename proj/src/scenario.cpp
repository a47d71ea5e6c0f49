#include "mfsoc/scenario.hpp"

#include <json.hpp>

#include <cmath>
#include <utility>

namespace mfsoc {

using nlohmann::json;

// ===========================================================================
// parsing
// ===========================================================================

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ScenarioError(where + ": " + what);
}

const json& member(const json& j, const std::string& where, const char* key) {
  if (!j.is_object()) fail(where, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(where, std::string("missing key '") + key + "'");
  return *it;
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  return j.get<double>();
}

Vector parse_vector(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) fail(where, "expected a non-empty array of numbers");
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], where);
  return v;
}

Matrix parse_matrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) fail(where, "expected a non-empty array of rows");
  if (!j[0].is_array() || j[0].empty()) fail(where, "expected rows as arrays of numbers");
  const auto rows = j.size(), cols = j[0].size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) fail(where, "rows have unequal lengths");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number(j[r][c], where);
  }
  return m;
}

template <class V, class Parse>
SegmentList<V> parse_segments(const json& coeffs, const char* name, Parse&& parse_value) {
  const std::string where = std::string("coefficients.") + name;
  const json& j = member(coeffs, "coefficients", name);
  if (!j.is_array() || j.empty()) fail(where, "expected a non-empty array of segments");
  SegmentList<V> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string seg = where + "[" + std::to_string(i) + "]";
    out.starts.push_back(number(member(j[i], seg, "t_start"), seg + ".t_start"));
    out.values.push_back(parse_value(member(j[i], seg, "value"), seg + ".value"));
  }
  return out;
}

}  // namespace

ScenarioParams parse_scenario(const std::string& json_text) {
  json root = json::parse(json_text, nullptr, /*allow_exceptions=*/false);
  if (root.is_discarded()) throw ScenarioError("scenario: malformed JSON");

  ScenarioParams p;
  const json& dims = member(root, "scenario", "dims");
  p.dims.n = static_cast<int>(number(member(dims, "dims", "n"), "dims.n"));
  p.dims.n1 = static_cast<int>(number(member(dims, "dims", "n1"), "dims.n1"));
  p.dims.n2 = static_cast<int>(number(member(dims, "dims", "n2"), "dims.n2"));
  p.horizon = number(member(root, "scenario", "horizon"), "horizon");
  p.lambda = number(member(root, "scenario", "lambda"), "lambda");

  const json& co = member(root, "scenario", "coefficients");
  auto mat = [&](const char* name) { return parse_segments<Matrix>(co, name, parse_matrix); };
  auto vec = [&](const char* name) { return parse_segments<Vector>(co, name, parse_vector); };
  p.A0 = mat("A0"); p.B0 = mat("B0"); p.F0 = mat("F0"); p.D0 = mat("D0");
  p.A = mat("A"); p.B = mat("B"); p.F = mat("F"); p.G = mat("G"); p.D = mat("D");
  p.H0 = mat("H0"); p.H1 = mat("H1"); p.H2 = mat("H2");
  p.Q0 = mat("Q0"); p.Q = mat("Q"); p.R0 = mat("R0"); p.R = mat("R");
  p.eta0 = vec("eta0"); p.eta = vec("eta");

  const json& tf = member(root, "scenario", "terminal");
  p.Q0f = parse_matrix(member(tf, "terminal", "Q0f"), "terminal.Q0f");
  p.Qf = parse_matrix(member(tf, "terminal", "Qf"), "terminal.Qf");
  p.H0f = parse_matrix(member(tf, "terminal", "H0f"), "terminal.H0f");
  p.H1f = parse_matrix(member(tf, "terminal", "H1f"), "terminal.H1f");
  p.H2f = parse_matrix(member(tf, "terminal", "H2f"), "terminal.H2f");
  p.eta0f = parse_vector(member(tf, "terminal", "eta0f"), "terminal.eta0f");
  p.etaf = parse_vector(member(tf, "terminal", "etaf"), "terminal.etaf");

  const json& init = member(root, "scenario", "init");
  p.z0 = parse_vector(member(init, "init", "z0"), "init.z0");
  p.m0 = parse_vector(member(init, "init", "m0"), "init.m0");
  const json& mi = member(init, "init", "minor_init");
  const json& mode = member(mi, "init.minor_init", "mode");
  if (!mode.is_string()) fail("init.minor_init.mode", "expected a string");
  const std::string mode_s = mode.get<std::string>();
  if (mode_s == "explicit") {
    p.minor_init.mode = MinorInit::Mode::kExplicit;
    const json& vals = member(mi, "init.minor_init", "values");
    if (!vals.is_array() || vals.empty())
      fail("init.minor_init.values", "expected a non-empty array of vectors");
    for (std::size_t i = 0; i < vals.size(); ++i)
      p.minor_init.values.push_back(
          parse_vector(vals[i], "init.minor_init.values[" + std::to_string(i) + "]"));
  } else if (mode_s == "grid") {
    p.minor_init.mode = MinorInit::Mode::kGrid;
    if (mi.contains("rule")) {
      const json& rule = mi["rule"];
      if (!rule.is_string()) fail("init.minor_init.rule", "expected a string");
      p.minor_init.rule = rule.get<std::string>();
    }
    if (mi.contains("radius")) p.minor_init.radius = number(mi["radius"], "init.minor_init.radius");
  } else {
    fail("init.minor_init.mode", "expected \"explicit\" or \"grid\"");
  }
  return p;
}

std::vector<Vector> MinorInit::states(int N, const Vector& m0) const {
  if (N < 1) throw std::invalid_argument("minor_init: N must be positive");
  if (mode == Mode::kExplicit) {
    if (static_cast<int>(values.size()) != N)
      throw std::invalid_argument("minor_init: explicit values are for N = " +
                                  std::to_string(values.size()) + ", requested N = " +
                                  std::to_string(N));
    return values;
  }
  std::vector<Vector> out(static_cast<std::size_t>(N), m0);
  if (rule == "spread") {
    // integer-symmetric fan: offsets sum to zero exactly, so the population
    // mean stays at m0 in floating point as well
    const double denom = N > 1 ? N - 1.0 : 1.0;
    for (int i = 1; i <= N; ++i)
      out[static_cast<std::size_t>(i - 1)] =
          m0.array() + radius * (2.0 * i - N - 1.0) / denom;
  } else if (rule != "constant") {
    throw std::invalid_argument("minor_init: unknown grid rule '" + rule + "'");
  }
  return out;
}

// ===========================================================================
// validation
// ===========================================================================

std::string ValidationReport::to_text() const {
  std::string out;
  for (const Violation& v : violations) out += v.field + ": " + v.message + "\n";
  return out;
}

namespace {

bool on_grid(double t, const TimeGrid& grid) {
  const double steps = t / grid.dt();
  return std::abs(steps - std::round(steps)) <= 1e-9;
}

void check_value(ValidationReport& rep, const std::string& field, const Matrix& m,
                 int rows, int cols, const Tolerances& tol) {
  if (rows > 0 && (m.rows() != rows || m.cols() != cols)) {
    rep.add(field, "expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                       std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    return;
  }
  if (!m.allFinite())
    rep.add(field, "contains non-finite entries");
  else if (m.cwiseAbs().maxCoeff() > tol.magnitude_cap)
    rep.add(field, "entry magnitude above the cap " + std::to_string(tol.magnitude_cap));
}

template <class V>
void check_segments(ValidationReport& rep, const std::string& field, const SegmentList<V>& segs,
                    int rows, int cols, const TimeGrid& grid, const Tolerances& tol) {
  if (segs.starts.empty() || segs.starts.size() != segs.values.size()) {
    rep.add(field, "needs at least one segment with one value per start");
    return;
  }
  if (segs.starts.front() != 0.0) rep.add(field, "first segment must start at t = 0");
  for (std::size_t i = 1; i < segs.starts.size(); ++i)
    if (segs.starts[i] <= segs.starts[i - 1]) {
      rep.add(field, "overlapping or unordered segments at index " + std::to_string(i));
      break;
    }
  for (std::size_t i = 0; i < segs.starts.size(); ++i) {
    const std::string seg = field + "[" + std::to_string(i) + "]";
    const double s = segs.starts[i];
    if (!(s >= 0.0) || s >= grid.horizon())
      rep.add(seg, "segment start outside [0, horizon)");
    else if (!on_grid(s, grid))
      rep.add(seg, "segment breakpoint does not lie on a grid node");
    if constexpr (std::is_same_v<V, Matrix>) {
      check_value(rep, seg, segs.values[i], rows, cols, tol);
    } else {
      if (rows > 0 && segs.values[i].size() != rows)
        rep.add(seg, "expected length " + std::to_string(rows) + ", got " +
                         std::to_string(segs.values[i].size()));
      else if (!segs.values[i].allFinite() ||
               segs.values[i].cwiseAbs().maxCoeff() > tol.magnitude_cap)
        rep.add(seg, "non-finite or above the magnitude cap");
    }
  }
}

void check_symmetric_psd(ValidationReport& rep, const std::string& field, const Matrix& m,
                         const Tolerances& tol, double floor) {
  if (m.rows() != m.cols()) return;  // shape already reported
  if (!is_symmetric(m, tol.symmetry_tol)) {
    rep.add(field, "not symmetric");
    return;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  const double mineig = es.eigenvalues().minCoeff();
  if (floor > 0.0) {
    if (mineig < floor)
      rep.add(field, "minimum eigenvalue " + std::to_string(mineig) +
                         " below the positivity floor " + std::to_string(floor));
  } else if (mineig < -tol.psd_tol * (1.0 + m.norm())) {
    rep.add(field, "not positive semidefinite (min eigenvalue " + std::to_string(mineig) + ")");
  }
}

}  // namespace

ValidationReport validate(const ScenarioParams& p, const TimeGrid& grid, const Tolerances& tol) {
  ValidationReport rep;
  if (p.dims.n < 1) rep.add("dims.n", "must be >= 1");
  if (p.dims.n1 < 1) rep.add("dims.n1", "must be >= 1");
  if (p.dims.n2 < 1) rep.add("dims.n2", "must be >= 1");
  if (!(p.horizon > 0.0) || !std::isfinite(p.horizon)) rep.add("horizon", "must be positive and finite");
  if (!(p.lambda > 0.0) || !std::isfinite(p.lambda)) rep.add("lambda", "must be positive and finite");
  if (std::abs(p.horizon - grid.horizon()) > 1e-12 * (1.0 + std::abs(p.horizon)))
    rep.add("horizon", "differs from the solver grid horizon");
  if (!rep.ok()) return rep;  // shape checks below need valid dims

  const int n = p.dims.n, n1 = p.dims.n1, n2 = p.dims.n2;
  check_segments(rep, "A0", p.A0, n, n, grid, tol);
  check_segments(rep, "B0", p.B0, n, n1, grid, tol);
  check_segments(rep, "F0", p.F0, n, n, grid, tol);
  check_segments(rep, "D0", p.D0, n, n2, grid, tol);
  check_segments(rep, "A", p.A, n, n, grid, tol);
  check_segments(rep, "B", p.B, n, n1, grid, tol);
  check_segments(rep, "F", p.F, n, n, grid, tol);
  check_segments(rep, "G", p.G, n, n, grid, tol);
  check_segments(rep, "D", p.D, n, n2, grid, tol);
  check_segments(rep, "H0", p.H0, n, n, grid, tol);
  check_segments(rep, "H1", p.H1, n, n, grid, tol);
  check_segments(rep, "H2", p.H2, n, n, grid, tol);
  check_segments(rep, "Q0", p.Q0, n, n, grid, tol);
  check_segments(rep, "Q", p.Q, n, n, grid, tol);
  check_segments(rep, "R0", p.R0, n1, n1, grid, tol);
  check_segments(rep, "R", p.R, n1, n1, grid, tol);
  check_segments(rep, "eta0", p.eta0, n, 1, grid, tol);
  check_segments(rep, "eta", p.eta, n, 1, grid, tol);

  for (std::size_t i = 0; i < p.Q0.values.size(); ++i)
    check_symmetric_psd(rep, "Q0[" + std::to_string(i) + "]", p.Q0.values[i], tol, 0.0);
  for (std::size_t i = 0; i < p.Q.values.size(); ++i)
    check_symmetric_psd(rep, "Q[" + std::to_string(i) + "]", p.Q.values[i], tol, 0.0);
  for (std::size_t i = 0; i < p.R0.values.size(); ++i)
    check_symmetric_psd(rep, "R0[" + std::to_string(i) + "]", p.R0.values[i], tol,
                        tol.positivity_floor);
  for (std::size_t i = 0; i < p.R.values.size(); ++i)
    check_symmetric_psd(rep, "R[" + std::to_string(i) + "]", p.R.values[i], tol,
                        tol.positivity_floor);

  check_value(rep, "terminal.Q0f", p.Q0f, n, n, tol);
  check_value(rep, "terminal.Qf", p.Qf, n, n, tol);
  check_value(rep, "terminal.H0f", p.H0f, n, n, tol);
  check_value(rep, "terminal.H1f", p.H1f, n, n, tol);
  check_value(rep, "terminal.H2f", p.H2f, n, n, tol);
  check_symmetric_psd(rep, "terminal.Q0f", p.Q0f, tol, 0.0);
  check_symmetric_psd(rep, "terminal.Qf", p.Qf, tol, 0.0);
  if (p.eta0f.size() != n) rep.add("terminal.eta0f", "expected length " + std::to_string(n));
  if (p.etaf.size() != n) rep.add("terminal.etaf", "expected length " + std::to_string(n));

  if (p.z0.size() != n) rep.add("init.z0", "expected length " + std::to_string(n));
  if (p.m0.size() != n) rep.add("init.m0", "expected length " + std::to_string(n));
  if (p.minor_init.mode == MinorInit::Mode::kExplicit) {
    if (p.minor_init.values.empty()) rep.add("init.minor_init.values", "must be non-empty");
    for (std::size_t i = 0; i < p.minor_init.values.size(); ++i)
      if (p.minor_init.values[i].size() != n)
        rep.add("init.minor_init.values[" + std::to_string(i) + "]",
                "expected length " + std::to_string(n));
  } else {
    if (p.minor_init.rule != "constant" && p.minor_init.rule != "spread")
      rep.add("init.minor_init.rule", "unknown rule '" + p.minor_init.rule + "'");
    if (!(p.minor_init.radius >= 0.0) || !std::isfinite(p.minor_init.radius))
      rep.add("init.minor_init.radius", "must be finite and >= 0");
  }
  return rep;
}

// ===========================================================================
// derived coefficients and the aggregate system
// ===========================================================================

CoefficientPaths::CoefficientPaths(const ScenarioParams& p)
    : A0(p.A0.to_piecewise()), B0(p.B0.to_piecewise()), F0(p.F0.to_piecewise()),
      D0(p.D0.to_piecewise()), A(p.A.to_piecewise()), B(p.B.to_piecewise()),
      F(p.F.to_piecewise()), G(p.G.to_piecewise()), D(p.D.to_piecewise()),
      H0(p.H0.to_piecewise()), H1(p.H1.to_piecewise()), H2(p.H2.to_piecewise()),
      Q0(p.Q0.to_piecewise()), Q(p.Q.to_piecewise()), R0(p.R0.to_piecewise()),
      R(p.R.to_piecewise()), eta0(p.eta0.to_piecewise()), eta(p.eta.to_piecewise()) {}

DerivedCoefficients derive_coefficients(const ScenarioParams& p) {
  const CoefficientPaths c(p);
  const double lam = p.lambda;
  const Matrix id = Matrix::Identity(p.dims.n, p.dims.n);

  DerivedCoefficients d;
  d.K0 = combine<Matrix>(
      [&](const Matrix& Q0, const Matrix& H0, const Matrix& H1, const Matrix& Q,
          const Matrix& H2) -> Matrix {
        return -Q0 * H0 - lam * H1.transpose() * Q * (id - H2);
      },
      c.Q0, c.H0, c.H1, c.Q, c.H2);
  d.M0 = combine<Matrix>(
      [&](const Matrix& Q0, const Matrix& H1, const Matrix& Q) -> Matrix {
        return Q0 + lam * H1.transpose() * Q * H1;
      },
      c.Q0, c.H1, c.Q);
  d.M = combine<Matrix>(
      [&](const Matrix& H0, const Matrix& Q0, const Matrix& H2, const Matrix& Q) -> Matrix {
        return H0.transpose() * Q0 * H0 +
               lam * (id - H2).transpose() * Q * (id - H2);
      },
      c.H0, c.Q0, c.H2, c.Q);
  d.nu0 = combine<Vector>(
      [&](const Matrix& H1, const Matrix& Q, const Vector& eta, const Matrix& Q0,
          const Vector& eta0) -> Vector { return lam * H1.transpose() * Q * eta - Q0 * eta0; },
      c.H1, c.Q, c.eta, c.Q0, c.eta0);
  d.nu = combine<Vector>(
      [&](const Matrix& H0, const Matrix& Q0, const Vector& eta0, const Matrix& H2,
          const Matrix& Q, const Vector& eta) -> Vector {
        return H0.transpose() * Q0 * eta0 + lam * H2.transpose() * Q * eta - lam * Q * eta;
      },
      c.H0, c.Q0, c.eta0, c.H2, c.Q, c.eta);
  d.Rlam = combine<Matrix>([&](const Matrix& R) -> Matrix { return lam * R; }, c.R);

  d.K0f = -p.Q0f * p.H0f - lam * p.H1f.transpose() * p.Qf * (id - p.H2f);
  d.M0f = p.Q0f + lam * p.H1f.transpose() * p.Qf * p.H1f;
  d.Mf = p.H0f.transpose() * p.Q0f * p.H0f +
         lam * (id - p.H2f).transpose() * p.Qf * (id - p.H2f);
  d.nu0f = lam * p.H1f.transpose() * p.Qf * p.etaf - p.Q0f * p.eta0f;
  d.nuf = p.H0f.transpose() * p.Q0f * p.eta0f + lam * p.H2f.transpose() * p.Qf * p.etaf -
          lam * p.Qf * p.etaf;
  return d;
}

AggregateSystem assemble_aggregate(const ScenarioParams& p, const DerivedCoefficients& d) {
  const CoefficientPaths c(p);
  const int n = p.dims.n, n1 = p.dims.n1;

  AggregateSystem agg;
  agg.n = n;
  agg.n1 = n1;
  agg.n2 = p.dims.n2;
  agg.drift = combine<Matrix>(
      [&](const Matrix& A0, const Matrix& F0, const Matrix& G, const Matrix& A,
          const Matrix& F) -> Matrix {
        Matrix m(2 * n, 2 * n);
        m << A0, F0, G, A + F;
        return m;
      },
      c.A0, c.F0, c.G, c.A, c.F);
  agg.input_major = combine<Matrix>(
      [&](const Matrix& B0) -> Matrix {
        Matrix m = Matrix::Zero(2 * n, n1);
        m.topRows(n) = B0;
        return m;
      },
      c.B0);
  agg.input_mean = combine<Matrix>(
      [&](const Matrix& B) -> Matrix {
        Matrix m = Matrix::Zero(2 * n, n1);
        m.bottomRows(n) = B;
        return m;
      },
      c.B);
  agg.noise = combine<Matrix>(
      [&](const Matrix& D0) -> Matrix {
        Matrix m = Matrix::Zero(2 * n, p.dims.n2);
        m.topRows(n) = D0;
        return m;
      },
      c.D0);
  agg.state_cost = combine<Matrix>(
      [&](const Matrix& M0, const Matrix& K0, const Matrix& M) -> Matrix {
        Matrix m(2 * n, 2 * n);
        m << M0, K0, K0.transpose(), M;
        return m;
      },
      d.M0, d.K0, d.M);
  agg.cost_shift = combine<Vector>(
      [&](const Vector& nu0, const Vector& nu) -> Vector {
        Vector v(2 * n);
        v << nu0, nu;
        return v;
      },
      d.nu0, d.nu);
  agg.input_block = combine<Matrix>(
      [&](const Matrix& B0, const Matrix& B) -> Matrix {
        Matrix m = Matrix::Zero(2 * n, 2 * n1);
        m.topLeftCorner(n, n1) = B0;
        m.bottomRightCorner(n, n1) = B;
        return m;
      },
      c.B0, c.B);
  agg.control_weight = combine<Matrix>(
      [&](const Matrix& R0, const Matrix& Rlam) -> Matrix {
        Matrix m = Matrix::Zero(2 * n1, 2 * n1);
        m.topLeftCorner(n1, n1) = R0;
        m.bottomRightCorner(n1, n1) = Rlam;
        return m;
      },
      c.R0, d.Rlam);
  agg.feedback_quad = combine<Matrix>(
      [&](const Matrix& B1, const Matrix& R1) -> Matrix {
        Eigen::LLT<Matrix> llt(R1);
        if (llt.info() != Eigen::Success)
          throw std::invalid_argument(
              "assemble_aggregate: control weight block is not positive definite");
        return B1 * llt.solve(B1.transpose());
      },
      agg.input_block, agg.control_weight);

  agg.state_cost_final = Matrix(2 * n, 2 * n);
  agg.state_cost_final << d.M0f, d.K0f, d.K0f.transpose(), d.Mf;
  agg.cost_shift_final = Vector(2 * n);
  agg.cost_shift_final << d.nu0f, d.nuf;
  return agg;
}

// ===========================================================================
// PSD certificate for the aggregate state cost
// ===========================================================================

namespace {

struct CertInputs {
  Matrix Q0, Q, H0, H1, H2;
};

bool certify_block(const Matrix& block, const CertInputs& in, double lambda,
                   const Tolerances& tol, int segment, PsdCertificate& cert) {
  const int n = static_cast<int>(in.Q0.rows());
  const Matrix id = Matrix::Identity(n, n);
  Matrix u0, u;
  try {
    u0 = symmetric_sqrt(in.Q0, tol.psd_tol);
    u = symmetric_sqrt(in.Q, tol.psd_tol);
  } catch (const std::invalid_argument&) {
    cert.ok = false;
    cert.witness_segment = segment;
    cert.detail = "tracking weight is not PSD, no certificate exists";
    const Matrix q0s = (in.Q0 + in.Q0.transpose()) / 2.0;
    const Matrix qs = (in.Q + in.Q.transpose()) / 2.0;
    PsdResult r = is_psd(q0s, tol.psd_tol);
    if (r.psd) r = is_psd(qs, tol.psd_tol);
    cert.witness_eigenvalue = r.min_eigenvalue;
    cert.witness = r.witness;
    return false;
  }
  Matrix top0(n, 2 * n), top1(n, 2 * n);
  top0 << u0, -u0 * in.H0;
  top1 << u * in.H1, -u * (id - in.H2);
  top1 *= std::sqrt(lambda);
  const Matrix recon = top0.transpose() * top0 + top1.transpose() * top1;
  const double resid = (block - recon).norm();
  cert.max_residual = std::max(cert.max_residual, resid);
  if (resid > tol.symmetry_tol * (1.0 + block.norm())) {
    cert.ok = false;
    cert.witness_segment = segment;
    cert.detail = "state cost does not match its certificate decomposition";
    const PsdResult r = is_psd((block + block.transpose()) / 2.0, tol.psd_tol);
    if (!r.psd) {
      cert.witness_eigenvalue = r.min_eigenvalue;
      cert.witness = r.witness;
    }
    return false;
  }
  return true;
}

}  // namespace

PsdCertificate check_q0_psd(const ScenarioParams& p, const DerivedCoefficients& /*derived*/,
                            const AggregateSystem& agg, const Tolerances& tol) {
  const CoefficientPaths c(p);
  PsdCertificate cert;
  cert.ok = true;
  const int segs = agg.state_cost.n_segments();
  for (int i = 0; i < segs; ++i) {
    const double t = agg.state_cost.start(i);
    const CertInputs in{c.Q0.at_time(t), c.Q.at_time(t), c.H0.at_time(t), c.H1.at_time(t),
                        c.H2.at_time(t)};
    if (!certify_block(agg.state_cost.value(i), in, p.lambda, tol, i, cert)) return cert;
  }
  const CertInputs fin{p.Q0f, p.Qf, p.H0f, p.H1f, p.H2f};
  certify_block(agg.state_cost_final, fin, p.lambda, tol, segs, cert);
  return cert;
}

}  // namespace mfsoc
