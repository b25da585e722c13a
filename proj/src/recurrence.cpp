#include "polyrec/recurrence.hpp"

#include <cmath>
#include <fstream>

namespace polyrec {

void CoefficientSchedule::validate() const {
  if (steps.empty()) throw std::invalid_argument("schedule: degree must be at least 1");
  for (const auto& s : steps)
    for (double v : s.as_array())
      if (!std::isfinite(v)) throw std::invalid_argument("schedule: non-finite coefficient");
}

nlohmann::json schedule_to_json(const CoefficientSchedule& s) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& st : s.steps) steps.push_back(st.as_array());
  return {{"degree", s.degree()}, {"steps", steps}};
}

CoefficientSchedule schedule_from_json(const nlohmann::json& j) {
  CoefficientSchedule s;
  for (const auto& row : j.at("steps")) {
    if (row.size() != 5) throw std::invalid_argument("schedule: each step needs 5 coefficients");
    s.steps.push_back(StepCoefficients::from_array(row.get<std::array<double, 5>>()));
  }
  if (j.contains("degree") && j.at("degree").get<int>() != s.degree())
    throw std::invalid_argument("schedule: degree field does not match step count");
  s.validate();
  return s;
}

CoefficientSchedule load_schedule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open schedule file " + path);
  nlohmann::json j;
  in >> j;
  if (j.contains("schedule")) return schedule_from_json(j.at("schedule"));
  return schedule_from_json(j);
}

void save_schedule(const CoefficientSchedule& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write schedule file " + path);
  out << schedule_to_json(s).dump(2) << "\n";
}

namespace {

std::vector<double>& raw(Vector& v) { return v; }
const std::vector<double>& raw(const Vector& v) { return v; }
std::vector<double>& raw(DenseMatrix& m) { return m.data(); }
const std::vector<double>& raw(const DenseMatrix& m) { return m.data(); }

// new C = g*A + e*B + a*C + b*XC ; skips the X product when b == 0
template <class Block, class ApplyX>
Block combine(const RecurrenceState<Block>& st, const StepCoefficients& c, ApplyX&& applyx) {
  Block out = st.C;
  auto& o = raw(out);
  const auto& a = raw(st.A);
  const auto& b = raw(st.B);
  const auto& cc = raw(st.C);
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c.gamma * a[i] + c.eta * b[i] + c.alpha * cc[i];
  if (c.beta != 0.0) {
    Block xc = applyx(st.C);
    const auto& x = raw(xc);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += c.beta * x[i];
  }
  return out;
}

template <class Block, class ApplyX>
void transition(RecurrenceState<Block>& st, const StepCoefficients& c, bool normalize, ApplyX&& applyx) {
  if (c.gamma == 0.0 && c.eta == 0.0 && c.alpha == 0.0 && c.beta == 0.0)
    throw StateCollapse("state collapse: step annihilates the C block");
  Block next_c = combine(st, c, applyx);
  auto& a = raw(st.A);
  const auto& cc = raw(st.C);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += c.rho * cc[i];
  st.B = std::move(st.C);
  st.C = std::move(next_c);
  if (!normalize) return;
  double s = std::max({max_abs(raw(st.A)), max_abs(raw(st.B)), max_abs(raw(st.C))});
  if (s == 0.0) throw StateCollapse("state collapse: all blocks vanished");
  if (!std::isfinite(s)) throw NumericalError("recurrence: non-finite state");
  scale(1.0 / s, raw(st.A));
  scale(1.0 / s, raw(st.B));
  scale(1.0 / s, raw(st.C));
  st.log_scale += std::log(s);
}

}  // namespace

VectorState init_state(const LinearOperator& x, const Vector& z) {
  if (z.size() != x.dim()) throw DimensionError("init_state: z length does not match operator");
  return {z, z, x * z, 0.0};
}

void apply_transition(VectorState& st, const LinearOperator& x, const StepCoefficients& step, bool normalize) {
  transition(st, step, normalize, [&](const Vector& c) { return x * c; });
}

Vector apply_readout(const VectorState& st, const LinearOperator& x, const StepCoefficients& readout) {
  return combine(st, readout, [&](const Vector& c) { return x * c; });
}

namespace {
Vector diag_mul(const Vector& lambda, const Vector& c) {
  if (lambda.size() != c.size()) throw DimensionError("diagonal mode: length mismatch");
  Vector y(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) y[i] = lambda[i] * c[i];
  return y;
}
}  // namespace

VectorState init_state_diagonal(const Vector& lambda, const Vector& z) {
  return {z, z, diag_mul(lambda, z), 0.0};
}

void apply_transition_diagonal(VectorState& st, const Vector& lambda, const StepCoefficients& step,
                               bool normalize) {
  transition(st, step, normalize, [&](const Vector& c) { return diag_mul(lambda, c); });
}

Vector apply_readout_diagonal(const VectorState& st, const Vector& lambda, const StepCoefficients& readout) {
  return combine(st, readout, [&](const Vector& c) { return diag_mul(lambda, c); });
}

DenseState init_state_dense(const DenseMatrix& x) {
  if (x.rows() != x.cols()) throw DimensionError("init_state_dense: matrix not square");
  auto id = DenseMatrix::identity(x.rows());
  return {id, id, x, 0.0};
}

void apply_transition_dense(DenseState& st, const DenseMatrix& x, const StepCoefficients& step, bool normalize) {
  transition(st, step, normalize, [&](const DenseMatrix& c) { return matmul(x, c); });
}

DenseMatrix apply_readout_dense(const DenseState& st, const DenseMatrix& x, const StepCoefficients& readout) {
  return combine(st, readout, [&](const DenseMatrix& c) { return matmul(x, c); });
}

Vector VectorRun::value() const {
  Vector v = out;
  scale(std::exp(log_scale), v);
  return v;
}

DenseMatrix DenseRun::value() const {
  DenseMatrix m = out;
  scale(std::exp(log_scale), m.data());
  return m;
}

VectorRun run_recurrence(const CoefficientSchedule& s, const LinearOperator& x, const Vector& z, bool normalize) {
  s.validate();
  auto st = init_state(x, z);
  for (int k = 0; k + 1 < s.degree(); ++k) apply_transition(st, x, s.steps[k], normalize);
  return {apply_readout(st, x, s.readout()), st.log_scale};
}

VectorRun run_recurrence_diagonal(const CoefficientSchedule& s, const Vector& lambda, const Vector& z,
                                  bool normalize) {
  s.validate();
  if (z.size() != lambda.size()) throw DimensionError("run_recurrence_diagonal: length mismatch");
  auto st = init_state_diagonal(lambda, z);
  for (int k = 0; k + 1 < s.degree(); ++k) apply_transition_diagonal(st, lambda, s.steps[k], normalize);
  return {apply_readout_diagonal(st, lambda, s.readout()), st.log_scale};
}

DenseRun run_recurrence_dense(const CoefficientSchedule& s, const DenseMatrix& x, bool normalize) {
  s.validate();
  auto st = init_state_dense(x);
  for (int k = 0; k + 1 < s.degree(); ++k) apply_transition_dense(st, x, s.steps[k], normalize);
  return {apply_readout_dense(st, x, s.readout()), st.log_scale};
}

VectorRun evaluate_polynomial_scaled(const CoefficientSchedule& s, const Vector& lambda) {
  return run_recurrence_diagonal(s, lambda, Vector(lambda.size(), 1.0), true);
}

Vector evaluate_polynomial(const CoefficientSchedule& s, const Vector& lambda) {
  return evaluate_polynomial_scaled(s, lambda).value();
}

std::vector<double> to_poly_coefficients(const CoefficientSchedule& s) {
  s.validate();
  const int d = s.degree();
  const std::size_t len = d + 2;
  using Poly = std::vector<double>;
  Poly a(len, 0.0), b(len, 0.0), c(len, 0.0);
  a[0] = 1.0;
  b[0] = 1.0;
  c[1] = 1.0;
  auto combine_poly = [&](const StepCoefficients& st) {
    Poly out(len, 0.0);
    for (std::size_t i = 0; i < len; ++i) out[i] = st.gamma * a[i] + st.eta * b[i] + st.alpha * c[i];
    for (std::size_t i = 0; i + 1 < len; ++i) out[i + 1] += st.beta * c[i];
    return out;
  };
  for (int k = 0; k + 1 < d; ++k) {
    const auto& st = s.steps[k];
    Poly nc = combine_poly(st);
    for (std::size_t i = 0; i < len; ++i) a[i] += st.rho * c[i];
    b = c;
    c = nc;
  }
  Poly out = combine_poly(s.readout());
  if (!all_finite(out))
    throw NumericalError("to_poly_coefficients: overflow in monomial expansion; use normalized evaluation");
  while (out.size() > static_cast<std::size_t>(d + 1) && out.back() == 0.0) out.pop_back();
  return out;
}

double horner(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) v = v * x + c[i];
  return v;
}

namespace {
struct Lead {
  int deg = -1;  // -1 marks the zero polynomial
  double lc = 0.0;
};

Lead add_leads(std::initializer_list<Lead> terms, bool& cancelled) {
  Lead out;
  for (const auto& t : terms)
    if (t.lc != 0.0 && t.deg > out.deg) out.deg = t.deg;
  if (out.deg < 0) return {};
  for (const auto& t : terms)
    if (t.lc != 0.0 && t.deg == out.deg) out.lc += t.lc;
  if (out.lc == 0.0) {
    cancelled = true;
    return {};
  }
  return out;
}

Lead scaled(Lead l, double f, int shift = 0) { return {l.deg + shift, l.lc * f}; }
}  // namespace

LeadingCoefficient leading_coefficient(const CoefficientSchedule& s) {
  s.validate();
  const int d = s.degree();
  bool cancelled = false;
  Lead a{0, 1.0}, b{0, 1.0}, c{1, 1.0};
  auto next_c = [&](const StepCoefficients& st) {
    return add_leads({scaled(a, st.gamma), scaled(b, st.eta), scaled(c, st.alpha), scaled(c, st.beta, 1)}, cancelled);
  };
  for (int k = 0; k + 1 < d; ++k) {
    const auto& st = s.steps[k];
    Lead nc = next_c(st);
    a = add_leads({a, scaled(c, st.rho)}, cancelled);
    b = c;
    c = nc;
  }
  Lead out = next_c(s.readout());
  LeadingCoefficient r;
  r.degree = std::max(out.deg, 0);
  r.value = out.lc;
  r.annihilated = cancelled || out.deg < d;
  if (cancelled) r.value = 0.0;
  return r;
}

double coefficient_of_degree(const CoefficientSchedule& s, int degree) {
  auto c = to_poly_coefficients(s);
  if (degree < 0 || static_cast<std::size_t>(degree) >= c.size()) return 0.0;
  return c[degree];
}

CoefficientSchedule rescale_schedule(const CoefficientSchedule& s, double in_scale, double out_scale) {
  if (!(in_scale > 0.0) || !std::isfinite(in_scale)) throw std::invalid_argument("rescale_schedule: scale must be positive");
  CoefficientSchedule r = s;
  const double is = 1.0 / in_scale;
  for (int k = 0; k < r.degree(); ++k) {
    auto& st = r.steps[k];
    if (k == 0) {
      // C_0 = X z carries one extra factor of the scale
      st.rho *= is;
      st.alpha *= is;
      st.beta *= is * is;
    } else if (k == 1) {
      st.eta *= is;
      st.beta *= is;
    } else {
      st.beta *= is;
    }
  }
  auto& ro = r.steps.back();
  ro.gamma *= out_scale;
  ro.eta *= out_scale;
  ro.alpha *= out_scale;
  ro.beta *= out_scale;
  return r;
}

}  // namespace polyrec
