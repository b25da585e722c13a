#include "polyrec/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "polyrec/baselines.hpp"
#include "polyrec/probes.hpp"
#include "polyrec/training.hpp"

namespace polyrec {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

double safe_eval(const std::function<double(const Vector&)>& f, const Vector& x) {
  double v = f(x);
  return std::isnan(v) ? inf : v;
}

// second-kind Chebyshev points, endpoints included
Vector lobatto_nodes(std::size_t m) {
  Vector t(m);
  if (m == 1) return Vector{0.0};
  const double pi = std::acos(-1.0);
  for (std::size_t j = 0; j < m; ++j) t[j] = std::cos(pi * double(j) / double(m - 1));
  return t;
}

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& start,
                             const NelderMeadConfig& cfg) {
  const std::size_t n = start.size();
  if (n == 0) throw std::invalid_argument("nelder_mead: empty start");
  NelderMeadResult res;
  std::vector<Vector> pts{start};
  Vector vals{safe_eval(f, start)};
  res.evals = 1;
  for (std::size_t i = 0; i < n; ++i) {
    Vector p = start;
    p[i] += start[i] != 0.0 ? cfg.step * std::abs(start[i]) : cfg.zero_step;
    pts.push_back(p);
    vals.push_back(safe_eval(f, p));
    ++res.evals;
  }
  std::vector<std::size_t> order(n + 1);
  auto point = [&](const Vector& c, const Vector& w, double t) {
    Vector p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = c[i] + t * (c[i] - w[i]);
    return p;
  };
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::vector<Vector> sp;
    Vector sv;
    for (auto i : order) sp.push_back(pts[i]), sv.push_back(vals[i]);
    pts.swap(sp);
    vals.swap(sv);
    res.trace.push_back(vals[0]);

    double diam = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) d2 += (pts[k][i] - pts[0][i]) * (pts[k][i] - pts[0][i]);
      diam = std::max(diam, std::sqrt(d2));
    }
    if (diam < cfg.diameter_tol || res.evals >= cfg.max_evals) break;

    Vector c(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) c[i] += pts[k][i] / double(n);
    const Vector& worst = pts[n];

    Vector r = point(c, worst, cfg.reflect);
    double fr = safe_eval(f, r);
    ++res.evals;
    if (fr < vals[0]) {
      Vector e = point(c, worst, cfg.reflect * cfg.expand);
      double fe = safe_eval(f, e);
      ++res.evals;
      if (fe < fr) pts[n] = e, vals[n] = fe;
      else pts[n] = r, vals[n] = fr;
      continue;
    }
    if (fr < vals[n - 1]) {
      pts[n] = r, vals[n] = fr;
      continue;
    }
    // outside contraction when the reflection improved on the worst point, inside otherwise
    bool outside = fr < vals[n];
    Vector k = outside ? point(c, worst, cfg.reflect * cfg.contract) : point(c, worst, -cfg.contract);
    double fk = safe_eval(f, k);
    ++res.evals;
    if (fk < (outside ? fr : vals[n])) {
      pts[n] = k, vals[n] = fk;
      continue;
    }
    for (std::size_t j = 1; j <= n; ++j) {
      for (std::size_t i = 0; i < n; ++i) pts[j][i] = pts[0][i] + cfg.shrink * (pts[j][i] - pts[0][i]);
      vals[j] = safe_eval(f, pts[j]);
      ++res.evals;
    }
  }
  res.x = pts[0];
  res.value = vals[0];
  return res;
}

namespace {

double log_objective(const CoefficientSchedule& s, const LeadingCoefficient& lc, const Vector& nodes, double c1,
                     double c2) {
  if (!(c1 > 1e-12) || !std::isfinite(c1) || !std::isfinite(c2)) return inf;
  Vector t(nodes.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = c1 * nodes[i] + c2;
  VectorRun run;
  try {
    run = evaluate_polynomial_scaled(s, t);
  } catch (const StateCollapse&) {
    return -inf;
  }
  double m = max_abs(run.out);
  if (!std::isfinite(m)) return inf;
  if (m == 0.0) return -inf;
  return std::log(m) + run.log_scale - std::log(std::abs(lc.value)) - lc.degree * std::log(c1);
}

LeadingCoefficient checked_leading(const CoefficientSchedule& s) {
  auto lc = leading_coefficient(s);
  if (lc.annihilated || lc.value == 0.0 || lc.degree < 1 || !std::isfinite(lc.value))
    throw std::invalid_argument("minimax: leading coefficient vanishes");
  return lc;
}

}  // namespace

double minimax_log_objective(const CoefficientSchedule& s, double c1, double c2, std::size_t samples) {
  return log_objective(s, checked_leading(s), lobatto_nodes(samples), c1, c2);
}

MinimaxReport minimax_gap(const CoefficientSchedule& s, const MinimaxGrid& grid, const NelderMeadConfig& nm) {
  auto lc = checked_leading(s);
  if (!(grid.c1_min > 0.0) || grid.c1_max < grid.c1_min || grid.c1_points == 0 || grid.c2_points == 0)
    throw std::invalid_argument("minimax_gap: bad grid");
  MinimaxReport r;
  r.grid = grid;
  r.degree = lc.degree;
  r.leading = lc.value;
  r.bound = std::pow(2.0, -(lc.degree - 1));

  const Vector nodes = lobatto_nodes(grid.samples);
  auto f = [&](const Vector& v) { return log_objective(s, lc, nodes, std::exp(v[0]), v[1]); };
  Vector best{std::log(grid.c1_min), grid.c2_min};
  double best_val = inf;
  const double l0 = std::log(grid.c1_min), l1 = std::log(grid.c1_max);
  for (std::size_t i = 0; i < grid.c1_points; ++i) {
    double lc1 = grid.c1_points == 1 ? l0 : l0 + (l1 - l0) * double(i) / double(grid.c1_points - 1);
    for (std::size_t j = 0; j < grid.c2_points; ++j) {
      double c2 = grid.c2_points == 1 ? grid.c2_min
                                      : grid.c2_min + (grid.c2_max - grid.c2_min) * double(j) / double(grid.c2_points - 1);
      double v = f({lc1, c2});
      if (v < best_val) best_val = v, best = {lc1, c2};
    }
  }
  r.grid_best = std::exp(best_val);
  auto res = nelder_mead(f, best, nm);
  Vector x = res.x;
  double v = res.value;
  if (!(v <= best_val)) x = best, v = best_val;
  for (double t : res.trace) r.trace.push_back(std::exp(std::min(t, best_val)));
  r.c1 = std::exp(x[0]);
  r.c2 = x[1];
  r.L = std::exp(v);
  r.gap = r.L;
  return r;
}

nlohmann::json minimax_to_json(const MinimaxReport& r) {
  return {{"c1", r.c1},
          {"c2", r.c2},
          {"L", r.L},
          {"degree", r.degree},
          {"leading_coefficient", r.leading},
          {"bound", r.bound},
          {"gap", r.gap},
          {"grid_best", r.grid_best},
          {"grid",
           {{"c1_min", r.grid.c1_min},
            {"c1_max", r.grid.c1_max},
            {"c1_points", r.grid.c1_points},
            {"c2_min", r.grid.c2_min},
            {"c2_max", r.grid.c2_max},
            {"c2_points", r.grid.c2_points},
            {"samples", r.grid.samples}}},
          {"trace", r.trace}};
}

ConditionEstimate estimate_condition(const LinearOperator& x, std::size_t steps, std::uint64_t seed) {
  auto ritz = ritz_from_lanczos(lanczos_probe(x, std::min(steps, x.dim()), seed));
  ConditionEstimate e;
  e.steps = ritz.iterations;
  e.lambda_max = ritz.values.front();
  e.lambda_min = ritz.values.back();
  e.indefinite = !(e.lambda_min > 0.0);
  e.cond = e.indefinite ? inf : e.lambda_max / e.lambda_min;
  return e;
}

FunctionOperator composed_operator(const LinearOperator& x, const CoefficientSchedule& s, bool times_x) {
  s.validate();
  return FunctionOperator(x.dim(), [&x, s, times_x](std::span<const double> in, std::span<double> out) {
    Vector z(in.begin(), in.end());
    if (times_x) z = x * z;
    Vector v = run_recurrence(s, x, z).value();
    std::copy(v.begin(), v.end(), out.begin());
  });
}

std::optional<double> rho_log_report(double model_metric, double baseline_metric) {
  return rho_log(model_metric, baseline_metric);
}

AffineChebFit fit_affine_chebyshev(const Vector& x, const Vector& p, int n, double b0, double c0) {
  if (x.size() != p.size() || x.size() < 2) throw DimensionError("fit_affine_chebyshev: need matching samples");
  const std::size_t m = x.size();
  double pn = norm2(p);
  // closed-form (a, d0) for fixed (b, c)
  auto solve = [&](double b, double c, double& a, double& d0) {
    double sg = 0, sgg = 0, sp = 0, sgp = 0;
    for (std::size_t i = 0; i < m; ++i) {
      double g = chebyshev_t(n, b * x[i] + c);
      sg += g, sgg += g * g, sp += p[i], sgp += g * p[i];
    }
    double det = double(m) * sgg - sg * sg;
    if (!(std::abs(det) > 0.0) || !std::isfinite(det)) {
      a = 0.0, d0 = sp / double(m);
    } else {
      a = (double(m) * sgp - sg * sp) / det;
      d0 = (sp - a * sg) / double(m);
    }
    double r2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double e = p[i] - a * chebyshev_t(n, b * x[i] + c) - d0;
      r2 += e * e;
    }
    return r2;
  };
  auto f = [&](const Vector& v) {
    double a, d0;
    return solve(v[0], v[1], a, d0);
  };
  NelderMeadConfig cfg;
  cfg.diameter_tol = 1e-13;
  cfg.max_evals = 4000;
  auto res = nelder_mead(f, {b0, c0}, cfg);
  AffineChebFit fit;
  fit.n = n;
  fit.b = res.x[0];
  fit.c = res.x[1];
  double r2 = solve(fit.b, fit.c, fit.a, fit.d0);
  fit.residual = pn > 0.0 ? std::sqrt(r2) / pn : std::sqrt(r2);
  return fit;
}

PlotData poly_plot_data(const CoefficientSchedule& s, double lo, double hi, std::size_t samples, bool with_fit) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo) || samples < 2)
    throw std::invalid_argument("poly_plot_data: need a finite range and at least 2 samples");
  PlotData d;
  for (std::size_t i = 0; i < samples; ++i) d.x.push_back(lo + (hi - lo) * double(i) / double(samples - 1));
  d.p = evaluate_polynomial(s, d.x);
  if (!with_fit) return d;
  auto lc = leading_coefficient(s);
  if (lc.annihilated || lc.degree < 1) return d;
  // start from the window where P looks most like a Chebyshev polynomial
  const double w = hi - lo;
  MinimaxGrid g;
  g.c1_min = 1e-3 * w, g.c1_max = 10.0 * w;
  g.c2_min = lo, g.c2_max = hi;
  g.c1_points = g.c2_points = 25;
  g.samples = 512;
  NelderMeadConfig nm;
  nm.max_evals = 500;
  auto mm = minimax_gap(s, g, nm);
  auto fit = fit_affine_chebyshev(d.x, d.p, lc.degree, 1.0 / mm.c1, -mm.c2 / mm.c1);
  for (double x : d.x) d.fitted.push_back(fit.a * chebyshev_t(fit.n, fit.b * x + fit.c) + fit.d0);
  d.fit = fit;
  return d;
}

std::string plot_csv(const PlotData& d) {
  std::ostringstream os;
  os.precision(17);
  if (d.fit)
    os << "# fit a=" << d.fit->a << " b=" << d.fit->b << " c=" << d.fit->c << " d0=" << d.fit->d0
       << " n=" << d.fit->n << " residual=" << d.fit->residual << "\n";
  os << (d.fit ? "x,p,fit\n" : "x,p\n");
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    os << d.x[i] << "," << d.p[i];
    if (d.fit) os << "," << d.fitted[i];
    os << "\n";
  }
  return os.str();
}

}  // namespace polyrec
