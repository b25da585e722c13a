#include "polyrec/solvers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "polyrec/probes.hpp"

namespace polyrec {

namespace {

using clock_type = std::chrono::steady_clock;

double since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

Vector random_unit(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vector v(n);
  for (auto& x : v) x = g(rng);
  scale(1.0 / norm2(v), v);
  return v;
}

}  // namespace

bool preconditioner_positive(const CoefficientSchedule& s, double lo, double hi, std::size_t points) {
  if (!(hi >= lo) || points < 2) throw std::invalid_argument("preconditioner_positive: bad interval");
  double a = lo, b = hi;
  Vector grid(points);
  for (std::size_t i = 0; i < points; ++i) grid[i] = a + (b - a) * double(i) / double(points - 1);
  // sign only, so the scaled values are enough
  auto run = evaluate_polynomial_scaled(s, grid);
  return std::all_of(run.out.begin(), run.out.end(), [](double v) { return v > 0.0; });
}

PcgResult pcg(const LinearOperator& x, const Vector& b, const CoefficientSchedule* precond, const PcgConfig& cfg) {
  const std::size_t n = x.dim();
  if (b.size() != n) throw DimensionError("pcg: right-hand side length mismatch");
  if (!(cfg.tol > 0)) throw std::invalid_argument("pcg: tol must be positive");
  auto t0 = clock_type::now();
  PcgResult res;
  SolveReport& rep = res.report;
  if (precond && cfg.probe_interval &&
      !preconditioner_positive(*precond, cfg.positivity_lo_factor * cfg.probe_interval->first,
                               cfg.positivity_hi_factor * cfg.probe_interval->second, cfg.positivity_grid)) {
    std::cerr << "warning: preconditioner is not positive on the probed interval; running unpreconditioned CG\n";
    rep.preconditioner_rejected = true;
    rep.note = "preconditioner rejected by positivity check";
    precond = nullptr;
  }

  CountingOperator cx(x);
  auto apply_m = [&](const Vector& r) {
    if (!precond) return r;
    return run_recurrence(*precond, cx, r, true).value();
  };

  res.x.assign(n, 0.0);
  Vector r = b;
  double bnorm = norm2(b);
  rep.history.push_back(1.0);
  rep.matvecs_at.push_back(0);
  if (bnorm == 0.0) {
    rep.history[0] = 0.0;
    rep.converged = true;
    rep.seconds = since(t0);
    return res;
  }
  Vector z = apply_m(r), p = z, q(n);
  double rz = dot(r, z);
  if (!(rz > 0)) throw NumericalError("pcg: preconditioner is not positive definite (r^T M r <= 0)");
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    cx.apply(p, q);
    double pq = dot(p, q);
    if (!(pq > 0)) throw NumericalError("pcg: operator is not SPD (p^T X p <= 0)");
    double alpha = rz / pq;
    axpy(alpha, p, res.x);
    axpy(-alpha, q, r);
    double rel = norm2(r) / bnorm;
    rep.iterations = it;
    rep.history.push_back(rel);
    if (!std::isfinite(rel)) throw NumericalError("pcg: residual is not finite");
    if (rel <= cfg.tol || it == cfg.max_iters) {
      rep.matvecs_at.push_back(cx.count());
      rep.converged = rel <= cfg.tol;
      break;
    }
    z = apply_m(r);
    rep.matvecs_at.push_back(cx.count());
    double rz_new = dot(r, z);
    if (!(rz_new > 0)) throw NumericalError("pcg: preconditioner is not positive definite (r^T M r <= 0)");
    double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  rep.matvecs = cx.count();
  rep.seconds = since(t0);
  if (!rep.converged && rep.note.empty()) rep.note = "max_iters reached";
  return res;
}

namespace {

Vector reference_spectrum(const LinearOperator& x) {
  const std::size_t n = x.dim();
  Vector ev;
  if (auto d = dynamic_cast<const DiagonalOperator*>(&x)) {
    ev = d->diagonal();
  } else if (auto s = dynamic_cast<const SparseOperator*>(&x)) {
    ev = dense_sym_eigenvalues(s->to_dense());
  } else if (auto m = dynamic_cast<const DenseOperator*>(&x)) {
    ev = dense_sym_eigenvalues(m->matrix());
  } else {
    DenseMatrix a(n, n);
    Vector e(n, 0.0), col(n);
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = 1.0;
      x.apply(e, col);
      e[j] = 0.0;
      for (std::size_t i = 0; i < n; ++i) a(i, j) = col[i];
    }
    ev = dense_sym_eigenvalues(a);
  }
  std::sort(ev.begin(), ev.end());
  return ev;
}

}  // namespace

EigResult filtered_eigensolve(const LinearOperator& x, std::size_t k, std::size_t l, const CoefficientSchedule& filter,
                              const EigConfig& cfg) {
  const std::size_t n = x.dim();
  if (k == 0 || l < k || l > n) throw std::invalid_argument("filtered_eigensolve: need 1 <= k <= l <= n");
  filter.validate();
  auto t0 = clock_type::now();

  Vector ref;
  if (cfg.reference) {
    ref = *cfg.reference;
    if (ref.size() < k) throw DimensionError("filtered_eigensolve: reference shorter than k");
  } else if (n <= 2000) {
    ref = reference_spectrum(x);
  }

  CountingOperator cx(x);
  double sigma = cfg.sigma > 0 ? cfg.sigma : bottom_shift(x, cfg.seed);
  AffineOperator shifted(cx, sigma, -1.0);
  std::mt19937_64 rng(cfg.seed ^ 0xE16ULL);

  std::vector<Vector> q;
  for (std::size_t j = 0; j < l; ++j) q.push_back(random_unit(n, rng));
  auto orth = [&] {
    for (int attempt = 0; attempt < 5; ++attempt) {
      auto bad = orthonormalize(q);
      if (bad.empty()) return;
      for (auto j : bad) q[j] = random_unit(n, rng);
    }
    throw NumericalError("filtered_eigensolve: block lost rank");
  };
  orth();

  EigResult res;
  SolveReport& rep = res.report;
  Vector prev;
  std::vector<Vector> y(l, Vector(n));
  // Rayleigh-Ritz on the original X; rotates q onto the Ritz vectors, ascending
  auto rayleigh_ritz = [&]() {
    for (std::size_t j = 0; j < l; ++j) cx.apply(q[j], y[j]);
    DenseMatrix h(l, l);
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = i; j < l; ++j) h(i, j) = h(j, i) = 0.5 * (dot(q[i], y[j]) + dot(q[j], y[i]));
    auto e = dense_sym_eig(h, std::max<std::size_t>(512, l));
    std::vector<Vector> rot(l, Vector(n, 0.0));
    Vector theta(l);
    for (std::size_t c = 0; c < l; ++c) {
      std::size_t src = l - 1 - c;  // descending -> ascending
      theta[c] = e.values[src];
      for (std::size_t j = 0; j < l; ++j) axpy(e.vectors(j, src), q[j], rot[c]);
    }
    q.swap(rot);
    return theta;
  };
  auto error_of = [&](const Vector& theta) {
    double err = 0;
    for (std::size_t t = 0; t < k; ++t) {
      double target = !ref.empty() ? ref[t] : (prev.empty() ? 0.0 : prev[t]);
      if (ref.empty() && prev.empty()) return 1.0;
      err = std::max(err, std::abs(theta[t] - target) / std::max(std::abs(target), 1e-300));
    }
    return err;
  };

  std::size_t want = std::min(l, k + 5);
  auto record = [&](const Vector& th) { res.trace.emplace_back(th.begin(), th.begin() + want); };
  Vector theta = rayleigh_ritz();
  record(theta);
  rep.history.push_back(error_of(theta));
  rep.matvecs_at.push_back(cx.count());
  prev = theta;
  double best = rep.history[0];
  std::size_t best_at = 0;
  for (std::size_t outer = 1; outer <= cfg.max_outer; ++outer) {
    for (auto& c : q) c = run_recurrence(filter, shifted, c, true).out;
    orth();
    theta = rayleigh_ritz();
    record(theta);
    double err = error_of(theta);
    prev = theta;
    rep.iterations = outer;
    rep.history.push_back(err);
    rep.matvecs_at.push_back(cx.count());
    if (!std::isfinite(err)) throw NumericalError("filtered_eigensolve: non-finite eigenvalue estimate");
    if (err <= cfg.tol) {
      rep.converged = true;
      break;
    }
    if (err < best) {
      best = err;
      best_at = outer;
    } else if (outer - best_at >= cfg.stagnation_window) {
      rep.note = "stagnated";
      break;
    }
  }
  if (!rep.converged && rep.note.empty()) rep.note = "max_outer reached";
  res.values.assign(theta.begin(), theta.begin() + want);
  res.vectors.assign(q.begin(), q.begin() + want);
  rep.matvecs = cx.count();
  rep.seconds = since(t0);
  return res;
}

double whitening_residual(const LinearOperator& x, const CoefficientSchedule& s, const WhiteningConfig& cfg) {
  const std::size_t n = x.dim();
  auto m = [&](const Vector& v) {
    Vector pv = run_recurrence(s, x, v, true).value();
    Vector xpv = x * pv;
    Vector out = run_recurrence(s, x, xpv, true).value();
    axpy(-1.0, v, out);
    return out;
  };
  std::mt19937_64 rng(cfg.seed ^ 0x3317ULL);
  Vector v = random_unit(n, rng);
  double mu = 0.0;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    Vector w = m(m(v));
    double nw = norm2(w);
    if (!std::isfinite(nw)) throw NumericalError("whitening_residual: non-finite iterate");
    if (nw == 0.0) return 0.0;
    double prev = mu;
    mu = nw;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
    if (it > 0 && std::abs(mu - prev) <= cfg.rel_change * mu) break;
  }
  return std::sqrt(mu);
}

std::vector<std::vector<std::pair<std::size_t, double>>> synthetic_counts(std::size_t n_features,
                                                                          std::size_t n_samples, double density,
                                                                          std::uint64_t seed) {
  if (!(density > 0.0 && density <= 1.0)) throw std::invalid_argument("synthetic_gram: density must be in (0,1]");
  if (n_features == 0 || n_samples == 0) throw std::invalid_argument("synthetic_gram: empty shape");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u;
  std::geometric_distribution<int> counts(0.5);
  std::vector<std::vector<std::pair<std::size_t, double>>> cols(n_samples);
  for (std::size_t j = 0; j < n_samples; ++j)
    for (std::size_t i = 0; i < n_features; ++i)
      if (density >= 1.0 || u(rng) < density) cols[j].emplace_back(i, 1.0 + counts(rng));
  return cols;
}

SparseOperator synthetic_gram(std::size_t n_features, std::size_t n_samples, double density, double reg,
                              std::uint64_t seed) {
  auto cols = synthetic_counts(n_features, n_samples, density, seed);
  std::vector<std::size_t> rows, cs;
  Vector vals;
  for (const auto& col : cols)
    for (const auto& [i, a] : col)
      for (const auto& [k, c] : col) {
        rows.push_back(i);
        cs.push_back(k);
        vals.push_back(a * c);
      }
  for (std::size_t i = 0; i < n_features; ++i) {
    rows.push_back(i);
    cs.push_back(i);
    vals.push_back(reg);
  }
  return SparseOperator::from_triplets(n_features, rows, cs, vals, true);
}

std::string trace_csv(const SolveReport& r, const std::string& value_name, bool with_timing) {
  std::ostringstream os;
  os << std::setprecision(17);
  if (with_timing) os << "# seconds=" << r.seconds << '\n';
  os << "iteration," << value_name << ",matvecs\n";
  for (std::size_t i = 0; i < r.history.size(); ++i)
    os << i << ',' << r.history[i] << ',' << (i < r.matvecs_at.size() ? r.matvecs_at[i] : r.matvecs) << '\n';
  return os.str();
}

void write_trace_csv(const SolveReport& r, const std::string& path, const std::string& value_name) {
  std::ofstream f(path);
  if (!f) throw std::ios_base::failure("cannot write trace " + path);
  f << trace_csv(r, value_name);
}

}  // namespace polyrec
