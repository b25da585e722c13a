#include "polyrec/probes.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace polyrec {

namespace {
Vector random_unit(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vector v(n);
  for (auto& x : v) x = g(rng);
  double nv = norm2(v);
  scale(1.0 / nv, v);
  return v;
}
}  // namespace

LanczosResult lanczos_probe(const LinearOperator& x, std::size_t m, std::uint64_t seed) {
  if (m == 0) throw std::invalid_argument("lanczos_probe: m must be >= 1");
  std::size_t n = x.dim();
  std::mt19937_64 rng(seed);
  Vector q = random_unit(n, rng), q_prev(n, 0.0), w(n);
  LanczosResult r;
  double beta_prev = 0.0, scale_est = 0.0;
  for (std::size_t j = 1; j <= m; ++j) {
    x.apply(q, w);
    axpy(-beta_prev, q_prev, w);
    double a = dot(q, w);
    axpy(-a, q, w);
    double b = norm2(w);
    r.t.alpha.push_back(a);
    r.m = j;
    scale_est = std::max({scale_est, std::abs(a), b});
    if (b <= 1e-10 * scale_est) {
      r.breakdown = true;
      r.breakdown_step = j;
      r.beta_m = 0.0;
      return r;
    }
    r.beta_m = b;
    if (j == m) break;
    r.t.beta.push_back(b);
    q_prev.swap(q);
    for (std::size_t i = 0; i < n; ++i) q[i] = w[i] / b;
    beta_prev = b;
  }
  return r;
}

RitzSet ritz_from_lanczos(const LanczosResult& lr) {
  if (lr.t.alpha.empty()) throw std::invalid_argument("ritz_from_lanczos: empty tridiagonal");
  auto eig = tridiag_eigs(lr.t);
  RitzSet s;
  s.values = eig.values;
  for (double c : eig.last_components) s.residuals.push_back(std::abs(lr.beta_m * c));
  s.l = lr.m;
  s.iterations = lr.m;
  return s;
}

RitzSet subspace_probe(const LinearOperator& x, std::size_t l, std::size_t iterations, std::uint64_t seed,
                       const std::vector<Vector>* start) {
  std::size_t n = x.dim();
  if (l == 0 || l > n) throw std::invalid_argument("subspace_probe: need 1 <= l <= n");
  std::mt19937_64 rng(seed);
  std::vector<Vector> q;
  if (start) {
    if (start->size() != l) throw DimensionError("subspace_probe: start block width != l");
    q = *start;
  } else {
    for (std::size_t j = 0; j < l; ++j) q.push_back(random_unit(n, rng));
  }
  // orthonormalize, re-seeding collapsed columns
  auto orth = [&](std::vector<Vector>& cols) {
    for (int attempt = 0; attempt < 5; ++attempt) {
      auto bad = orthonormalize(cols);
      if (bad.empty()) return;
      for (auto j : bad) cols[j] = random_unit(n, rng);
    }
    throw NumericalError("subspace_probe: could not restore a full-rank block");
  };
  orth(q);

  std::vector<Vector> y(l, Vector(n));
  std::size_t sweeps = std::max<std::size_t>(1, iterations);
  for (std::size_t it = 0; it < sweeps; ++it) {
    for (std::size_t j = 0; j < l; ++j) x.apply(q[j], y[j]);
    if (it + 1 == sweeps) break;
    q = y;
    orth(q);
  }

  DenseMatrix h(l, l);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = i; j < l; ++j) h(i, j) = h(j, i) = 0.5 * (dot(q[i], y[j]) + dot(q[j], y[i]));
  auto eig = dense_sym_eig(h);
  RitzSet s;
  s.l = l;
  s.iterations = iterations;
  Vector u(n), xu(n);
  for (std::size_t c = 0; c < l; ++c) {
    std::fill(u.begin(), u.end(), 0.0);
    std::fill(xu.begin(), xu.end(), 0.0);
    for (std::size_t j = 0; j < l; ++j) {
      double sj = eig.vectors(j, c);
      axpy(sj, q[j], u);
      axpy(sj, y[j], xu);
    }
    double theta = eig.values[c];
    axpy(-theta, u, xu);
    s.values.push_back(theta);
    s.residuals.push_back(norm2(xu) / norm2(u));
  }
  return s;
}

RitzSet shifted_subspace_probe(const LinearOperator& x, std::size_t l, std::size_t iterations, double sigma,
                               std::uint64_t seed) {
  AffineOperator shifted(x, sigma, -1.0);
  RitzSet r = subspace_probe(shifted, l, iterations, seed);
  // X u - (sigma - theta) u = -((sigma I - X) u - theta u): the residual carries over unchanged
  RitzSet out = r;
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    out.values[i] = sigma - r.values[r.values.size() - 1 - i];
    out.residuals[i] = r.residuals[r.values.size() - 1 - i];
  }
  return out;
}

double bottom_shift(const LinearOperator& x, std::uint64_t seed) {
  auto r = ritz_from_lanczos(lanczos_probe(x, std::min<std::size_t>(10, x.dim()), seed));
  return 1.05 * r.values.front();
}

SpectralProbe assemble_eigen_probe(const RitzSet& ritz, std::size_t k, std::size_t k0, std::size_t l0,
                                   std::uint64_t seed) {
  if (k == 0 || ritz.values.empty()) throw std::invalid_argument("assemble_eigen_probe: empty target region");
  if (ritz.values.size() < k) throw std::invalid_argument("assemble_eigen_probe: fewer Ritz values than targets");
  SpectralProbe p;
  p.values = ritz.values;
  p.residuals = ritz.residuals;
  p.task = Task::eigen;
  p.k = k;
  p.l = ritz.values.size();
  p.iterations = ritz.iterations;
  auto w = normalize_probe_window(p, k, ritz.values.size(), k0, l0, seed);
  w.iterations = ritz.iterations;
  return w;
}

SpectralProbe assemble_extremal_probe(const RitzSet& ritz, const RitzSet* bottom, std::size_t k, Task task) {
  if (ritz.values.empty() || (bottom && bottom->values.empty()))
    throw std::invalid_argument("assemble_extremal_probe: no Ritz values");
  SpectralProbe p;
  p.task = task;
  p.k = k;
  p.l = ritz.l;
  p.iterations = ritz.iterations;
  auto top = [&](const RitzSet& r) {
    std::size_t n = r.values.size();
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = std::min(i, n - 1);
      p.values.push_back(r.values[j]);
      p.residuals.push_back(r.residuals[j]);
    }
  };
  auto tail = [&](const RitzSet& r) {
    std::size_t n = r.values.size();
    for (std::size_t i = 0; i < k; ++i) {
      // align the last entry with the smallest value, replicate the first one when short
      std::size_t j = (i + n >= k) ? i + n - k : 0;
      p.values.push_back(r.values[j]);
      p.residuals.push_back(r.residuals[j]);
    }
  };
  top(ritz);
  tail(bottom ? *bottom : ritz);
  return p;
}

}  // namespace polyrec
