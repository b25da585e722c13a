#include "polyrec/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace polyrec {

double cheb_theta(double lambda, const ChebInterval& iv) {
  if (!(iv.b > iv.a)) throw std::invalid_argument("cheb_theta: need b > a");
  return (2.0 * lambda - (iv.a + iv.b)) / (iv.b - iv.a);
}

double chebyshev_t(int d, double x) {
  if (d < 0) throw std::invalid_argument("chebyshev_t: negative degree");
  if (std::abs(x) <= 1.0) return std::cos(d * std::acos(x));
  double v = std::cosh(d * std::acosh(std::abs(x)));
  return (x < 0 && d % 2 == 1) ? -v : v;
}

CoefficientSchedule chebyshev_schedule(int d, double p, double q) {
  if (d < 1) throw std::invalid_argument("chebyshev_schedule: d must be >= 1");
  CoefficientSchedule s;
  if (d == 1) {
    s.steps.push_back({0, q, 0, p, 0});
    return s;
  }
  // A = B = 1, C = x  ->  T_2(theta) = 2p^2 x^2 + 4pq x + 2q^2 - 1
  s.steps.push_back({0, 2 * q * q - 1, 0, 4 * p * q, 2 * p * p});
  if (d > 2) {
    // B holds x, so T_1(theta) = p x + q is rebuilt from B and A
    s.steps.push_back({0, -q, -p, 2 * q, 2 * p});
  }
  for (int k = 3; k < d; ++k) s.steps.push_back({0, 0, -1, 2 * q, 2 * p});
  s.steps.push_back({0, 0, 0, 1, 0});
  return s;
}

CoefficientSchedule cheb_eigen_filter(int d, const ChebInterval& iv) {
  if (!(iv.b > iv.a)) throw std::invalid_argument("cheb_eigen_filter: need b > a");
  double p = 2.0 / (iv.b - iv.a);
  double q = -(iv.a + iv.b) / (iv.b - iv.a);
  return chebyshev_schedule(d, p, q);
}

CoefficientSchedule cheb_system_precond(int d, const ChebInterval& iv) {
  if (d < 1) throw std::invalid_argument("cheb_system_precond: d must be >= 1");
  if (!(iv.a > 0.0) || !(iv.b > iv.a)) throw std::invalid_argument("cheb_system_precond: need 0 < a < b");
  double p = 2.0 / (iv.b - iv.a);
  double q = -(iv.a + iv.b) / (iv.b - iv.a);
  std::vector<double> sigma(d + 1);
  sigma[0] = 1.0;
  sigma[1] = q;
  for (int j = 1; j < d; ++j) sigma[j + 1] = 2 * q * sigma[j] - sigma[j - 1];

  CoefficientSchedule s;
  // step j produces P_j; P_1 = -p/q is a constant
  s.steps.push_back({0, -p / q, 0, 0, 0});
  for (int j = 2; j <= d; ++j) {
    double r = sigma[j - 1] / sigma[j];
    double eta = j == 2 ? 0.0 : -sigma[j - 2] / sigma[j];
    s.steps.push_back({0, -2 * p * r, eta, 2 * q * r, 2 * p * r});
  }
  return s;
}

double binom_neg_half(int j) {
  double c = 1.0;
  for (int i = 0; i < j; ++i) c *= (-0.5 - i) / (i + 1);
  return c;
}

std::vector<double> neumann_invsqrt(int d) {
  if (d < 0) throw std::invalid_argument("neumann_invsqrt: negative degree");
  std::vector<double> out(d + 1, 0.0);
  // (lambda - 1)^j expanded with binomial coefficients
  for (int j = 0; j <= d; ++j) {
    double cj = binom_neg_half(j);
    double binom = 1.0;
    for (int i = 0; i <= j; ++i) {
      double sign = ((j - i) % 2 == 0) ? 1.0 : -1.0;
      out[i] += cj * binom * sign;
      binom = binom * (j - i) / (i + 1);
    }
  }
  return out;
}

CoefficientSchedule neumann_invsqrt_schedule(int d) {
  if (d < 1) throw std::invalid_argument("neumann_invsqrt_schedule: d must be >= 1");
  CoefficientSchedule s;
  double cd = binom_neg_half(d);
  // Horner in (x - 1); the first step forms c_{d-1} + c_d (x - 1) from C = x
  s.steps.push_back({0, binom_neg_half(d - 1) - cd, 0, cd, 0});
  for (int j = d - 2; j >= 0; --j) s.steps.push_back({0, binom_neg_half(j), 0, -1, 1});
  return s;
}

CoefficientSchedule power_filter(int d) {
  if (d < 1) throw std::invalid_argument("power_filter: d must be >= 1");
  CoefficientSchedule s;
  for (int k = 1; k < d; ++k) s.steps.push_back({0, 0, 0, 0, 1});
  s.steps.push_back({0, 0, 0, 1, 0});
  return s;
}

namespace {

// nested Newton form c_0 + (x - x_0)(c_1 + (x - x_1)(...)), one step per level
CoefficientSchedule newton_schedule(const Vector& c, const Vector& nodes) {
  int d = static_cast<int>(c.size()) - 1;
  CoefficientSchedule s;
  s.steps.push_back({0, c[d - 1] - c[d] * nodes[d - 1], 0, c[d], 0});
  for (int j = d - 2; j >= 0; --j) s.steps.push_back({0, c[j], 0, -nodes[j], 1});
  return s;
}

}  // namespace

CoefficientSchedule interpolation_schedule(const Vector& nodes, const Vector& values) {
  std::size_t n = nodes.size();
  if (values.size() != n) throw DimensionError("interpolation_schedule: length mismatch");
  if (n < 2) throw std::invalid_argument("interpolation_schedule: need at least two nodes");
  // divided differences in place
  Vector c = values;
  for (std::size_t j = 1; j < n; ++j)
    for (std::size_t i = n - 1; i >= j; --i) {
      double h = nodes[i] - nodes[i - j];
      if (h == 0.0) throw std::invalid_argument("interpolation_schedule: repeated node");
      c[i] = (c[i] - c[i - 1]) / h;
    }
  return newton_schedule(c, nodes);
}

CoefficientSchedule monomial_schedule(const std::vector<double>& coeffs) {
  if (coeffs.size() < 2) throw std::invalid_argument("monomial_schedule: need degree >= 1");
  return newton_schedule(coeffs, Vector(coeffs.size(), 0.0));
}

double richardson_rate(double lambda_min, double lambda_max) {
  if (!(lambda_max > 0.0) || lambda_min > lambda_max)
    throw std::invalid_argument("richardson_rate: need 0 < lambda_min <= lambda_max");
  return 1.0 - lambda_min / lambda_max;
}

}  // namespace polyrec
