#pragma once

#include <string>
#include <vector>

#include "polyrec/recurrence.hpp"

namespace polyrec {

struct ChebInterval {
  double a = 0.0, b = 1.0;
  std::string source = "manual";
};

double cheb_theta(double lambda, const ChebInterval& iv);

// T_d(x), cosh/arccosh form outside [-1,1]
double chebyshev_t(int d, double x);

// T_d(p x + q) with every transition raising the degree and the readout
// extracting C. p = 1, q = 0 gives the plain eta=-1, beta=2 pattern.
CoefficientSchedule chebyshev_schedule(int d, double p = 1.0, double q = 0.0);

// P_d(lambda) = T_d(theta(lambda))
CoefficientSchedule cheb_eigen_filter(int d, const ChebInterval& iv);

// P_d(lambda) = (1 - T_d(theta(lambda)) / T_d(theta(0))) / lambda
CoefficientSchedule cheb_system_precond(int d, const ChebInterval& iv);

// Monomial coefficients of sum_{j<=d} binom(-1/2, j) (lambda - 1)^j
std::vector<double> neumann_invsqrt(int d);
// The same polynomial as a Horner-form schedule with d tuples (d >= 1).
CoefficientSchedule neumann_invsqrt_schedule(int d);
double binom_neg_half(int j);

CoefficientSchedule power_filter(int d);
// Interpolant through (nodes[i], values[i]) in Newton form, degree nodes.size()-1 >= 1.
// Nodes must be distinct; each step is c_j + (x - x_j) C.
CoefficientSchedule interpolation_schedule(const Vector& nodes, const Vector& values);
// P(x) = sum_i coeffs[i] x^i in Horner form
CoefficientSchedule monomial_schedule(const std::vector<double>& coeffs);
double richardson_rate(double lambda_min, double lambda_max);

}  // namespace polyrec
