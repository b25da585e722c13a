#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"

#include "polyrec/linalg.hpp"

namespace polyrec {

struct StepCoefficients {
  double rho = 0, gamma = 0, eta = 0, alpha = 0, beta = 0;

  std::array<double, 5> as_array() const { return {rho, gamma, eta, alpha, beta}; }
  static StepCoefficients from_array(const std::array<double, 5>& a) {
    return {a[0], a[1], a[2], a[3], a[4]};
  }
  bool operator==(const StepCoefficients&) const = default;
};

// d tuples; the last one is the readout row (its rho is ignored).
struct CoefficientSchedule {
  std::vector<StepCoefficients> steps;

  int degree() const { return static_cast<int>(steps.size()); }
  const StepCoefficients& readout() const { return steps.back(); }
  void validate() const;
  bool operator==(const CoefficientSchedule&) const = default;
};

nlohmann::json schedule_to_json(const CoefficientSchedule& s);
CoefficientSchedule schedule_from_json(const nlohmann::json& j);
CoefficientSchedule load_schedule(const std::string& path);
void save_schedule(const CoefficientSchedule& s, const std::string& path);

class StateCollapse : public NumericalError {
public:
  using NumericalError::NumericalError;
};

enum class Mode { vector, diagonal, dense };

// Blocks are vectors in vector and diagonal modes, n x n matrices in dense mode.
template <class Block>
struct RecurrenceState {
  Block A, B, C;
  double log_scale = 0.0;
};

using VectorState = RecurrenceState<Vector>;
using DenseState = RecurrenceState<DenseMatrix>;

// vector mode: matrix-free action on z
VectorState init_state(const LinearOperator& x, const Vector& z);
void apply_transition(VectorState& st, const LinearOperator& x, const StepCoefficients& step, bool normalize);
Vector apply_readout(const VectorState& st, const LinearOperator& x, const StepCoefficients& readout);

// diagonal mode: X = diag(lambda), evaluated elementwise
VectorState init_state_diagonal(const Vector& lambda, const Vector& z);
void apply_transition_diagonal(VectorState& st, const Vector& lambda, const StepCoefficients& step,
                               bool normalize);
Vector apply_readout_diagonal(const VectorState& st, const Vector& lambda, const StepCoefficients& readout);

// dense mode: z = I, blocks hold matrix polynomials of X
DenseState init_state_dense(const DenseMatrix& x);
void apply_transition_dense(DenseState& st, const DenseMatrix& x, const StepCoefficients& step, bool normalize);
DenseMatrix apply_readout_dense(const DenseState& st, const DenseMatrix& x, const StepCoefficients& readout);

struct VectorRun {
  Vector out;  // P(X)z = out * exp(log_scale)
  double log_scale = 0.0;
  Vector value() const;
};

struct DenseRun {
  DenseMatrix out;
  double log_scale = 0.0;
  DenseMatrix value() const;
};

VectorRun run_recurrence(const CoefficientSchedule& s, const LinearOperator& x, const Vector& z, bool normalize = true);
VectorRun run_recurrence_diagonal(const CoefficientSchedule& s, const Vector& lambda, const Vector& z,
                                  bool normalize = true);
DenseRun run_recurrence_dense(const CoefficientSchedule& s, const DenseMatrix& x, bool normalize = true);

// P(lambda_i) for every entry, absolute values (z = ones, log-scale folded back)
Vector evaluate_polynomial(const CoefficientSchedule& s, const Vector& lambda);
// Same, but returning normalized values and the shared log-scale; safe when P overflows.
VectorRun evaluate_polynomial_scaled(const CoefficientSchedule& s, const Vector& lambda);

// Monomial coefficients c_0..c_D of P. D = d+1 when the readout beta is nonzero,
// otherwise D = d (see README for the degree convention).
std::vector<double> to_poly_coefficients(const CoefficientSchedule& s);
double horner(const std::vector<double>& c, double x);

struct LeadingCoefficient {
  int degree = 0;
  double value = 0.0;
  bool annihilated = false;
};

// Leading term tracked through the recurrence scalars without expanding P.
LeadingCoefficient leading_coefficient(const CoefficientSchedule& s);

// Monomial coefficient of x^degree, from the symbolic expansion.
double coefficient_of_degree(const CoefficientSchedule& s, int degree);

// Schedule Q with Q(x) = out_scale * P(x / in_scale).
CoefficientSchedule rescale_schedule(const CoefficientSchedule& s, double in_scale, double out_scale = 1.0);

}  // namespace polyrec
