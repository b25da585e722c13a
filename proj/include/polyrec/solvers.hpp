#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "polyrec/linalg.hpp"
#include "polyrec/recurrence.hpp"

namespace polyrec {

struct SolveReport {
  std::size_t iterations = 0;
  Vector history;  // relative residual (pcg) or max target eigenvalue error (eig); history[0] is the start
  std::vector<std::size_t> matvecs_at;  // cumulative operator applications per history entry
  bool converged = false;
  std::size_t matvecs = 0;
  double seconds = 0.0;
  bool preconditioner_rejected = false;  // positivity check failed, ran unpreconditioned
  std::string note;
};

// ---- preconditioned CG ----

struct PcgConfig {
  double tol = 1e-10;
  std::size_t max_iters = 10000;
  // estimated spectral interval [lo, hi] for the positivity check of P; skipped when absent
  std::optional<std::pair<double, double>> probe_interval;
  std::size_t positivity_grid = 1024;
  // grid spans [lo_factor * lo, hi_factor * hi]; a Chebyshev preconditioner turns negative just past
  // its upper endpoint, so the upper end is not widened by default
  double positivity_lo_factor = 0.9, positivity_hi_factor = 1.0;
};

struct PcgResult {
  Vector x;
  SolveReport report;
};

// M^{-1} r is realized as P(X) r through the recurrence. A null schedule runs plain CG.
PcgResult pcg(const LinearOperator& x, const Vector& b, const CoefficientSchedule* precond, const PcgConfig& cfg = {});

// true when P > 0 on `points` equispaced points over [lo, hi]
bool preconditioner_positive(const CoefficientSchedule& s, double lo, double hi, std::size_t points = 1024);

// ---- filtered block eigensolver ----

struct EigConfig {
  double tol = 1e-10;
  std::size_t max_outer = 500;
  std::size_t stagnation_window = 50;
  double sigma = 0.0;  // shift for sigma*I - X; must exceed lambda_max(X)
  std::uint64_t seed = 0;
  // exact eigenvalues of X in ascending order; when absent a dense reference is used for n <= 2000,
  // otherwise the estimates are compared against the previous outer iteration
  std::optional<Vector> reference;
};

struct EigResult {
  Vector values;               // k + 5 smallest estimates (capped at l), ascending
  std::vector<Vector> vectors; // matching Ritz vectors
  std::vector<Vector> trace;   // the same estimates after every outer iteration, trace[0] at the start
  SolveReport report;
};

// Targets are the k smallest eigenvalues of X. Each outer iteration applies the filter
// schedule to sigma*I - X over the block, orthonormalizes and does Rayleigh-Ritz on X.
EigResult filtered_eigensolve(const LinearOperator& x, std::size_t k, std::size_t l,
                              const CoefficientSchedule& filter, const EigConfig& cfg);

// ---- inverse square root ----

struct WhiteningConfig {
  std::size_t max_iters = 100;
  double rel_change = 1e-6;
  std::uint64_t seed = 0;
};

// ||P(X) X P(X) - I||_2 by power iteration on the square of the symmetric residual operator.
double whitening_residual(const LinearOperator& x, const CoefficientSchedule& s, const WhiteningConfig& cfg = {});

// Columns of A as (feature, count) pairs; counts are 1 + geometric(1/2).
std::vector<std::vector<std::pair<std::size_t, double>>> synthetic_counts(std::size_t n_features,
                                                                          std::size_t n_samples, double density,
                                                                          std::uint64_t seed);
// X = A A^T + reg I, A (n_features x n_samples) with nonnegative integer counts at the given density.
SparseOperator synthetic_gram(std::size_t n_features, std::size_t n_samples, double density, double reg,
                              std::uint64_t seed);

// ---- traces ----

// iteration,value,matvecs with a single '#' header line carrying the wall time
void write_trace_csv(const SolveReport& r, const std::string& path, const std::string& value_name);
std::string trace_csv(const SolveReport& r, const std::string& value_name, bool with_timing = true);

}  // namespace polyrec
