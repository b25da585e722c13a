#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "polyrec/linalg.hpp"
#include "polyrec/recurrence.hpp"

namespace polyrec {

// ---- Nelder-Mead ----

struct NelderMeadConfig {
  double reflect = 1.0, expand = 2.0, contract = 0.5, shrink = 0.5;
  double diameter_tol = 1e-10;
  std::size_t max_evals = 2000;
  // initial simplex offsets: step * |x_i|, or zero_step when x_i == 0
  double step = 0.05, zero_step = 0.00025;
};

struct NelderMeadResult {
  Vector x;
  double value = 0.0;
  std::size_t evals = 0;
  Vector trace;  // best value after every iteration
};

NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& start,
                             const NelderMeadConfig& cfg = {});

// ---- window-discovery minimax gap ----

struct MinimaxGrid {
  double c1_min = 1e-3, c1_max = 1e3;  // log-spaced
  std::size_t c1_points = 61;
  double c2_min = -1.5, c2_max = 1.5;  // linear
  std::size_t c2_points = 61;
  std::size_t samples = 2048;
};

struct MinimaxReport {
  double c1 = 0.0, c2 = 0.0;
  double L = 0.0;
  int degree = 0;
  double leading = 0.0;
  double bound = 0.0;  // 2^-(degree-1)
  double gap = 0.0;    // reported as L itself
  double grid_best = 0.0;
  MinimaxGrid grid;
  Vector trace;
};

// log L(c1, c2) for one window; +inf for rejected c1
double minimax_log_objective(const CoefficientSchedule& s, double c1, double c2, std::size_t samples = 2048);
MinimaxReport minimax_gap(const CoefficientSchedule& s, const MinimaxGrid& grid = {},
                          const NelderMeadConfig& nm = {});
nlohmann::json minimax_to_json(const MinimaxReport& r);

// ---- condition estimates ----

struct ConditionEstimate {
  double lambda_min = 0.0, lambda_max = 0.0;
  double cond = 0.0;
  bool indefinite = false;
  std::size_t steps = 0;
};

ConditionEstimate estimate_condition(const LinearOperator& x, std::size_t steps = 100, std::uint64_t seed = 0);

// Matrix-free P(X) X (or P(X) alone) for condition estimates of a preconditioned operator.
FunctionOperator composed_operator(const LinearOperator& x, const CoefficientSchedule& s, bool times_x = true);

// ---- rho_log ----

std::optional<double> rho_log_report(double model_metric, double baseline_metric);

// ---- plot data ----

struct AffineChebFit {
  double a = 0.0, b = 0.0, c = 0.0, d0 = 0.0;  // a T_n(b x + c) + d0
  int n = 0;
  double residual = 0.0;  // ||P - fit|| / ||P|| over the samples
};

struct PlotData {
  Vector x, p;
  std::optional<AffineChebFit> fit;
  Vector fitted;
};

PlotData poly_plot_data(const CoefficientSchedule& s, double lo, double hi, std::size_t samples, bool with_fit = true);
AffineChebFit fit_affine_chebyshev(const Vector& x, const Vector& p, int n, double b0, double c0);
std::string plot_csv(const PlotData& d);

}  // namespace polyrec
