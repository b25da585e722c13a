#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "polyrec/autodiff.hpp"
#include "polyrec/engine.hpp"
#include "polyrec/recurrence.hpp"

namespace polyrec {

// ---- synthetic spectra ----

struct ShapeParams {
  std::size_t n = 100;
  double w_flat = 1.0, w_exp = 0.0, w_pow = 0.0;  // blend, sums to 1
  double exp_rate = 0.0;    // exp(-rate * i / (n-1))
  double pow_exp = 0.0;     // (i+1)^(-p)
  double concavity = 1.0;   // exponent on the profile
  double noise = 0.0;       // sigma of the multiplicative log-normal noise
  double tail_frac = 0.0;   // fraction of trailing entries perturbed
  double tail_factor = 1.0; // their multiplicative perturbation
  double cond = 1.0;        // target condition number (linsolve / matfunc)
  double final_scale = 1.0;
};

struct GeneratorConfig {
  std::size_t n_min = 50, n_max = 300;
  double exp_rate_max = 8.0, pow_exp_max = 2.0;
  // eigen spectra need lambda_2/lambda_1 >= eigen_ratio, so their decay ranges are narrow
  double eigen_exp_rate_max = 2.0, eigen_pow_exp_max = 0.07;
  double concavity_min = 0.5, concavity_max = 1.5;
  double noise_max = 0.02;
  double tail_frac_max = 0.2, tail_factor_min = 0.5;
  double cond_min = 1e2, cond_max = 1e5;
  double eigen_ratio = 0.95;
  double scale_min = 0.8, scale_max = 1.2;
  std::size_t augment = 2;  // matfunc: augment * n uniform samples
  std::size_t max_attempts = 1000;
  std::uint64_t seed = 0;
};

struct SyntheticSpectrum {
  Vector lambda;     // descending, > 0
  Vector augmented;  // matfunc only: lambda plus uniform samples in [min, max]
  ShapeParams shape;
  double cond = 1.0;
  std::size_t index = 0, attempts = 0;
};

class RejectionBudgetExhausted : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Profile only: blend, concavity, noise, tail, target condition number. No
// rejection and no final scale. Deterministic given (shape, task, seed).
Vector spectrum_from_shape(const ShapeParams& s, Task task, std::uint64_t noise_seed);
SyntheticSpectrum generate_spectrum(std::size_t sobol_index, Task task, const GeneratorConfig& cfg);
std::vector<SyntheticSpectrum> generate_dataset(std::size_t count, Task task, const GeneratorConfig& cfg,
                                                std::size_t first_index = 0);

nlohmann::json dataset_to_json(const std::vector<SyntheticSpectrum>& ds, Task task, const GeneratorConfig& cfg);
std::vector<SyntheticSpectrum> dataset_from_json(const nlohmann::json& j);

// ---- metrics ----

double metric_eigen(const Vector& p_values, std::size_t k, std::size_t l);
double metric_linsolve(const Vector& p_values, const Vector& lambda);
double metric_matfunc(const Vector& p_values, const Vector& lambda_aug);
// log r_model / log r_baseline; nullopt when log r_baseline is 0
std::optional<double> rho_log(double r_model, double r_baseline);
double neumann_rate(const Vector& lambda, int degree);

// rho_log of a schedule against the task baseline at equal degree
std::optional<double> schedule_rho_log(Task task, const CoefficientSchedule& s, const SyntheticSpectrum& sp,
                                       std::size_t k = 10, std::size_t l = 40);

Vector anchor_weights(std::size_t t, std::size_t total_steps, std::size_t layers);

// ---- losses on the tape ----

using TapeSchedule = std::vector<std::array<ad::Var, 5>>;
TapeSchedule schedule_vars(ad::Var flat, int degree);

struct TapeRun {
  std::vector<ad::Var> prefix;     // C after each transition, i.e. P_j(lambda) up to scale
  std::vector<ad::Var> log_scale;  // accumulated log normalization at each prefix
};
// Diagonal recurrence with z = 1; max-abs normalization is part of the graph.
TapeRun recurrence_tape(const TapeSchedule& s, const Vector& lambda);

struct LossTerms {
  ad::Var total;
  double obj = 0, reg = 0, structural = 0;
  bool skipped = false;
  std::vector<double> per_layer;  // eigen only
};

struct LossConfig {
  double eps = 1e-8;
  std::size_t k = 10, l = 40;            // eigen targets and subspace size
  std::optional<double> structural_c;    // linsolve; default 5 d^3
  double structural_weight(int degree) const { return structural_c ? *structural_c : 5.0 * degree * degree * degree; }
};

LossTerms eigen_sample_loss(const TapeRun& run, const Vector& lambda, const Vector& weights, const LossConfig& cfg);
LossTerms linsolve_sample_loss(const TapeRun& run, const Vector& lambda, const LossConfig& cfg);
LossTerms matfunc_sample_loss(const TapeRun& run, const Vector& lambda, const Vector& lambda_aug, const LossConfig& cfg);

// Batch means over per-sample schedules (values only).
double loss_eigen(const std::vector<Vector>& spectra, const std::vector<CoefficientSchedule>& schedules,
                  const Vector& weights, const LossConfig& cfg);
double loss_linsolve(const std::vector<Vector>& spectra, const std::vector<CoefficientSchedule>& schedules,
                     const LossConfig& cfg);
double loss_matfunc(const std::vector<Vector>& spectra, const std::vector<Vector>& augmented,
                    const std::vector<CoefficientSchedule>& schedules, const LossConfig& cfg);

// ---- optimizer ----

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 5e-4;
  double warmup_frac = 0.1;
};

struct AdamWState {
  Vector m, v;
};

// linear warmup over warmup_frac * T steps, cosine to 0 at T; step is 1-based
double learning_rate(std::size_t step, std::size_t total_steps, const AdamWConfig& cfg);
void optimizer_step(Vector& params, const Vector& grads, AdamWState& state, std::size_t step,
                    std::size_t total_steps, const AdamWConfig& cfg);

// ---- training loops ----

struct TrainConfig {
  Task task = Task::linsolve;
  int degree = 11;
  std::size_t samples = 2000, epochs = 50, batch = 100;
  AdamWConfig adam;
  GeneratorConfig gen;
  LossConfig loss;
  InitConfig init;
  std::uint64_t seed = 0;
  std::string log_path;  // CSV, empty for none
  // degree extension: start from this backbone and append layers
  std::optional<EngineCheckpoint> base;
  std::size_t extend_freeze_epochs = 0;
  // posttraining probes
  std::size_t probe_l_min = 20, probe_l_max = 30;
  std::size_t probe_iters_min = 1, probe_iters_max = 30;
  bool verbose = false;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TrainResult {
  EngineCheckpoint checkpoint;
  double initial_loss = 0, final_loss = 0;
  std::vector<double> epoch_loss;
};

class TrainingDiverged : public NumericalError {
public:
  TrainingDiverged(const std::string& what, EngineCheckpoint last_good)
      : NumericalError(what), last_good(std::move(last_good)) {}
  EngineCheckpoint last_good;
};

TrainResult pretrain(const TrainConfig& cfg);
TrainResult pretrain(const TrainConfig& cfg, const std::vector<SyntheticSpectrum>& data);

struct ProbeSample {
  SyntheticSpectrum spectrum;
  SpectralProbe probe;  // window (eigen) or [top; bottom] (extremal)
};
std::vector<ProbeSample> simulate_probes(const std::vector<SyntheticSpectrum>& data, Task task,
                                         const TrainConfig& cfg, std::uint64_t seed);
// mean rho_log of engine(embedding(probe)) over the set
double mean_probe_rho(const EngineCheckpoint& ck, const std::vector<ProbeSample>& set, const LossConfig& cfg);

TrainResult posttrain(const EngineCheckpoint& backbone, const TrainConfig& cfg);
TrainResult posttrain(const EngineCheckpoint& backbone, const TrainConfig& cfg, const std::vector<ProbeSample>& data);

}  // namespace polyrec
