#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "polyrec/analysis.hpp"
#include "polyrec/baselines.hpp"
#include "polyrec/engine.hpp"
#include "polyrec/linalg.hpp"
#include "polyrec/probes.hpp"
#include "polyrec/solvers.hpp"

namespace polyrec {

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class MatrixMarketError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Coordinate real/integer files, symmetric or general. Symmetric files are
// expanded to full CSR; general files must be symmetric to 1e-12 relative to
// the largest entry and are symmetrized exactly.
SparseOperator parse_matrix_market(std::istream& in);
SparseOperator parse_matrix_market(const std::string& path);
void write_matrix_market(const SparseOperator& a, const std::string& path);

// ---- configuration ----

struct ProbeSpec {
  std::string method = "lanczos";  // lanczos | subspace
  std::size_t steps = 50;
  std::uint64_t seed = 0;
};
ProbeSpec parse_probe_spec(const std::string& s);  // "lanczos:50", "subspace:20"

struct BaselineSpec {
  std::string kind = "none";  // none | cheb | power | neumann
  int degree = 0;
};
BaselineSpec parse_baseline_spec(const std::string& s);  // "none", "cheb:11", "power:21", "neumann:10"

struct SolverSpec {
  double tol = 1e-10;
  std::size_t max_iters = 10000;
  std::size_t k = 10, l = 40;
};

struct ExperimentConfig {
  Task task = Task::linsolve;
  std::string matrix;     // Matrix Market path
  std::string generator;  // synthetic spec, see make_synthetic
  ProbeSpec probe;
  std::string engine;     // checkpoint path
  std::string baseline;   // baseline spec string
  SolverSpec solver;
  std::string output = "out";  // prefix for written files
  std::uint64_t seed = 0;

  // the probe subcommand needs no coefficient source
  void validate(bool need_source = true) const;
};

nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

// diag:N:lo:hi, diaggeom:N:lo:hi, laplace1d:N:shift, gram:features:samples:density:reg[:seed]
SparseOperator make_synthetic(const std::string& spec);
SparseOperator load_matrix(const ExperimentConfig& c);

// ---- deployment ----

struct ProbeOutcome {
  SpectralProbe probe;  // raw scale
  RitzSet ritz;         // the Ritz set the probe was assembled from
  double sigma = 0.0;   // eigen: shift of the probed operator sigma*I - X
  double top = 0.0, top_residual = 0.0;  // eigen: 10-step Lanczos estimate of lambda_max(X) behind sigma
  std::size_t matvecs = 0;
};

// linsolve/matfunc: Lanczos (or subspace) extremal probe of X.
// eigen: subspace probe of sigma*I - X with sigma from bottom_shift.
ProbeOutcome run_probe(const LinearOperator& x, Task task, const ProbeSpec& spec, std::size_t k = 10,
                       std::size_t l = 40);

// [min Ritz, max Ritz + r]
std::pair<double, double> probe_system_interval(const ProbeOutcome& p);
// non-target interval of sigma*I - X: [sigma - (lambda_max(X) estimate + residual), Ritz at ceil(1.5k)]
ChebInterval probe_filter_interval(const ProbeOutcome& p, std::size_t k);

// Engine output on a probe normalized by its top estimate, folded back to the raw scale.
CoefficientSchedule deploy_engine(const EngineCheckpoint& ck, const SpectralProbe& raw_probe);

struct Deployment {
  std::optional<CoefficientSchedule> schedule;  // empty for "none"
  std::string source;                           // engine path or baseline spec
  ProbeOutcome probe;
};

Deployment build_deployment(const LinearOperator& x, const ExperimentConfig& c);

// ---- subcommands ----

struct CommandResult {
  nlohmann::json summary;
  std::vector<std::string> files;
  bool converged = true;
};

CommandResult cmd_gen_data(const nlohmann::json& cfg, const std::string& out);
CommandResult cmd_pretrain(const nlohmann::json& cfg, const std::string& out);
CommandResult cmd_posttrain(const std::string& backbone, const nlohmann::json& cfg, const std::string& out);
CommandResult cmd_probe(const ExperimentConfig& c);
CommandResult cmd_solve(const ExperimentConfig& c);
CommandResult cmd_eig(const ExperimentConfig& c);
CommandResult cmd_invsqrt(const ExperimentConfig& c);
CommandResult cmd_minimax(const std::string& schedule_path, const MinimaxGrid& grid, const std::string& out);
CommandResult cmd_bench(const std::vector<std::string>& matrices, const ExperimentConfig& c);

// CSV body with a '#'-prefixed provenance header; the body is deterministic given (config, seed)
std::string with_header(const std::string& body, const nlohmann::json& config, double seconds);
void write_text(const std::string& path, const std::string& text);
nlohmann::json read_json(const std::string& path);

}  // namespace polyrec
