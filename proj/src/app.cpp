#include "polyrec/app.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "polyrec/training.hpp"

namespace polyrec {

using json = nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": not a number: '" + s + "'");
  }
}

std::size_t to_size(const std::string& s, const std::string& what) {
  double v = to_double(s, what);
  if (v < 0 || v != std::floor(v)) throw ConfigError(what + ": expected a nonnegative integer: '" + s + "'");
  return static_cast<std::size_t>(v);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vector rhs_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Vector b(n);
  for (auto& v : b) v = g(rng);
  return b;
}

}  // namespace

// ---- Matrix Market ----

SparseOperator parse_matrix_market(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw MatrixMarketError("matrix market: empty input");
  std::istringstream hs(line);
  std::string banner, object, format, field, symmetry;
  hs >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket") throw MatrixMarketError("matrix market: missing %%MatrixMarket banner");
  object = lower(object), format = lower(format), field = lower(field), symmetry = lower(symmetry);
  if (object != "matrix") throw MatrixMarketError("matrix market: object must be 'matrix'");
  if (format != "coordinate") throw MatrixMarketError("matrix market: only coordinate format is supported");
  if (field == "pattern") throw MatrixMarketError("matrix market: pattern-only files carry no values");
  if (field != "real" && field != "integer" && field != "double")
    throw MatrixMarketError("matrix market: unsupported field '" + field + "'");
  if (symmetry != "symmetric" && symmetry != "general")
    throw MatrixMarketError("matrix market: unsupported symmetry '" + symmetry + "'");
  const bool sym = symmetry == "symmetric";

  while (std::getline(in, line)) {
    auto p = line.find_first_not_of(" \t\r");
    if (p == std::string::npos || line[p] == '%') continue;
    break;
  }
  std::size_t rows = 0, cols = 0, nnz = 0;
  {
    std::istringstream ss(line);
    if (!(ss >> rows >> cols >> nnz)) throw MatrixMarketError("matrix market: malformed size line");
  }
  if (rows != cols) throw MatrixMarketError("matrix market: matrix is not square");
  if (rows == 0) throw MatrixMarketError("matrix market: empty matrix");

  std::vector<std::size_t> ri, ci;
  Vector vals;
  ri.reserve(sym ? 2 * nnz : nnz);
  std::size_t read = 0;
  while (read < nnz && std::getline(in, line)) {
    auto p = line.find_first_not_of(" \t\r");
    if (p == std::string::npos || line[p] == '%') continue;
    std::istringstream ss(line);
    long long i = 0, j = 0;
    double v = 0.0;
    if (!(ss >> i >> j >> v)) throw MatrixMarketError("matrix market: malformed entry '" + line + "'");
    if (i < 1 || j < 1 || std::size_t(i) > rows || std::size_t(j) > cols)
      throw MatrixMarketError("matrix market: index out of range in '" + line + "'");
    if (!std::isfinite(v)) throw MatrixMarketError("matrix market: non-finite entry");
    std::size_t r = i - 1, c = j - 1;
    ri.push_back(r), ci.push_back(c), vals.push_back(v);
    if (sym && r != c) ri.push_back(c), ci.push_back(r), vals.push_back(v);
    ++read;
  }
  if (read < nnz) throw MatrixMarketError("matrix market: expected " + std::to_string(nnz) + " entries, found " +
                                          std::to_string(read));
  if (sym) return SparseOperator::from_triplets(rows, ri, ci, vals, true);

  // general: check numerical symmetry, then store the exact average
  std::map<std::pair<std::size_t, std::size_t>, double> m;
  double scale = 0.0;
  for (std::size_t t = 0; t < vals.size(); ++t) m[{ri[t], ci[t]}] += vals[t];
  for (const auto& [key, v] : m) scale = std::max(scale, std::abs(v));
  std::vector<std::size_t> r2, c2;
  Vector v2;
  for (const auto& [key, v] : m) {
    auto it = m.find({key.second, key.first});
    double w = it == m.end() ? 0.0 : it->second;
    if (std::abs(v - w) > 1e-12 * scale)
      throw MatrixMarketError("matrix market: general matrix is not symmetric at (" + std::to_string(key.first + 1) +
                              ", " + std::to_string(key.second + 1) + ")");
    r2.push_back(key.first), c2.push_back(key.second), v2.push_back(0.5 * (v + w));
    if (it == m.end()) r2.push_back(key.second), c2.push_back(key.first), v2.push_back(0.5 * (v + w));
  }
  return SparseOperator::from_triplets(rows, r2, c2, v2, true);
}

SparseOperator parse_matrix_market(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open matrix " + path);
  return parse_matrix_market(in);
}

void write_matrix_market(const SparseOperator& a, const std::string& path) {
  std::ostringstream os;
  os << std::setprecision(17);
  std::size_t lower_nnz = 0;
  for (std::size_t i = 0; i < a.dim(); ++i)
    for (std::size_t p = a.row_ptr()[i]; p < a.row_ptr()[i + 1]; ++p)
      if (a.col_idx()[p] <= i) ++lower_nnz;
  os << "%%MatrixMarket matrix coordinate real symmetric\n" << a.dim() << ' ' << a.dim() << ' ' << lower_nnz << '\n';
  for (std::size_t i = 0; i < a.dim(); ++i)
    for (std::size_t p = a.row_ptr()[i]; p < a.row_ptr()[i + 1]; ++p)
      if (a.col_idx()[p] <= i) os << i + 1 << ' ' << a.col_idx()[p] + 1 << ' ' << a.values()[p] << '\n';
  write_text(path, os.str());
}

// ---- configuration ----

ProbeSpec parse_probe_spec(const std::string& s) {
  auto parts = split(s, ':');
  if (parts.empty() || parts.size() > 3) throw ConfigError("probe spec: expected method:steps[:seed], got '" + s + "'");
  ProbeSpec p;
  p.method = parts[0];
  if (p.method != "lanczos" && p.method != "subspace") throw ConfigError("probe spec: unknown method '" + p.method + "'");
  if (parts.size() > 1) p.steps = to_size(parts[1], "probe steps");
  if (parts.size() > 2) p.seed = to_size(parts[2], "probe seed");
  if (p.steps == 0) throw ConfigError("probe spec: steps must be positive");
  return p;
}

BaselineSpec parse_baseline_spec(const std::string& s) {
  auto parts = split(s, ':');
  BaselineSpec b;
  if (parts.empty()) throw ConfigError("baseline spec: empty");
  b.kind = parts[0];
  if (b.kind == "none") {
    if (parts.size() != 1) throw ConfigError("baseline spec: 'none' takes no degree");
    return b;
  }
  if (b.kind != "cheb" && b.kind != "power" && b.kind != "neumann")
    throw ConfigError("baseline spec: unknown kind '" + b.kind + "'");
  if (parts.size() != 2) throw ConfigError("baseline spec: expected kind:degree, got '" + s + "'");
  b.degree = static_cast<int>(to_size(parts[1], "baseline degree"));
  if (b.degree < 1) throw ConfigError("baseline spec: degree must be >= 1");
  return b;
}

void ExperimentConfig::validate(bool need_source) const {
  if (matrix.empty() == generator.empty()) throw ConfigError("config: give exactly one of matrix or generator");
  if (need_source && engine.empty() == baseline.empty())
    throw ConfigError("config: give exactly one coefficient source (engine or baseline)");
  if (!baseline.empty()) parse_baseline_spec(baseline);
  if (!(solver.tol > 0.0)) throw ConfigError("config: tol must be positive");
  if (solver.max_iters == 0) throw ConfigError("config: max_iters must be positive");
  if (solver.k == 0 || solver.l < solver.k) throw ConfigError("config: need 1 <= k <= l");
  if (probe.steps == 0) throw ConfigError("config: probe steps must be positive");
}

json config_to_json(const ExperimentConfig& c) {
  return {{"task", task_name(c.task)},
          {"matrix", c.matrix},
          {"generator", c.generator},
          {"probe", {{"method", c.probe.method}, {"steps", c.probe.steps}, {"seed", c.probe.seed}}},
          {"engine", c.engine},
          {"baseline", c.baseline},
          {"solver", {{"tol", c.solver.tol}, {"max_iters", c.solver.max_iters}, {"k", c.solver.k}, {"l", c.solver.l}}},
          {"output", c.output},
          {"seed", c.seed}};
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig c) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::vector<std::string> known{"task",   "matrix", "generator", "probe", "engine",
                                              "baseline", "solver", "output",  "seed"};
  for (const auto& [key, v] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("config: unknown key '" + key + "'");
  try {
    if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("matrix")) c.matrix = j.at("matrix").get<std::string>();
    if (j.contains("generator")) c.generator = j.at("generator").get<std::string>();
    if (j.contains("engine")) c.engine = j.at("engine").get<std::string>();
    if (j.contains("baseline")) c.baseline = j.at("baseline").get<std::string>();
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("probe")) {
      const auto& p = j.at("probe");
      if (p.is_string()) {
        c.probe = parse_probe_spec(p.get<std::string>());
      } else {
        if (p.contains("method")) c.probe.method = p.at("method").get<std::string>();
        if (p.contains("steps")) c.probe.steps = p.at("steps").get<std::size_t>();
        if (p.contains("seed")) c.probe.seed = p.at("seed").get<std::uint64_t>();
        parse_probe_spec(c.probe.method);
      }
    }
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      if (s.contains("tol")) c.solver.tol = s.at("tol").get<double>();
      if (s.contains("max_iters")) c.solver.max_iters = s.at("max_iters").get<std::size_t>();
      if (s.contains("k")) c.solver.k = s.at("k").get<std::size_t>();
      if (s.contains("l")) c.solver.l = s.at("l").get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  return config_from_json(read_json(path), std::move(base));
}

SparseOperator make_synthetic(const std::string& spec) {
  auto p = split(spec, ':');
  if (p.empty()) throw ConfigError("generator: empty spec");
  const std::string& kind = p[0];
  if (kind == "diag" || kind == "diaggeom") {
    if (p.size() != 4) throw ConfigError("generator: expected " + kind + ":N:lo:hi");
    std::size_t n = to_size(p[1], "generator N");
    double lo = to_double(p[2], "generator lo"), hi = to_double(p[3], "generator hi");
    if (n < 1 || !(lo > 0.0) || hi < lo) throw ConfigError("generator: need N >= 1 and 0 < lo <= hi");
    Vector d(n);
    for (std::size_t i = 0; i < n; ++i) {
      double t = n == 1 ? 0.0 : double(i) / double(n - 1);
      d[i] = kind == "diag" ? lo + (hi - lo) * t : lo * std::pow(hi / lo, t);
    }
    return SparseOperator::from_diagonal(d);
  }
  if (kind == "laplace1d") {
    if (p.size() != 3) throw ConfigError("generator: expected laplace1d:N:shift");
    std::size_t n = to_size(p[1], "generator N");
    double shift = to_double(p[2], "generator shift");
    if (n < 2 || shift < 0.0) throw ConfigError("generator: need N >= 2 and shift >= 0");
    std::vector<std::size_t> r, c;
    Vector v;
    for (std::size_t i = 0; i < n; ++i) {
      r.push_back(i), c.push_back(i), v.push_back(2.0 + shift);
      if (i + 1 < n) {
        r.push_back(i), c.push_back(i + 1), v.push_back(-1.0);
        r.push_back(i + 1), c.push_back(i), v.push_back(-1.0);
      }
    }
    return SparseOperator::from_triplets(n, r, c, v, true);
  }
  if (kind == "gram") {
    if (p.size() != 5 && p.size() != 6) throw ConfigError("generator: expected gram:features:samples:density:reg[:seed]");
    std::size_t f = to_size(p[1], "generator features"), s = to_size(p[2], "generator samples");
    double density = to_double(p[3], "generator density"), reg = to_double(p[4], "generator reg");
    std::uint64_t seed = p.size() == 6 ? to_size(p[5], "generator seed") : 0;
    if (f == 0 || s == 0 || !(density > 0.0 && density <= 1.0) || reg < 0.0)
      throw ConfigError("generator: bad gram parameters");
    return synthetic_gram(f, s, density, reg, seed);
  }
  throw ConfigError("generator: unknown kind '" + kind + "'");
}

SparseOperator load_matrix(const ExperimentConfig& c) {
  return c.matrix.empty() ? make_synthetic(c.generator) : parse_matrix_market(c.matrix);
}

// ---- deployment ----

ProbeOutcome run_probe(const LinearOperator& x, Task task, const ProbeSpec& spec, std::size_t k, std::size_t l) {
  CountingOperator counted(x);
  ProbeOutcome out;
  const std::size_t n = x.dim();
  if (task == Task::eigen) {
    // same pre-pass as bottom_shift, kept here for the residual
    auto pre = ritz_from_lanczos(lanczos_probe(counted, std::min<std::size_t>(10, n), spec.seed));
    out.top = pre.values.front();
    out.top_residual = pre.residuals.front();
    out.sigma = 1.05 * out.top;
    AffineOperator shifted(counted, out.sigma, -1.0);
    if (spec.method == "lanczos")
      out.ritz = ritz_from_lanczos(lanczos_probe(shifted, std::min(spec.steps, n), spec.seed + 1));
    else
      out.ritz = subspace_probe(shifted, std::min(l, n), spec.steps, spec.seed + 1);
    out.probe = assemble_eigen_probe(out.ritz, std::min(k, out.ritz.values.size()), 10, 104, spec.seed + 2);
  } else if (spec.method == "lanczos") {
    out.ritz = ritz_from_lanczos(lanczos_probe(counted, std::min(spec.steps, n), spec.seed));
    out.probe = assemble_extremal_probe(out.ritz, nullptr, 20, task);
  } else {
    std::size_t width = std::min(l, n);
    auto top = subspace_probe(counted, width, spec.steps, spec.seed);
    double sigma = bottom_shift(counted, spec.seed + 1);
    auto bottom = shifted_subspace_probe(counted, width, spec.steps, sigma, spec.seed + 2);
    out.ritz = top;
    out.ritz.values.insert(out.ritz.values.end(), bottom.values.begin(), bottom.values.end());
    out.ritz.residuals.insert(out.ritz.residuals.end(), bottom.residuals.begin(), bottom.residuals.end());
    out.probe = assemble_extremal_probe(top, &bottom, 20, task);
  }
  out.matvecs = counted.count();
  return out;
}

std::pair<double, double> probe_system_interval(const ProbeOutcome& p) {
  const auto& v = p.ritz.values;
  const auto& r = p.ritz.residuals;
  auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  if (!(*mn > 0.0)) throw NumericalError("probe: nonpositive Ritz value, operator is not SPD");
  // eigenvalues below the smallest Ritz value stay positive under the Chebyshev preconditioner,
  // eigenvalues past the top do not
  return {*mn, *mx + r[mx - v.begin()]};
}

ChebInterval probe_filter_interval(const ProbeOutcome& p, std::size_t k) {
  const auto& v = p.ritz.values;  // descending estimates of sigma*I - X
  std::size_t kb = (3 * k + 1) / 2;
  double b = v[std::min(kb, v.size()) - 1];
  double a = std::max(0.0, p.sigma - (p.top + p.top_residual));
  if (!(b > a)) throw NumericalError("probe: empty non-target interval for the eigen filter");
  return {a, b, "probe"};
}

CoefficientSchedule deploy_engine(const EngineCheckpoint& ck, const SpectralProbe& raw) {
  if (raw.task != ck.task)
    throw ConfigError("engine task " + task_name(ck.task) + " does not match probe task " + task_name(raw.task));
  double t = raw.values.front();
  if (!(t > 0.0)) throw NumericalError("deploy: top probe estimate must be positive");
  SpectralProbe np = raw;
  for (auto& v : np.values) v /= t;
  for (auto& r : np.residuals) r /= t;
  auto s = engine_forward(ck, embed_probe(ck, np));
  double out = ck.task == Task::linsolve ? 1.0 / t : ck.task == Task::matfunc ? 1.0 / std::sqrt(t) : 1.0;
  return rescale_schedule(s, t, out);
}

Deployment build_deployment(const LinearOperator& x, const ExperimentConfig& c) {
  Deployment d;
  d.probe = run_probe(x, c.task, c.probe, c.solver.k, c.solver.l);
  if (!c.engine.empty()) {
    auto ck = load_checkpoint(c.engine);
    if (ck.task != c.task) throw ConfigError("engine was trained for " + task_name(ck.task) + ", not " + task_name(c.task));
    d.schedule = deploy_engine(ck, d.probe.probe);
    d.source = c.engine;
    return d;
  }
  auto b = parse_baseline_spec(c.baseline);
  d.source = c.baseline;
  if (b.kind == "none") return d;
  switch (c.task) {
    case Task::linsolve: {
      if (b.kind != "cheb") throw ConfigError("linsolve baselines: none or cheb:d");
      auto [lo, hi] = probe_system_interval(d.probe);
      d.schedule = cheb_system_precond(b.degree, {lo, hi, "probe"});
      break;
    }
    case Task::eigen:
      if (b.kind == "cheb")
        d.schedule = cheb_eigen_filter(b.degree, probe_filter_interval(d.probe, c.solver.k));
      else if (b.kind == "power")
        d.schedule = power_filter(b.degree);
      else
        throw ConfigError("eigen baselines: power:d or cheb:d");
      break;
    case Task::matfunc: {
      if (b.kind != "neumann") throw ConfigError("matfunc baselines: neumann:d");
      // spectrum mapped into (0, 1] by the probe's upper bound
      double t = probe_system_interval(d.probe).second;
      d.schedule = rescale_schedule(neumann_invsqrt_schedule(b.degree), t, 1.0 / std::sqrt(t));
      break;
    }
  }
  return d;
}

// ---- output helpers ----

std::string with_header(const std::string& body, const json& config, double seconds) {
  std::ostringstream os;
  os << "# seconds=" << seconds << '\n' << "# config=" << config.dump() << '\n' << body;
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("write failed for " + path);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

namespace {

// trace CSV without its own timing line; timing goes to the provenance header
std::string trace_body(const SolveReport& r, const std::string& name) { return trace_csv(r, name, false); }

json probe_summary(const ProbeOutcome& p) {
  json j = {{"matvecs", p.matvecs}, {"ritz_count", p.ritz.values.size()}};
  if (p.sigma != 0.0) j["sigma"] = p.sigma;
  return j;
}

}  // namespace

// ---- subcommands ----

CommandResult cmd_gen_data(const json& cfg, const std::string& out) {
  TrainConfig tc;
  try {
    tc = train_config_from_json(cfg);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  auto ds = generate_dataset(tc.samples, tc.task, tc.gen);
  write_text(out, dataset_to_json(ds, tc.task, tc.gen).dump() + "\n");
  CommandResult r;
  r.summary = {{"config", train_config_to_json(tc)}, {"count", ds.size()}, {"output", out}};
  r.files.push_back(out);
  return r;
}

CommandResult cmd_pretrain(const json& cfg, const std::string& out) {
  TrainConfig tc;
  try {
    tc = train_config_from_json(cfg);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (tc.log_path.empty()) tc.log_path = out + ".log.csv";
  auto t0 = std::chrono::steady_clock::now();
  auto res = pretrain(tc);
  save_checkpoint(res.checkpoint, out);
  CommandResult r;
  r.summary = {{"config", train_config_to_json(tc)},
               {"initial_loss", res.initial_loss},
               {"final_loss", res.final_loss},
               {"seconds", seconds_since(t0)},
               {"checkpoint", out}};
  r.files = {out, tc.log_path};
  return r;
}

CommandResult cmd_posttrain(const std::string& backbone, const json& cfg, const std::string& out) {
  auto ck = load_checkpoint(backbone);
  TrainConfig tc;
  try {
    TrainConfig base;
    base.task = ck.task;
    base.degree = ck.degree;
    tc = train_config_from_json(cfg, base);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (tc.task != ck.task) throw ConfigError("posttrain: config task differs from the backbone's");
  if (tc.log_path.empty()) tc.log_path = out + ".log.csv";
  auto t0 = std::chrono::steady_clock::now();
  auto res = posttrain(ck, tc);
  save_checkpoint(res.checkpoint, out);
  CommandResult r;
  r.summary = {{"config", train_config_to_json(tc)},
               {"backbone", backbone},
               {"initial_loss", res.initial_loss},
               {"final_loss", res.final_loss},
               {"seconds", seconds_since(t0)},
               {"checkpoint", out}};
  r.files = {out, tc.log_path};
  return r;
}

CommandResult cmd_probe(const ExperimentConfig& c) {
  c.validate(false);
  auto x = load_matrix(c);
  auto p = run_probe(x, c.task, c.probe, c.solver.k, c.solver.l);
  CommandResult r;
  json pj = probe_to_json(p.probe);
  std::string path = c.output + ".probe.json";
  write_text(path, pj.dump(1) + "\n");
  r.files.push_back(path);
  r.summary = {{"config", config_to_json(c)}, {"n", x.dim()}, {"probe", probe_summary(p)}, {"file", path}};
  if (c.task != Task::eigen) {
    auto [lo, hi] = probe_system_interval(p);
    r.summary["interval"] = {lo, hi};
  } else {
    auto iv = probe_filter_interval(p, c.solver.k);
    r.summary["filter_interval"] = {iv.a, iv.b};
  }
  return r;
}

CommandResult cmd_solve(const ExperimentConfig& c) {
  c.validate();
  if (c.task != Task::linsolve) throw ConfigError("solve: task must be linsolve");
  auto x = load_matrix(c);
  auto t0 = std::chrono::steady_clock::now();
  auto d = build_deployment(x, c);
  PcgConfig pc;
  pc.tol = c.solver.tol;
  pc.max_iters = c.solver.max_iters;
  if (d.schedule) pc.probe_interval = probe_system_interval(d.probe);
  auto res = pcg(x, rhs_vector(x.dim(), c.seed), d.schedule ? &*d.schedule : nullptr, pc);
  double secs = seconds_since(t0);
  json cj = config_to_json(c);
  CommandResult r;
  r.converged = res.report.converged;
  std::string csv = c.output + ".solve.csv", js = c.output + ".solve.json";
  write_text(csv, with_header(trace_body(res.report, "relative_residual"), cj, secs));
  r.summary = {{"config", cj},
               {"n", x.dim()},
               {"source", d.source},
               {"iterations", res.report.iterations},
               {"converged", res.report.converged},
               {"relative_residual", res.report.history.back()},
               {"matvecs", res.report.matvecs},
               {"probe", probe_summary(d.probe)},
               {"preconditioner_rejected", res.report.preconditioner_rejected},
               {"seconds", secs}};
  write_text(js, r.summary.dump(1) + "\n");
  r.files = {csv, js};
  return r;
}

CommandResult cmd_eig(const ExperimentConfig& c) {
  c.validate();
  if (c.task != Task::eigen) throw ConfigError("eig: task must be eigen");
  if (!c.baseline.empty() && parse_baseline_spec(c.baseline).kind == "none")
    throw ConfigError("eig: a filter is required");
  auto x = load_matrix(c);
  auto t0 = std::chrono::steady_clock::now();
  auto d = build_deployment(x, c);
  EigConfig ec;
  ec.tol = c.solver.tol;
  ec.max_outer = c.solver.max_iters;
  ec.sigma = d.probe.sigma;
  ec.seed = c.seed;
  auto res = filtered_eigensolve(x, c.solver.k, c.solver.l, *d.schedule, ec);
  double secs = seconds_since(t0);
  json cj = config_to_json(c);
  CommandResult r;
  r.converged = res.report.converged;
  std::string csv = c.output + ".eig.csv", js = c.output + ".eig.json";
  write_text(csv, with_header(trace_body(res.report, "eigenvalue_error"), cj, secs));
  Vector targets(res.values.begin(), res.values.begin() + std::min(c.solver.k, res.values.size()));
  r.summary = {{"config", cj},
               {"n", x.dim()},
               {"source", d.source},
               {"outer_iterations", res.report.iterations},
               {"converged", res.report.converged},
               {"note", res.report.note},
               {"eigenvalues", targets},
               {"matvecs", res.report.matvecs},
               {"probe", probe_summary(d.probe)},
               {"seconds", secs}};
  write_text(js, r.summary.dump(1) + "\n");
  r.files = {csv, js};
  return r;
}

CommandResult cmd_invsqrt(const ExperimentConfig& c) {
  c.validate();
  if (c.task != Task::matfunc) throw ConfigError("invsqrt: task must be matfunc");
  auto x = load_matrix(c);
  auto t0 = std::chrono::steady_clock::now();
  auto d = build_deployment(x, c);
  if (!d.schedule) throw ConfigError("invsqrt: a schedule is required");
  WhiteningConfig wc;
  wc.seed = c.seed;
  double res = whitening_residual(x, *d.schedule, wc);
  double secs = seconds_since(t0);
  CommandResult r;
  r.summary = {{"config", config_to_json(c)},
               {"n", x.dim()},
               {"source", d.source},
               {"whitening_residual", res},
               {"probe", probe_summary(d.probe)},
               {"seconds", secs}};
  std::string js = c.output + ".invsqrt.json";
  write_text(js, r.summary.dump(1) + "\n");
  r.files = {js};
  return r;
}

CommandResult cmd_minimax(const std::string& schedule_path, const MinimaxGrid& grid, const std::string& out) {
  CoefficientSchedule s;
  try {
    s = schedule_from_json(read_json(schedule_path));
  } catch (const json::exception& e) {
    throw ConfigError(schedule_path + ": " + e.what());
  }
  auto rep = minimax_gap(s, grid);
  CommandResult r;
  r.summary = minimax_to_json(rep);
  r.summary["schedule"] = schedule_path;
  std::string js = out + ".minimax.json";
  write_text(js, r.summary.dump(1) + "\n");
  r.files = {js};
  return r;
}

CommandResult cmd_bench(const std::vector<std::string>& matrices, const ExperimentConfig& c) {
  if (matrices.empty()) throw ConfigError("bench: no matrices");
  if (c.task == Task::matfunc) throw ConfigError("bench: task must be linsolve or eigen");
  int degree = c.task == Task::linsolve ? 11 : 21;
  if (!c.baseline.empty()) {
    auto b = parse_baseline_spec(c.baseline);
    if (b.degree > 0) degree = b.degree;
  }
  std::vector<std::pair<std::string, std::string>> methods;  // (label, baseline or engine)
  if (c.task == Task::linsolve) methods = {{"none", "none"}, {"cheb", "cheb:" + std::to_string(degree)}};
  else methods = {{"power", "power:" + std::to_string(degree)}, {"cheb", "cheb:" + std::to_string(degree)}};
  if (!c.engine.empty()) methods.push_back({"learned", c.engine});

  auto t0 = std::chrono::steady_clock::now();
  std::ostringstream body;
  body << "matrix,n,method,iterations,converged,matvecs,probe_matvecs\n";
  CommandResult r;
  r.summary = {{"config", config_to_json(c)}, {"rows", json::array()}};
  for (const auto& m : matrices) {
    ExperimentConfig mc = c;
    mc.matrix = m;
    mc.generator.clear();
    if (m.rfind("gen:", 0) == 0) mc.matrix.clear(), mc.generator = m.substr(4);
    auto x = load_matrix(mc);
    for (const auto& [label, src] : methods) {
      mc.engine = label == "learned" ? src : "";
      mc.baseline = label == "learned" ? "" : src;
      auto d = build_deployment(x, mc);
      std::size_t iters = 0, mv = 0;
      bool conv = false;
      if (c.task == Task::linsolve) {
        PcgConfig pc;
        pc.tol = c.solver.tol;
        pc.max_iters = c.solver.max_iters;
        if (d.schedule) pc.probe_interval = probe_system_interval(d.probe);
        auto res = pcg(x, rhs_vector(x.dim(), c.seed), d.schedule ? &*d.schedule : nullptr, pc);
        iters = res.report.iterations, mv = res.report.matvecs, conv = res.report.converged;
      } else {
        EigConfig ec;
        ec.tol = c.solver.tol;
        ec.max_outer = c.solver.max_iters;
        ec.sigma = d.probe.sigma;
        ec.seed = c.seed;
        auto res = filtered_eigensolve(x, c.solver.k, c.solver.l, *d.schedule, ec);
        iters = res.report.iterations, mv = res.report.matvecs, conv = res.report.converged;
      }
      r.converged = r.converged && conv;
      body << m << ',' << x.dim() << ',' << label << ',' << iters << ',' << (conv ? 1 : 0) << ',' << mv << ','
           << d.probe.matvecs << '\n';
      r.summary["rows"].push_back({{"matrix", m}, {"method", label}, {"iterations", iters}, {"converged", conv}});
    }
  }
  double secs = seconds_since(t0);
  std::string csv = c.output + ".bench.csv";
  write_text(csv, with_header(body.str(), config_to_json(c), secs));
  r.files = {csv};
  r.summary["seconds"] = secs;
  return r;
}

}  // namespace polyrec
