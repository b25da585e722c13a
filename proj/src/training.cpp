#include "polyrec/training.hpp"

#include <algorithm>
#include <boost/random/sobol.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "polyrec/baselines.hpp"
#include "polyrec/probes.hpp"

namespace polyrec {

using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  // splitmix64 over a simple combination
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL) * 0xBF58476D1CE4E5B9ULL ^ c * 0x94D049BB133111EBULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::size_t sobol_dims = 12;
constexpr std::uint64_t attempt_stride = 1ULL << 20;

std::array<double, sobol_dims> sobol_point(std::uint64_t index) {
  boost::random::sobol gen(sobol_dims);
  gen.seed(index);
  std::array<double, sobol_dims> u;
  for (auto& x : u) x = std::ldexp(static_cast<double>(gen()), -64);
  return u;
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

double richardson_of(const Vector& lambda) {
  auto [lo, hi] = std::minmax_element(lambda.begin(), lambda.end());
  return richardson_rate(*lo, *hi);
}

}  // namespace

Vector spectrum_from_shape(const ShapeParams& s, Task task, std::uint64_t noise_seed) {
  if (s.n < 2) throw std::invalid_argument("spectrum_from_shape: n must be >= 2");
  std::size_t n = s.n;
  Vector f(n);
  for (std::size_t i = 0; i < n; ++i) {
    double t = double(i) / double(n - 1);
    f[i] = s.w_flat + s.w_exp * std::exp(-s.exp_rate * t) + s.w_pow * std::pow(double(i + 1), -s.pow_exp);
  }
  Vector lam(n);
  if (task == Task::eigen) {
    for (std::size_t i = 0; i < n; ++i) lam[i] = std::pow(f[i] / f[0], s.concavity);
  } else {
    // log-normalized profile g in [0,1], mapped onto [1/cond, 1]
    double span = std::log(f[0] / f[n - 1]);
    for (std::size_t i = 0; i < n; ++i) {
      double g = span > 1e-12 ? std::log(f[i] / f[n - 1]) / span : 1.0;
      lam[i] = std::pow(s.cond, -(1.0 - std::pow(g, s.concavity)));
    }
  }
  if (s.noise > 0.0) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> g;
    for (auto& v : lam) v *= std::exp(s.noise * g(rng));
  }
  std::size_t tail = static_cast<std::size_t>(s.tail_frac * n);
  for (std::size_t i = n - tail; i < n; ++i) lam[i] *= s.tail_factor;
  std::sort(lam.begin(), lam.end(), std::greater<>());
  double top = lam[0];
  for (auto& v : lam) v /= top;
  return lam;
}

SyntheticSpectrum generate_spectrum(std::size_t sobol_index, Task task, const GeneratorConfig& cfg) {
  if (cfg.n_min < 2 || cfg.n_max < cfg.n_min) throw std::invalid_argument("generator: bad n range");
  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    // point 0 of the sequence is all zeros, so start at 1
    auto u = sobol_point(1 + sobol_index + attempt * attempt_stride);
    ShapeParams s;
    s.n = cfg.n_min + std::min<std::size_t>(cfg.n_max - cfg.n_min, static_cast<std::size_t>(u[0] * (cfg.n_max - cfg.n_min + 1)));
    double wsum = u[1] + u[2] + u[3];
    if (wsum <= 0) wsum = 1, u[1] = 1;
    s.w_flat = u[1] / wsum;
    s.w_exp = u[2] / wsum;
    s.w_pow = u[3] / wsum;
    bool eig = task == Task::eigen;
    s.exp_rate = u[4] * (eig ? cfg.eigen_exp_rate_max : cfg.exp_rate_max);
    s.pow_exp = u[5] * (eig ? cfg.eigen_pow_exp_max : cfg.pow_exp_max);
    s.concavity = lerp(cfg.concavity_min, cfg.concavity_max, u[6]);
    s.noise = u[7] * cfg.noise_max;
    s.tail_frac = u[8] * cfg.tail_frac_max;
    s.tail_factor = lerp(cfg.tail_factor_min, 1.0, u[9]);
    s.cond = eig ? 1.0 : std::exp(lerp(std::log(cfg.cond_min), std::log(cfg.cond_max), u[10]));
    s.final_scale = lerp(cfg.scale_min, cfg.scale_max, u[11]);

    Vector lam = spectrum_from_shape(s, task, mix(cfg.seed, sobol_index, attempt));
    if (std::abs(lam[0] - 1.0) > 1e-12) continue;
    double cond = lam.front() / lam.back();
    if (eig) {
      if (lam[1] / lam[0] < cfg.eigen_ratio) continue;
    } else if (cond < cfg.cond_min || cond > cfg.cond_max) {
      continue;
    }
    for (auto& v : lam) v *= s.final_scale;

    SyntheticSpectrum out;
    out.shape = s;
    out.cond = cond;
    out.index = sobol_index;
    out.attempts = attempt + 1;
    if (task == Task::matfunc) {
      std::mt19937_64 rng(mix(cfg.seed, sobol_index, 0xA06));
      std::uniform_real_distribution<double> ud(lam.back(), lam.front());
      out.augmented = lam;
      for (std::size_t i = 0; i < cfg.augment * lam.size(); ++i) out.augmented.push_back(ud(rng));
    }
    out.lambda = std::move(lam);
    return out;
  }
  throw RejectionBudgetExhausted("generate_spectrum: no admissible spectrum after " +
                                 std::to_string(cfg.max_attempts) + " attempts (index " +
                                 std::to_string(sobol_index) + ")");
}

std::vector<SyntheticSpectrum> generate_dataset(std::size_t count, Task task, const GeneratorConfig& cfg,
                                                std::size_t first_index) {
  std::vector<SyntheticSpectrum> ds;
  ds.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ds.push_back(generate_spectrum(first_index + i, task, cfg));
  return ds;
}

namespace {
json shape_json(const ShapeParams& s) {
  return {{"n", s.n}, {"w_flat", s.w_flat}, {"w_exp", s.w_exp}, {"w_pow", s.w_pow}, {"exp_rate", s.exp_rate},
          {"pow_exp", s.pow_exp}, {"concavity", s.concavity}, {"noise", s.noise}, {"tail_frac", s.tail_frac},
          {"tail_factor", s.tail_factor}, {"cond", s.cond}, {"final_scale", s.final_scale}};
}

ShapeParams shape_from(const json& j) {
  ShapeParams s;
  s.n = j.at("n");
  s.w_flat = j.at("w_flat");
  s.w_exp = j.at("w_exp");
  s.w_pow = j.at("w_pow");
  s.exp_rate = j.at("exp_rate");
  s.pow_exp = j.at("pow_exp");
  s.concavity = j.at("concavity");
  s.noise = j.at("noise");
  s.tail_frac = j.at("tail_frac");
  s.tail_factor = j.at("tail_factor");
  s.cond = j.at("cond");
  s.final_scale = j.at("final_scale");
  return s;
}

json generator_json(const GeneratorConfig& g) {
  return {{"n_min", g.n_min}, {"n_max", g.n_max}, {"exp_rate_max", g.exp_rate_max}, {"pow_exp_max", g.pow_exp_max},
          {"eigen_exp_rate_max", g.eigen_exp_rate_max}, {"eigen_pow_exp_max", g.eigen_pow_exp_max},
          {"concavity_min", g.concavity_min}, {"concavity_max", g.concavity_max}, {"noise_max", g.noise_max},
          {"tail_frac_max", g.tail_frac_max}, {"tail_factor_min", g.tail_factor_min}, {"cond_min", g.cond_min},
          {"cond_max", g.cond_max}, {"eigen_ratio", g.eigen_ratio}, {"scale_min", g.scale_min},
          {"scale_max", g.scale_max}, {"augment", g.augment}, {"max_attempts", g.max_attempts}, {"seed", g.seed}};
}

GeneratorConfig generator_from(const json& j, GeneratorConfig g) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_min", g.n_min);
  get("n_max", g.n_max);
  get("exp_rate_max", g.exp_rate_max);
  get("pow_exp_max", g.pow_exp_max);
  get("eigen_exp_rate_max", g.eigen_exp_rate_max);
  get("eigen_pow_exp_max", g.eigen_pow_exp_max);
  get("concavity_min", g.concavity_min);
  get("concavity_max", g.concavity_max);
  get("noise_max", g.noise_max);
  get("tail_frac_max", g.tail_frac_max);
  get("tail_factor_min", g.tail_factor_min);
  get("cond_min", g.cond_min);
  get("cond_max", g.cond_max);
  get("eigen_ratio", g.eigen_ratio);
  get("scale_min", g.scale_min);
  get("scale_max", g.scale_max);
  get("augment", g.augment);
  get("max_attempts", g.max_attempts);
  get("seed", g.seed);
  return g;
}
}  // namespace

json dataset_to_json(const std::vector<SyntheticSpectrum>& ds, Task task, const GeneratorConfig& cfg) {
  json items = json::array();
  for (const auto& s : ds)
    items.push_back({{"index", s.index}, {"attempts", s.attempts}, {"cond", s.cond}, {"shape", shape_json(s.shape)},
                     {"lambda", s.lambda}, {"augmented", s.augmented}});
  return {{"task", task_name(task)}, {"generator", generator_json(cfg)}, {"spectra", items}};
}

std::vector<SyntheticSpectrum> dataset_from_json(const json& j) {
  std::vector<SyntheticSpectrum> ds;
  for (const auto& it : j.at("spectra")) {
    SyntheticSpectrum s;
    s.index = it.at("index");
    s.attempts = it.value("attempts", std::size_t{1});
    s.cond = it.at("cond");
    s.shape = shape_from(it.at("shape"));
    s.lambda = it.at("lambda").get<Vector>();
    s.augmented = it.value("augmented", Vector{});
    ds.push_back(std::move(s));
  }
  return ds;
}

// ---- metrics ----

double metric_eigen(const Vector& p, std::size_t k, std::size_t l) {
  if (k == 0 || k > p.size()) throw std::invalid_argument("metric_eigen: need 1 <= k <= m");
  if (l > p.size()) throw std::invalid_argument("metric_eigen: l > m");
  Vector a(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) a[i] = std::abs(p[i]);
  double num = *std::min_element(a.begin(), a.begin() + k);
  Vector sorted = a;
  std::nth_element(sorted.begin(), sorted.begin() + (l - 1), sorted.end(), std::greater<>());
  return num / sorted[l - 1];
}

double metric_linsolve(const Vector& p, const Vector& lambda) {
  if (p.size() != lambda.size()) throw DimensionError("metric_linsolve: length mismatch");
  double m = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(lambda[i] > 0)) throw std::invalid_argument("metric_linsolve: eigenvalues must be positive");
    m = std::max(m, std::abs(p[i] * lambda[i]));
  }
  if (m == 0) throw std::invalid_argument("metric_linsolve: P(lambda) lambda vanishes everywhere");
  double r = 0;
  for (std::size_t i = 0; i < p.size(); ++i) r = std::max(r, std::abs(1.0 - p[i] * lambda[i] / m));
  return r;
}

double metric_matfunc(const Vector& p, const Vector& lam) {
  if (p.size() != lam.size()) throw DimensionError("metric_matfunc: length mismatch");
  double r = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(lam[i] > 0)) throw std::invalid_argument("metric_matfunc: nonpositive eigenvalue");
    r = std::max(r, std::abs(1.0 - p[i] * std::sqrt(lam[i])));
  }
  return r;
}

std::optional<double> rho_log(double r_model, double r_baseline) {
  if (!(r_model > 0) || !(r_baseline > 0)) throw std::invalid_argument("rho_log: metrics must be positive");
  double lb = std::log(r_baseline);
  if (lb == 0.0) return std::nullopt;
  return std::log(r_model) / lb;
}

double neumann_rate(const Vector& lambda, int degree) {
  auto c = neumann_invsqrt(degree);
  Vector t(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i) t[i] = horner(c, lambda[i]);
  return metric_matfunc(t, lambda);
}

std::optional<double> schedule_rho_log(Task task, const CoefficientSchedule& s, const SyntheticSpectrum& sp,
                                       std::size_t k, std::size_t l) {
  int d = s.degree();
  const Vector& lam = sp.lambda;
  switch (task) {
    case Task::eigen: {
      double r = metric_eigen(evaluate_polynomial(s, lam), k, l);
      double base = metric_eigen(lam, k, l);
      auto rho = rho_log(r, base);
      if (!rho) return std::nullopt;
      return *rho / d;
    }
    case Task::linsolve: {
      double r = metric_linsolve(evaluate_polynomial(s, lam), lam);
      if (r == 0) return std::numeric_limits<double>::infinity();
      auto rho = rho_log(r, richardson_of(lam));
      if (!rho) return std::nullopt;
      return *rho / d;
    }
    case Task::matfunc: {
      const Vector& aug = sp.augmented.empty() ? lam : sp.augmented;
      double r = metric_matfunc(evaluate_polynomial(s, aug), aug);
      if (r == 0) return std::numeric_limits<double>::infinity();
      return rho_log(r, neumann_rate(lam, d));
    }
  }
  return std::nullopt;
}

Vector anchor_weights(std::size_t t, std::size_t total, std::size_t layers) {
  if (total == 0 || layers == 0) throw std::invalid_argument("anchor_weights: T and D must be >= 1");
  long s = std::lround(double(t) * double(layers) / double(total));
  s = std::clamp<long>(s, 1, static_cast<long>(layers));
  Vector w(layers);
  double sum = 0;
  for (std::size_t k = 1; k <= layers; ++k) {
    long diff = static_cast<long>(k) - s;
    w[k - 1] = diff == 0 ? 1.0 : 1.0 / double(diff * diff);
    sum += w[k - 1];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// ---- tape losses ----

TapeSchedule schedule_vars(ad::Var flat, int degree) {
  if (flat.size() != static_cast<std::size_t>(5 * degree)) throw DimensionError("schedule_vars: need 5d values");
  TapeSchedule s;
  for (int k = 0; k < degree; ++k)
    s.push_back({ad::element(flat, 5 * k), ad::element(flat, 5 * k + 1), ad::element(flat, 5 * k + 2),
                 ad::element(flat, 5 * k + 3), ad::element(flat, 5 * k + 4)});
  return s;
}

TapeRun recurrence_tape(const TapeSchedule& s, const Vector& lambda) {
  if (s.empty()) throw std::invalid_argument("recurrence_tape: empty schedule");
  ad::Tape& t = *s[0][0].tape;
  ad::Var lam = t.constant(lambda);
  ad::Var A = t.constant(Vector(lambda.size(), 1.0)), B = A, C = lam;
  ad::Var ls = t.constant(0.0);
  TapeRun run;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto& c = s[k];
    ad::Var Cn = c[1] * A + c[2] * B + c[3] * C + c[4] * (lam * C);
    run.prefix.push_back(Cn);
    run.log_scale.push_back(ls);
    if (k + 1 == s.size()) break;
    ad::Var An = A + c[0] * C;
    ad::Var norm = ad::max_reduce(ad::abs(ad::concat({An, C, Cn})));
    if (norm.scalar() == 0.0) throw StateCollapse("recurrence_tape: state collapsed to zero");
    if (!std::isfinite(norm.scalar())) throw NumericalError("recurrence_tape: non-finite state");
    A = An / norm;
    B = C / norm;
    C = Cn / norm;
    ls = ls + ad::log(norm);
  }
  return run;
}

namespace {
constexpr double tiny = 1e-300;

// clamp(num / log r, eps) with log r >= 0 sent straight to eps
ad::Var ratio_objective(ad::Tape& t, double num, ad::Var r, double eps) {
  if (r.scalar() >= 1.0) return t.constant(eps);
  ad::Var lr = ad::log(ad::clamp_below(r, tiny));
  return ad::clamp_below(t.constant(num) / lr, eps);
}
}  // namespace

LossTerms eigen_sample_loss(const TapeRun& run, const Vector& lambda, const Vector& weights, const LossConfig& cfg) {
  if (weights.size() != run.prefix.size()) throw DimensionError("eigen_sample_loss: one weight per layer");
  ad::Tape& t = *run.prefix[0].tape;
  double log_sub = std::log(metric_eigen(lambda, cfg.k, cfg.l));
  LossTerms out;
  ad::Var total = t.constant(0.0);
  for (std::size_t j = 0; j < run.prefix.size(); ++j) {
    ad::Var a = ad::abs(run.prefix[j]);
    ad::Var r = ad::min_reduce(ad::slice(a, 0, cfg.k)) / ad::kth_largest(a, cfg.l);
    ad::Var lr = ad::log(ad::clamp_below(r, tiny));
    ad::Var obj = t.constant(double(j + 1) * log_sub) / ad::clamp_below(lr, cfg.eps);
    ad::Var reg = 10.0 * ad::exp(ad::add_scalar(ad::scale(r, -10.0), -cfg.eps));
    ad::Var layer = obj + reg;
    out.per_layer.push_back(layer.scalar());
    out.obj += weights[j] * obj.scalar();
    out.reg += weights[j] * reg.scalar();
    total = total + weights[j] * layer;
  }
  out.total = total;
  return out;
}

LossTerms linsolve_sample_loss(const TapeRun& run, const Vector& lambda, const LossConfig& cfg) {
  ad::Var P = run.prefix.back();
  ad::Tape& t = *P.tape;
  int d = static_cast<int>(run.prefix.size());
  ad::Var pl = P * t.constant(lambda);
  ad::Var ratio = pl / ad::max_reduce(ad::abs(pl));
  ad::Var r = ad::max_reduce(ad::abs(ad::add_scalar(-ratio, 1.0)));
  double num = d * std::log(richardson_of(lambda));
  ad::Var obj = ratio_objective(t, num, r, cfg.eps);
  LossTerms out;
  ad::Var aP = ad::abs(P);
  ad::Var mn = ad::min_reduce(aP);
  if (mn.scalar() == 0.0) {
    out.skipped = true;
    out.total = t.constant(0.0);
    return out;
  }
  ad::Var st = cfg.structural_weight(d) * (ad::max_reduce(aP) / mn);
  out.obj = obj.scalar();
  out.reg = r.scalar();
  out.structural = st.scalar();
  out.total = obj + r + st;
  return out;
}

LossTerms matfunc_sample_loss(const TapeRun& run, const Vector& lambda, const Vector& lambda_aug,
                              const LossConfig& cfg) {
  ad::Var P = run.prefix.back() * ad::exp(run.log_scale.back());
  ad::Tape& t = *P.tape;
  int d = static_cast<int>(run.prefix.size());
  Vector sq(lambda_aug.size());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = std::sqrt(lambda_aug[i]);
  ad::Var r = ad::max_reduce(ad::abs(ad::add_scalar(-(P * t.constant(sq)), 1.0)));
  double num = std::log(neumann_rate(lambda, d));
  ad::Var obj = ratio_objective(t, num, r, cfg.eps);
  LossTerms out;
  out.obj = obj.scalar();
  out.reg = r.scalar();
  out.total = obj + r;
  return out;
}

namespace {
Vector flatten(const CoefficientSchedule& s) {
  Vector f;
  for (const auto& st : s.steps) {
    auto a = st.as_array();
    f.insert(f.end(), a.begin(), a.end());
  }
  return f;
}

template <class F>
double batch_mean(std::size_t n, F per_sample) {
  double sum = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ad::Tape t;
    LossTerms lt = per_sample(t, i);
    if (lt.skipped) {
      std::cerr << "warning: sample " << i << " skipped (min |P| = 0)\n";
      continue;
    }
    sum += lt.total.scalar();
    ++used;
  }
  return used ? sum / used : std::numeric_limits<double>::quiet_NaN();
}
}  // namespace

double loss_eigen(const std::vector<Vector>& spectra, const std::vector<CoefficientSchedule>& schedules,
                  const Vector& weights, const LossConfig& cfg) {
  if (spectra.size() != schedules.size()) throw DimensionError("loss_eigen: one schedule per spectrum");
  return batch_mean(spectra.size(), [&](ad::Tape& t, std::size_t i) {
    auto run = recurrence_tape(schedule_vars(t.constant(flatten(schedules[i])), schedules[i].degree()), spectra[i]);
    return eigen_sample_loss(run, spectra[i], weights, cfg);
  });
}

double loss_linsolve(const std::vector<Vector>& spectra, const std::vector<CoefficientSchedule>& schedules,
                     const LossConfig& cfg) {
  if (spectra.size() != schedules.size()) throw DimensionError("loss_linsolve: one schedule per spectrum");
  return batch_mean(spectra.size(), [&](ad::Tape& t, std::size_t i) {
    auto run = recurrence_tape(schedule_vars(t.constant(flatten(schedules[i])), schedules[i].degree()), spectra[i]);
    return linsolve_sample_loss(run, spectra[i], cfg);
  });
}

double loss_matfunc(const std::vector<Vector>& spectra, const std::vector<Vector>& augmented,
                    const std::vector<CoefficientSchedule>& schedules, const LossConfig& cfg) {
  if (spectra.size() != schedules.size() || augmented.size() != spectra.size())
    throw DimensionError("loss_matfunc: one schedule and augmentation per spectrum");
  return batch_mean(spectra.size(), [&](ad::Tape& t, std::size_t i) {
    auto run = recurrence_tape(schedule_vars(t.constant(flatten(schedules[i])), schedules[i].degree()), augmented[i]);
    return matfunc_sample_loss(run, spectra[i], augmented[i], cfg);
  });
}

// ---- optimizer ----

double learning_rate(std::size_t step, std::size_t total, const AdamWConfig& cfg) {
  if (total == 0) return 0.0;
  double warm = std::max(1.0, cfg.warmup_frac * double(total));
  double s = double(step);
  if (s <= warm) return cfg.lr * s / warm;
  double progress = (s - warm) / std::max(1.0, double(total) - warm);
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, progress)));
}

void optimizer_step(Vector& params, const Vector& grads, AdamWState& st, std::size_t step, std::size_t total,
                    const AdamWConfig& cfg) {
  if (grads.size() != params.size()) throw DimensionError("optimizer_step: gradient length mismatch");
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  double lr = learning_rate(step, total, cfg);
  double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1 - cfg.beta1) * grads[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1 - cfg.beta2) * grads[i] * grads[i];
    double mh = st.m[i] / bc1, vh = st.v[i] / bc2;
    params[i] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * params[i]);
  }
}

// ---- config ----

json train_config_to_json(const TrainConfig& c) {
  json j = {{"task", task_name(c.task)},
            {"degree", c.degree},
            {"samples", c.samples},
            {"epochs", c.epochs},
            {"batch", c.batch},
            {"lr", c.adam.lr},
            {"weight_decay", c.adam.weight_decay},
            {"warmup_frac", c.adam.warmup_frac},
            {"eps", c.loss.eps},
            {"k", c.loss.k},
            {"l", c.loss.l},
            {"structural_c", c.loss.structural_weight(c.degree)},
            {"linsolve_margin", c.init.linsolve_margin},
            {"linsolve_ratio", c.init.linsolve_ratio},
            {"seed", c.seed},
            {"extend_freeze_epochs", c.extend_freeze_epochs},
            {"probe_l_min", c.probe_l_min},
            {"probe_l_max", c.probe_l_max},
            {"probe_iters_min", c.probe_iters_min},
            {"probe_iters_max", c.probe_iters_max},
            {"generator", generator_json(c.gen)}};
  return j;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
  get("degree", c.degree);
  get("samples", c.samples);
  get("epochs", c.epochs);
  get("batch", c.batch);
  get("lr", c.adam.lr);
  get("weight_decay", c.adam.weight_decay);
  get("warmup_frac", c.adam.warmup_frac);
  get("eps", c.loss.eps);
  get("k", c.loss.k);
  get("l", c.loss.l);
  if (j.contains("structural_c")) c.loss.structural_c = j.at("structural_c").get<double>();
  get("linsolve_margin", c.init.linsolve_margin);
  get("linsolve_ratio", c.init.linsolve_ratio);
  get("seed", c.seed);
  get("extend_freeze_epochs", c.extend_freeze_epochs);
  get("probe_l_min", c.probe_l_min);
  get("probe_l_max", c.probe_l_max);
  get("probe_iters_min", c.probe_iters_min);
  get("probe_iters_max", c.probe_iters_max);
  get("log_path", c.log_path);
  if (j.contains("generator")) c.gen = generator_from(j.at("generator"), c.gen);
  if (c.degree < 1 || c.samples == 0 || c.epochs == 0 || c.batch == 0)
    throw std::invalid_argument("train config: degree, samples, epochs and batch must be positive");
  if (!(c.loss.eps > 0)) throw std::invalid_argument("train config: eps must be positive");
  return c;
}

// ---- training loops ----

namespace {

struct SampleView {
  const Vector* lambda;
  const Vector* eval;  // augmented for matfunc
};

SampleView view(const SyntheticSpectrum& s, Task task) {
  return {&s.lambda, task == Task::matfunc && !s.augmented.empty() ? &s.augmented : &s.lambda};
}

LossTerms task_loss(Task task, const TapeSchedule& sched, const SampleView& v, const Vector& weights,
                    const LossConfig& cfg) {
  auto run = recurrence_tape(sched, *v.eval);
  switch (task) {
    case Task::eigen: return eigen_sample_loss(run, *v.lambda, weights, cfg);
    case Task::linsolve: return linsolve_sample_loss(run, *v.lambda, cfg);
    case Task::matfunc: return matfunc_sample_loss(run, *v.lambda, *v.eval, cfg);
  }
  throw std::logic_error("task_loss");
}

struct BatchResult {
  double loss = 0, obj = 0, reg = 0, structural = 0;
  Vector grad;
  Vector per_layer;
  std::size_t used = 0, skipped = 0;
};

// Generic driver: `build` puts one sample's schedule on the tape given the parameter leaf.
template <class Build>
BatchResult run_batch(Task task, const std::vector<std::size_t>& idx, const Vector& params, const Vector& weights,
                      const LossConfig& cfg, bool want_grad, Build build) {
  BatchResult br;
  br.grad.assign(want_grad ? params.size() : 0, 0.0);
  br.per_layer.assign(weights.size(), 0.0);
  for (std::size_t i : idx) {
    ad::Tape t;
    ad::Var p = t.leaf(params);
    LossTerms lt;
    try {
      auto [sched, v] = build(t, p, i);
      lt = task_loss(task, sched, v, weights, cfg);
    } catch (const StateCollapse&) {
      ++br.skipped;
      continue;
    }
    if (lt.skipped) {
      ++br.skipped;
      continue;
    }
    br.loss += lt.total.scalar();
    br.obj += lt.obj;
    br.reg += lt.reg;
    br.structural += lt.structural;
    for (std::size_t j = 0; j < lt.per_layer.size(); ++j) br.per_layer[j] += lt.per_layer[j];
    ++br.used;
    if (want_grad) {
      t.backward(lt.total);
      Vector g = t.grad(p);
      for (std::size_t j = 0; j < g.size(); ++j) br.grad[j] += g[j];
    }
  }
  if (br.used) {
    double inv = 1.0 / br.used;
    br.loss *= inv;
    br.obj *= inv;
    br.reg *= inv;
    br.structural *= inv;
    for (auto& g : br.grad) g *= inv;
    for (auto& v : br.per_layer) v *= inv;
  } else {
    br.loss = std::numeric_limits<double>::quiet_NaN();
  }
  return br;
}

class CsvLog {
public:
  CsvLog(const std::string& path, int degree, bool per_layer) {
    if (path.empty()) return;
    out_.open(path);
    if (!out_) throw std::ios_base::failure("cannot write training log " + path);
    out_ << "step,epoch,lr,loss,obj,reg,struct";
    if (per_layer)
      for (int k = 1; k <= degree; ++k) out_ << ",L" << k;
    out_ << '\n';
    out_ << std::setprecision(10);
  }
  void row(std::size_t step, std::size_t epoch, double lr, const BatchResult& b) {
    if (!out_.is_open()) return;
    out_ << step << ',' << epoch << ',' << lr << ',' << b.loss << ',' << b.obj << ',' << b.reg << ',' << b.structural;
    if (b.per_layer.size() > 1 || !b.per_layer.empty())
      for (double v : b.per_layer) out_ << ',' << v;
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

template <class Build, class Commit>
TrainResult train_loop(const TrainConfig& cfg, std::size_t n, Vector params, EngineCheckpoint ck, Build build,
                       Commit commit, const std::vector<bool>* frozen_until_freeze) {
  TrainResult res;
  const int d = ck.degree;
  const bool eigen = cfg.task == Task::eigen;
  std::size_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
  std::size_t total = per_epoch * cfg.epochs;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  // evaluation uses the end-of-training weights so the two numbers are comparable
  Vector final_w = eigen ? anchor_weights(total, total, d) : Vector{};

  auto evaluate = [&](const Vector& p) {
    return run_batch(cfg.task, all, p, final_w, cfg.loss, false, build).loss;
  };
  res.initial_loss = evaluate(params);
  if (!std::isfinite(res.initial_loss)) throw NumericalError("training: initial loss is not finite");

  CsvLog log(cfg.log_path, d, eigen);
  std::mt19937_64 rng(mix(cfg.seed, 0x5EED));
  AdamWState state;
  Vector last_good = params;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = all;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch) {
      ++step;
      std::vector<std::size_t> idx(order.begin() + b0, order.begin() + std::min(n, b0 + cfg.batch));
      Vector w = eigen ? anchor_weights(step, total, d) : Vector{};
      BatchResult br = run_batch(cfg.task, idx, params, w, cfg.loss, true, build);
      if (!std::isfinite(br.loss) || !all_finite(br.grad)) {
        commit(ck, last_good);
        throw TrainingDiverged("training diverged at step " + std::to_string(step), ck);
      }
      if (frozen_until_freeze && epoch < cfg.extend_freeze_epochs)
        for (std::size_t j = 0; j < br.grad.size(); ++j)
          if ((*frozen_until_freeze)[j]) br.grad[j] = 0.0;
      last_good = params;
      optimizer_step(params, br.grad, state, step, total, cfg.adam);
      // decoupled decay would still move frozen entries
      if (frozen_until_freeze && epoch < cfg.extend_freeze_epochs)
        for (std::size_t j = 0; j < params.size(); ++j)
          if ((*frozen_until_freeze)[j]) params[j] = last_good[j];
      log.row(step, epoch, learning_rate(step, total, cfg.adam), br);
      epoch_loss += br.loss;
      ++batches;
    }
    res.epoch_loss.push_back(epoch_loss / std::max<std::size_t>(1, batches));
    if (cfg.verbose)
      std::cerr << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << res.epoch_loss.back() << '\n';
  }
  res.final_loss = evaluate(params);
  if (!std::isfinite(res.final_loss)) {
    commit(ck, last_good);
    throw TrainingDiverged("training diverged: final loss is not finite", ck);
  }
  commit(ck, params);
  res.checkpoint = std::move(ck);
  return res;
}

}  // namespace

TrainResult pretrain(const TrainConfig& cfg) {
  return pretrain(cfg, generate_dataset(cfg.samples, cfg.task, cfg.gen));
}

TrainResult pretrain(const TrainConfig& cfg, const std::vector<SyntheticSpectrum>& data) {
  if (data.empty()) throw std::invalid_argument("pretrain: empty dataset");
  EngineCheckpoint ck = init_engine(cfg.task, cfg.degree, cfg.init);
  std::vector<bool> frozen;
  if (cfg.base) {
    const auto& b = *cfg.base;
    if (b.task != cfg.task || b.e_dim != ck.e_dim) throw std::invalid_argument("pretrain: base checkpoint task mismatch");
    if (b.degree > cfg.degree) throw std::invalid_argument("pretrain: base checkpoint deeper than target degree");
    std::copy(b.layers.begin(), b.layers.end(), ck.layers.begin());
    frozen.assign(ck.layers.size() * layer_param_count(ck.e_dim), false);
    std::fill(frozen.begin(), frozen.begin() + b.degree * layer_param_count(ck.e_dim), true);
  }
  ck.provenance = {{"stage", "pretrain"}, {"config", train_config_to_json(cfg)}, {"epochs", cfg.epochs},
                   {"seed", cfg.seed}, {"samples", data.size()}};
  if (cfg.base) ck.provenance["extended_from_degree"] = cfg.base->degree;

  std::vector<Vector> feats;
  for (const auto& s : data)
    feats.push_back(cfg.task == Task::eigen ? eigen_features(s.lambda, cfg.loss.k, cfg.loss.l)
                                            : extremal_features(s.lambda));
  const int d = cfg.degree;
  const std::size_t e_dim = ck.e_dim;
  auto build = [&](ad::Tape& t, ad::Var p, std::size_t i) {
    auto layers = backbone_forward_tape(p, t.constant(feats[i]), d, e_dim);
    return std::make_pair(TapeSchedule(layers.begin(), layers.end()), view(data[i], cfg.task));
  };
  auto commit = [](EngineCheckpoint& c, const Vector& p) { unpack_backbone(c, p); };
  return train_loop(cfg, data.size(), pack_backbone(ck), ck, build, commit, cfg.base ? &frozen : nullptr);
}

std::vector<ProbeSample> simulate_probes(const std::vector<SyntheticSpectrum>& data, Task task, const TrainConfig& cfg,
                                         std::uint64_t seed) {
  std::vector<ProbeSample> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::mt19937_64 rng(mix(seed, i, 0x9B0));
    const Vector& lam = data[i].lambda;
    std::size_t n = lam.size();
    std::size_t lmax = std::min(cfg.probe_l_max, n), lmin = std::min(cfg.probe_l_min, lmax);
    std::size_t l = std::uniform_int_distribution<std::size_t>(lmin, lmax)(rng);
    std::size_t it = std::uniform_int_distribution<std::size_t>(cfg.probe_iters_min, cfg.probe_iters_max)(rng);
    DiagonalOperator x(lam);
    ProbeSample ps;
    ps.spectrum = data[i];
    if (task == Task::eigen) {
      auto ritz = subspace_probe(x, std::max(l, cfg.loss.k), it, rng());
      ps.probe = assemble_eigen_probe(ritz, cfg.loss.k, 10, 104, rng());
    } else {
      auto top = subspace_probe(x, l, it, rng());
      double sigma = bottom_shift(x, rng());
      auto bottom = shifted_subspace_probe(x, l, it, sigma, rng());
      ps.probe = assemble_extremal_probe(top, &bottom, 20, task);
    }
    out.push_back(std::move(ps));
  }
  return out;
}

double mean_probe_rho(const EngineCheckpoint& ck, const std::vector<ProbeSample>& set, const LossConfig& cfg) {
  double sum = 0;
  std::size_t used = 0;
  for (const auto& ps : set) {
    try {
      auto s = engine_forward(ck, embed_probe(ck, ps.probe));
      auto rho = schedule_rho_log(ck.task, s, ps.spectrum, cfg.k, cfg.l);
      if (rho && std::isfinite(*rho)) {
        sum += *rho;
        ++used;
      }
    } catch (const NumericalError&) {
    }
  }
  return used ? sum / used : std::numeric_limits<double>::quiet_NaN();
}

TrainResult posttrain(const EngineCheckpoint& backbone, const TrainConfig& cfg) {
  auto data = generate_dataset(cfg.samples, backbone.task, cfg.gen);
  return posttrain(backbone, cfg, simulate_probes(data, backbone.task, cfg, mix(cfg.seed, 0x90)));
}

TrainResult posttrain(const EngineCheckpoint& backbone, const TrainConfig& cfg, const std::vector<ProbeSample>& data) {
  if (data.empty()) throw std::invalid_argument("posttrain: empty dataset");
  backbone.validate();
  if (backbone.task != cfg.task) throw std::invalid_argument("posttrain: task mismatch between config and backbone");
  EngineCheckpoint ck = backbone;
  if (std::holds_alternative<std::monostate>(ck.embedding)) ck.embedding = init_embedding(ck.task, cfg.init);
  if (ck.e_dim != task_e_dim(ck.task)) throw DimensionError("posttrain: probe/backbone e_dim mismatch");
  const std::uint64_t hash0 = backbone_hash(ck);
  ck.provenance["posttrain"] = {{"config", train_config_to_json(cfg)}, {"samples", data.size()}};

  const Vector bparams = pack_backbone(ck);
  const int d = ck.degree;
  const std::size_t e_dim = ck.e_dim;
  std::vector<std::pair<Vector, Vector>> inputs;
  for (const auto& ps : data) {
    if (ck.task == Task::eigen) {
      inputs.emplace_back(eigen_window_input(ps.probe), Vector{});
    } else {
      inputs.push_back(extremal_inputs(ps.probe, std::get<EmbeddingExtremal>(ck.embedding).k));
    }
  }
  const Embedding shape = ck.embedding;
  auto build = [&](ad::Tape& t, ad::Var p, std::size_t i) {
    ad::Var e = ck.task == Task::eigen
                    ? embed_eigen_tape(std::get<EmbeddingEigen>(shape), p, t.constant(inputs[i].first))
                    : embed_extremal_tape(std::get<EmbeddingExtremal>(shape), p, t.constant(inputs[i].first),
                                          t.constant(inputs[i].second));
    auto layers = backbone_forward_tape(t.constant(bparams), e, d, e_dim);
    return std::make_pair(TapeSchedule(layers.begin(), layers.end()), view(data[i].spectrum, cfg.task));
  };
  auto commit = [](EngineCheckpoint& c, const Vector& p) { unpack_embedding(c.embedding, p); };
  TrainResult res = train_loop(cfg, data.size(), pack_embedding(ck.embedding), ck, build, commit, nullptr);
  if (backbone_hash(res.checkpoint) != hash0) throw std::logic_error("posttrain: backbone changed");
  return res;
}

}  // namespace polyrec
