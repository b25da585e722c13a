#include "polyrec/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "polyrec/baselines.hpp"

namespace polyrec {

using nlohmann::json;

std::string task_name(Task t) {
  switch (t) {
    case Task::eigen: return "eigen";
    case Task::linsolve: return "linsolve";
    case Task::matfunc: return "matfunc";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  if (s == "eigen") return Task::eigen;
  if (s == "linsolve") return Task::linsolve;
  if (s == "matfunc") return Task::matfunc;
  throw std::invalid_argument("unknown task '" + s + "'");
}

std::size_t task_e_dim(Task t) { return t == Task::eigen ? 5 : 10; }

void SpectralProbe::validate() const {
  if (values.size() != residuals.size()) throw DimensionError("probe: values/residuals length mismatch");
  for (double r : residuals)
    if (!(r >= 0.0)) throw std::invalid_argument("probe: negative or NaN residual");
}

json probe_to_json(const SpectralProbe& p) {
  return {{"task", task_name(p.task)}, {"k", p.k}, {"l", p.l}, {"iterations", p.iterations},
          {"values", p.values}, {"residuals", p.residuals}};
}

SpectralProbe probe_from_json(const json& j) {
  SpectralProbe p;
  p.task = task_from_string(j.at("task").get<std::string>());
  p.k = j.value("k", std::size_t{0});
  p.l = j.value("l", std::size_t{0});
  p.iterations = j.value("iterations", std::size_t{0});
  p.values = j.at("values").get<Vector>();
  p.residuals = j.at("residuals").get<Vector>();
  p.validate();
  return p;
}

Vector matvec_t(const Weights& w, std::span<const double> x) {
  if (x.size() != w.rows) throw DimensionError("matvec_t: input length mismatch");
  Vector y(w.cols, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i)
    for (std::size_t j = 0; j < w.cols; ++j) y[j] += w(i, j) * x[i];
  return y;
}

EmbeddingEigen::EmbeddingEigen(std::size_t k0_, std::size_t l0_)
    : k0(k0_), l0(l0_), d_hid(4 * k0_ + 8), W1(2 * l0_, d_hid), W2(2 * l0_, d_hid), W3(d_hid, k0_), W4(d_hid, 4) {}

EmbeddingExtremal::EmbeddingExtremal(std::size_t k_)
    : k(k_), W1(2 * k_, 2 * k_), W2(2 * k_, 2 * k_), W3(2 * k_, 5), W4(2 * k_, 5) {}

void EngineCheckpoint::validate() const {
  if (degree < 1) throw std::invalid_argument("checkpoint: degree must be >= 1");
  if (layers.size() != static_cast<std::size_t>(degree))
    throw std::invalid_argument("checkpoint: layer count " + std::to_string(layers.size()) + " != degree " +
                                std::to_string(degree));
  for (const auto& l : layers) {
    if (l.W.rows != e_dim || l.W.cols != 5 || l.w.size() != e_dim || l.b.size() != 5)
      throw DimensionError("checkpoint: layer shape does not match e_dim");
  }
  if (std::holds_alternative<EmbeddingEigen>(embedding) && e_dim != 5)
    throw DimensionError("checkpoint: eigen embedding emits 5 values but e_dim differs");
  if (std::holds_alternative<EmbeddingExtremal>(embedding) && e_dim != 10)
    throw DimensionError("checkpoint: extremal embedding emits 10 values but e_dim differs");
}

StepCoefficients backbone_layer_forward(const BackboneLayer& layer, std::span<const double> e, bool* degenerate) {
  if (e.size() != layer.e_dim()) throw DimensionError("backbone_layer_forward: embedding length mismatch");
  Vector raw = matvec_t(layer.W, e);
  double delta = layer.b_scalar;
  for (std::size_t i = 0; i < e.size(); ++i) delta += layer.w[i] * e[i];
  double den = delta + BackboneLayer::epsilon;
  bool degen = den == 0.0;
  if (degen) {
    std::cerr << "warning: backbone layer delta = -eps, dividing by eps instead\n";
    den = BackboneLayer::epsilon;
  }
  if (degenerate) *degenerate = degen;
  StepCoefficients c;
  c.rho = raw[0] + layer.b[0];
  c.gamma = (raw[1] + layer.b[1]) / den;
  c.eta = (raw[2] + layer.b[2]) / den;
  c.alpha = (raw[3] + layer.b[3]) / den;
  c.beta = (raw[4] + layer.b[4]) / den;
  return c;
}

CoefficientSchedule engine_forward(const EngineCheckpoint& ck, std::span<const double> e) {
  ck.validate();
  if (e.size() != ck.e_dim) throw DimensionError("engine_forward: embedding length mismatch");
  CoefficientSchedule s;
  s.steps.reserve(ck.layers.size());
  for (const auto& layer : ck.layers) s.steps.push_back(backbone_layer_forward(layer, e));
  return s;
}

namespace {
Vector gelu_vec(Vector v) {
  for (auto& x : v) x = ad::gelu_value(x);
  return v;
}
}  // namespace

Vector embed_eigen(const EmbeddingEigen& emb, std::span<const double> window) {
  if (window.size() != emb.input_dim()) throw DimensionError("embed_eigen: window length mismatch");
  Vector y1 = matvec_t(emb.W3, gelu_vec(matvec_t(emb.W1, window)));
  Vector y2 = matvec_t(emb.W4, gelu_vec(matvec_t(emb.W2, window)));
  double m = std::abs(y1[0]);
  for (double v : y1) m = std::min(m, std::abs(v));
  Vector e{m};
  e.insert(e.end(), y2.begin(), y2.end());
  return e;
}

Vector embed_extremal(const EmbeddingExtremal& emb, std::span<const double> x1, std::span<const double> x2) {
  if (x1.size() != 2 * emb.k || x2.size() != 2 * emb.k) throw DimensionError("embed_extremal: slice length mismatch");
  auto head = [](const Weights& a, const Weights& b, std::span<const double> x) {
    Vector y = matvec_t(b, gelu_vec(matvec_t(a, x)));
    for (auto& v : y) v = std::abs(v);
    std::sort(y.begin(), y.end(), std::greater<>());
    return y;
  };
  Vector e = head(emb.W1, emb.W3, x1);
  Vector y2 = head(emb.W2, emb.W4, x2);
  e.insert(e.end(), y2.begin(), y2.end());
  return e;
}

Vector eigen_window_input(const SpectralProbe& window) {
  window.validate();
  Vector x = window.values;
  x.insert(x.end(), window.residuals.begin(), window.residuals.end());
  return x;
}

std::pair<Vector, Vector> extremal_inputs(const SpectralProbe& probe, std::size_t k) {
  probe.validate();
  if (probe.values.size() != 2 * k) throw DimensionError("extremal_inputs: probe must hold 2k values");
  auto block = [&](std::size_t off) {
    Vector x(probe.values.begin() + off, probe.values.begin() + off + k);
    x.insert(x.end(), probe.residuals.begin() + off, probe.residuals.begin() + off + k);
    return x;
  };
  return {block(0), block(k)};
}

namespace {
std::size_t eigen_boundary_slot(const InitConfig& cfg, std::size_t k0, std::size_t l0) {
  std::size_t k = cfg.eigen_k, l = cfg.eigen_l;
  std::size_t src = (3 * k + 1) / 2 - 1;  // ceil(1.5k), 0-based
  if (l <= k + 1 || src < k) return k0;
  double f = double(src - k) / double(l - 1 - k);
  return k0 + static_cast<std::size_t>(std::lround(f * double(l0 - k0 - 1)));
}

// e = [lambda_k, lambda_ceil(1.5k), lambda_l, lambda_max, 0] read straight from a window
Vector eigen_probe_features(const SpectralProbe& w, std::size_t k0, std::size_t l0) {
  if (w.values.size() != l0) throw DimensionError("eigen probe window length mismatch");
  return {w.values[k0 - 1], w.values[eigen_boundary_slot({}, k0, l0)], w.values[l0 - 1], w.values[0], 0.0};
}
}  // namespace

Vector embed_probe(const EngineCheckpoint& ck, const SpectralProbe& probe) {
  if (ck.task == Task::eigen) {
    if (const auto* emb = std::get_if<EmbeddingEigen>(&ck.embedding)) return embed_eigen(*emb, eigen_window_input(probe));
    return eigen_probe_features(probe, 10, 104);
  }
  if (const auto* emb = std::get_if<EmbeddingExtremal>(&ck.embedding)) {
    auto [x1, x2] = extremal_inputs(probe, emb->k);
    return embed_extremal(*emb, x1, x2);
  }
  // no embedding: five largest and five smallest estimates
  std::size_t n = probe.values.size();
  if (n < 10) throw DimensionError("embed_probe: extremal probe needs at least 10 values");
  Vector e(probe.values.begin(), probe.values.begin() + 5);
  e.insert(e.end(), probe.values.end() - 5, probe.values.end());
  return e;
}

namespace {
// m sorted indices from [lo, hi) whose last entry is hi-1
std::vector<std::size_t> pick(std::size_t lo, std::size_t hi, std::size_t m, std::mt19937_64& rng) {
  std::size_t count = hi - lo;
  std::vector<std::size_t> out;
  if (m == 0) return out;
  if (count == m) {
    out.resize(m);
    std::iota(out.begin(), out.end(), lo);
  } else if (count > m) {
    std::vector<std::size_t> pool(count - 1);
    std::iota(pool.begin(), pool.end(), lo);
    std::sample(pool.begin(), pool.end(), std::back_inserter(out), m - 1, rng);
    out.push_back(hi - 1);
  } else {
    out.resize(count);
    std::iota(out.begin(), out.end(), lo);
    std::uniform_int_distribution<std::size_t> u(lo, hi - 1);
    while (out.size() < m) out.push_back(u(rng));
    std::sort(out.begin(), out.end());
  }
  return out;
}
}  // namespace

std::vector<std::size_t> probe_window_indices(std::size_t k_prime, std::size_t l_prime, std::size_t k0,
                                              std::size_t l0, std::uint64_t seed) {
  if (k_prime == 0) throw std::invalid_argument("normalize_probe_window: k' must be >= 1");
  if (k_prime > l_prime) throw std::invalid_argument("normalize_probe_window: k' > l'");
  if (k0 == 0 || k0 > l0) throw std::invalid_argument("normalize_probe_window: need 1 <= k0 <= l0");
  std::mt19937_64 rng(seed);
  auto idx = pick(0, k_prime, k0, rng);
  std::vector<std::size_t> tail;
  if (l_prime > k_prime) {
    tail = pick(k_prime, l_prime, l0 - k0, rng);
  } else {
    tail.assign(l0 - k0, l_prime - 1);
  }
  idx.insert(idx.end(), tail.begin(), tail.end());
  return idx;
}

SpectralProbe normalize_probe_window(const SpectralProbe& probe, std::size_t k_prime, std::size_t l_prime,
                                     std::size_t k0, std::size_t l0, std::uint64_t seed) {
  probe.validate();
  if (probe.values.size() < l_prime) throw DimensionError("normalize_probe_window: probe shorter than l'");
  auto idx = probe_window_indices(k_prime, l_prime, k0, l0, seed);
  SpectralProbe out;
  out.task = probe.task;
  out.k = k0;
  out.l = l0;
  out.iterations = probe.iterations;
  for (auto i : idx) {
    out.values.push_back(probe.values[i]);
    out.residuals.push_back(probe.residuals[i]);
  }
  return out;
}

Vector eigen_features(const Vector& lam, std::size_t k, std::size_t l) {
  std::size_t kb = (3 * k + 1) / 2;
  if (k == 0 || l > lam.size() || kb > lam.size()) throw DimensionError("eigen_features: spectrum too short");
  return {lam[k - 1], lam[kb - 1], lam[l - 1], lam.front(), lam.back()};
}

Vector extremal_features(const Vector& lam) {
  if (lam.size() < 5) throw DimensionError("extremal_features: spectrum too short");
  Vector e(lam.begin(), lam.begin() + 5);
  e.insert(e.end(), lam.end() - 5, lam.end());
  return e;
}

EngineCheckpoint init_engine(Task task, int degree, const InitConfig& cfg) {
  if (degree < 1) throw std::invalid_argument("init_engine: degree must be >= 1");
  EngineCheckpoint ck;
  ck.task = task;
  ck.degree = degree;
  ck.e_dim = task_e_dim(task);
  ck.layers.assign(degree, BackboneLayer(ck.e_dim));
  ck.provenance = {{"init", task_name(task)}};

  if (task == Task::eigen) {
    // T_d(theta) with a = e[4], b = e[1]; every numerator is coefficient * (b - a)
    for (int j = 1; j <= degree; ++j) {
      auto& L = ck.layers[j - 1];
      L.w[1] = 1.0;
      L.w[4] = -1.0;
      if (j == 1) {
        L.W(1, 1) = -1.0;  // gamma = q
        L.W(4, 1) = -1.0;
        L.b[3] = 2.0;  // alpha = p
      } else {
        if (j == 2) {
          L.W(1, 1) = -1.0;  // gamma = -1 against A = z
          L.W(4, 1) = 1.0;
        } else {
          L.W(1, 2) = -1.0;  // eta = -1
          L.W(4, 2) = 1.0;
        }
        L.W(1, 3) = -2.0;  // alpha = 2q
        L.W(4, 3) = -2.0;
        L.b[4] = 4.0;  // beta = 2p
      }
    }
  } else if (task == Task::linsolve) {
    // Chebyshev preconditioner on [eps*b, b], b = (1+m) e[0]; q is fixed so the
    // sigma ratios are constants and delta = b makes the numerators affine in e
    double eps = cfg.linsolve_ratio, m = cfg.linsolve_margin;
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("init_engine: linsolve_ratio must be in (0,1)");
    double q = -(1 + eps) / (1 - eps);
    double pd = 2.0 / (1 - eps);  // p * delta
    std::vector<double> sigma(degree + 1);
    sigma[0] = 1.0;
    sigma[1] = q;
    for (int j = 1; j < degree; ++j) sigma[j + 1] = 2 * q * sigma[j] - sigma[j - 1];
    for (int j = 1; j <= degree; ++j) {
      auto& L = ck.layers[j - 1];
      L.w[0] = 1 + m;
      if (j == 1) {
        L.b[1] = -pd / q;
        continue;
      }
      double r = sigma[j - 1] / sigma[j];
      L.b[1] = -2 * pd * r;
      if (j > 2) L.W(0, 2) = -(1 + m) * sigma[j - 2] / sigma[j];
      L.W(0, 3) = 2 * q * r * (1 + m);
      L.b[4] = 2 * pd * r;
    }
  } else {
    auto s = neumann_invsqrt_schedule(degree);
    for (int j = 0; j < degree; ++j) {
      auto& L = ck.layers[j];
      L.b_scalar = 1.0;
      auto a = s.steps[j].as_array();
      // delta = 1 and rho is unscaled, so each numerator is the coefficient itself
      // (up to the eps guard, removed by dividing it back in)
      for (int i = 0; i < 5; ++i) L.b[i] = i == 0 ? a[i] : a[i] * (1.0 + BackboneLayer::epsilon);
    }
  }
  return ck;
}

Embedding init_embedding(Task task, const InitConfig& cfg) {
  // GeLU(x) - GeLU(-x) = x, so a pair of hidden units copies one input
  auto copy = [](Weights& in, Weights& out, std::size_t src, std::size_t unit, std::size_t dst) {
    in(src, 2 * unit) = 1.0;
    in(src, 2 * unit + 1) = -1.0;
    out(2 * unit, dst) = 1.0;
    out(2 * unit + 1, dst) = -1.0;
  };
  if (task == Task::eigen) {
    EmbeddingEigen e;
    for (std::size_t i = 0; i < e.k0; ++i) copy(e.W1, e.W3, i, i, i);
    std::size_t srcs[3] = {eigen_boundary_slot(cfg, e.k0, e.l0), e.l0 - 1, 0};
    for (std::size_t j = 0; j < 3; ++j) copy(e.W2, e.W4, srcs[j], j, j);
    return e;
  }
  EmbeddingExtremal e;
  for (std::size_t i = 0; i < 5; ++i) {
    copy(e.W1, e.W3, i, i, i);
    copy(e.W2, e.W4, e.k - 5 + i, i, i);
  }
  return e;
}

namespace {
json weights_json(const Weights& w) { return {{"rows", w.rows}, {"cols", w.cols}, {"data", w.data}}; }

Weights weights_from(const json& j, std::size_t rows, std::size_t cols, const char* what) {
  Weights w;
  w.rows = j.at("rows").get<std::size_t>();
  w.cols = j.at("cols").get<std::size_t>();
  w.data = j.at("data").get<Vector>();
  if (w.rows != rows || w.cols != cols || w.data.size() != rows * cols)
    throw DimensionError(std::string("checkpoint: bad shape for ") + what);
  return w;
}
}  // namespace

json checkpoint_to_json(const EngineCheckpoint& ck) {
  json layers = json::array();
  for (const auto& l : ck.layers)
    layers.push_back({{"W", weights_json(l.W)}, {"b", l.b}, {"w", l.w}, {"b_scalar", l.b_scalar}});
  json emb = nullptr;
  if (const auto* e = std::get_if<EmbeddingEigen>(&ck.embedding)) {
    emb = {{"kind", "eigen"}, {"k0", e->k0}, {"l0", e->l0}, {"d_hid", e->d_hid},
           {"W1", weights_json(e->W1)}, {"W2", weights_json(e->W2)}, {"W3", weights_json(e->W3)},
           {"W4", weights_json(e->W4)}};
  } else if (const auto* e = std::get_if<EmbeddingExtremal>(&ck.embedding)) {
    emb = {{"kind", "extremal"}, {"k", e->k}, {"W1", weights_json(e->W1)}, {"W2", weights_json(e->W2)},
           {"W3", weights_json(e->W3)}, {"W4", weights_json(e->W4)}};
  }
  return {{"schema_version", EngineCheckpoint::schema_version},
          {"task", task_name(ck.task)},
          {"degree", ck.degree},
          {"e_dim", ck.e_dim},
          {"layers", layers},
          {"embedding", emb},
          {"provenance", ck.provenance}};
}

EngineCheckpoint checkpoint_from_json(const json& j) {
  if (j.at("schema_version").get<int>() != EngineCheckpoint::schema_version)
    throw std::invalid_argument("checkpoint: unsupported schema_version");
  EngineCheckpoint ck;
  ck.task = task_from_string(j.at("task").get<std::string>());
  ck.degree = j.at("degree").get<int>();
  ck.e_dim = j.at("e_dim").get<std::size_t>();
  for (const auto& lj : j.at("layers")) {
    BackboneLayer l(ck.e_dim);
    l.W = weights_from(lj.at("W"), ck.e_dim, 5, "W");
    l.b = lj.at("b").get<Vector>();
    l.w = lj.at("w").get<Vector>();
    l.b_scalar = lj.at("b_scalar").get<double>();
    ck.layers.push_back(std::move(l));
  }
  const auto& ej = j.at("embedding");
  if (!ej.is_null()) {
    std::string kind = ej.at("kind").get<std::string>();
    if (kind == "eigen") {
      EmbeddingEigen e(ej.at("k0").get<std::size_t>(), ej.at("l0").get<std::size_t>());
      if (ej.at("d_hid").get<std::size_t>() != e.d_hid) throw DimensionError("checkpoint: d_hid mismatch");
      e.W1 = weights_from(ej.at("W1"), 2 * e.l0, e.d_hid, "W1");
      e.W2 = weights_from(ej.at("W2"), 2 * e.l0, e.d_hid, "W2");
      e.W3 = weights_from(ej.at("W3"), e.d_hid, e.k0, "W3");
      e.W4 = weights_from(ej.at("W4"), e.d_hid, 4, "W4");
      ck.embedding = std::move(e);
    } else if (kind == "extremal") {
      EmbeddingExtremal e(ej.at("k").get<std::size_t>());
      e.W1 = weights_from(ej.at("W1"), 2 * e.k, 2 * e.k, "W1");
      e.W2 = weights_from(ej.at("W2"), 2 * e.k, 2 * e.k, "W2");
      e.W3 = weights_from(ej.at("W3"), 2 * e.k, 5, "W3");
      e.W4 = weights_from(ej.at("W4"), 2 * e.k, 5, "W4");
      ck.embedding = std::move(e);
    } else {
      throw std::invalid_argument("checkpoint: unknown embedding kind '" + kind + "'");
    }
  }
  ck.provenance = j.value("provenance", json::object());
  ck.validate();
  return ck;
}

EngineCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open checkpoint " + path);
  return checkpoint_from_json(json::parse(in));
}

void save_checkpoint(const EngineCheckpoint& ck, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write checkpoint " + path);
  out << checkpoint_to_json(ck).dump(1) << '\n';
}

std::size_t layer_param_count(std::size_t e_dim) { return 6 * e_dim + 6; }

Vector pack_backbone(const EngineCheckpoint& ck) {
  Vector flat;
  flat.reserve(ck.layers.size() * layer_param_count(ck.e_dim));
  for (const auto& l : ck.layers) {
    flat.insert(flat.end(), l.W.data.begin(), l.W.data.end());
    flat.insert(flat.end(), l.b.begin(), l.b.end());
    flat.insert(flat.end(), l.w.begin(), l.w.end());
    flat.push_back(l.b_scalar);
  }
  return flat;
}

void unpack_backbone(EngineCheckpoint& ck, const Vector& flat) {
  if (flat.size() != ck.layers.size() * layer_param_count(ck.e_dim)) throw DimensionError("unpack_backbone: size");
  auto it = flat.begin();
  for (auto& l : ck.layers) {
    std::copy(it, it + l.W.data.size(), l.W.data.begin());
    it += l.W.data.size();
    std::copy(it, it + 5, l.b.begin());
    it += 5;
    std::copy(it, it + l.w.size(), l.w.begin());
    it += l.w.size();
    l.b_scalar = *it++;
  }
}

namespace {
template <class E>
std::vector<Weights*> weight_list(E& e) {
  return {&e.W1, &e.W2, &e.W3, &e.W4};
}
}  // namespace

Vector pack_embedding(const Embedding& emb) {
  Vector flat;
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (!std::is_same_v<T, std::monostate>) {
          for (const Weights* w : {&e.W1, &e.W2, &e.W3, &e.W4}) flat.insert(flat.end(), w->data.begin(), w->data.end());
        }
      },
      emb);
  return flat;
}

void unpack_embedding(Embedding& emb, const Vector& flat) {
  std::size_t off = 0;
  std::visit(
      [&](auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (!std::is_same_v<T, std::monostate>) {
          std::size_t total = 0;
          for (Weights* w : weight_list(e)) total += w->data.size();
          if (total != flat.size()) throw DimensionError("unpack_embedding: size");
          for (Weights* w : weight_list(e)) {
            std::copy(flat.begin() + off, flat.begin() + off + w->data.size(), w->data.begin());
            off += w->data.size();
          }
        } else if (!flat.empty()) {
          throw DimensionError("unpack_embedding: no embedding to fill");
        }
      },
      emb);
}

std::uint64_t backbone_hash(const EngineCheckpoint& ck) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : pack_backbone(ck)) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::vector<std::array<ad::Var, 5>> backbone_forward_tape(ad::Var params, ad::Var e, int degree, std::size_t e_dim) {
  std::size_t per = layer_param_count(e_dim);
  if (params.size() != per * degree) throw DimensionError("backbone_forward_tape: parameter count");
  if (e.size() != e_dim) throw DimensionError("backbone_forward_tape: embedding length");
  std::vector<std::array<ad::Var, 5>> out;
  for (int k = 0; k < degree; ++k) {
    std::size_t off = k * per;
    ad::Var W = ad::slice(params, off, 5 * e_dim);
    ad::Var b = ad::slice(params, off + 5 * e_dim, 5);
    ad::Var w = ad::slice(params, off + 5 * e_dim + 5, e_dim);
    ad::Var bs = ad::slice(params, off + 6 * e_dim + 5, 1);
    ad::Var raw = ad::matvec_t(W, e, e_dim, 5) + b;
    ad::Var den = ad::sum(w * e) + bs + BackboneLayer::epsilon;
    ad::Var scaled = raw / den;
    out.push_back({ad::element(raw, 0), ad::element(scaled, 1), ad::element(scaled, 2), ad::element(scaled, 3),
                   ad::element(scaled, 4)});
  }
  return out;
}

ad::Var embed_eigen_tape(const EmbeddingEigen& s, ad::Var params, ad::Var window) {
  std::size_t n1 = 2 * s.l0 * s.d_hid, n3 = s.d_hid * s.k0, n4 = s.d_hid * 4;
  if (params.size() != 2 * n1 + n3 + n4) throw DimensionError("embed_eigen_tape: parameter count");
  if (window.size() != s.input_dim()) throw DimensionError("embed_eigen_tape: window length");
  ad::Var W1 = ad::slice(params, 0, n1), W2 = ad::slice(params, n1, n1);
  ad::Var W3 = ad::slice(params, 2 * n1, n3), W4 = ad::slice(params, 2 * n1 + n3, n4);
  ad::Var y1 = ad::matvec_t(W3, ad::gelu(ad::matvec_t(W1, window, 2 * s.l0, s.d_hid)), s.d_hid, s.k0);
  ad::Var y2 = ad::matvec_t(W4, ad::gelu(ad::matvec_t(W2, window, 2 * s.l0, s.d_hid)), s.d_hid, 4);
  return ad::concat({ad::min_reduce(ad::abs(y1)), y2});
}

ad::Var embed_extremal_tape(const EmbeddingExtremal& s, ad::Var params, ad::Var x1, ad::Var x2) {
  std::size_t m = 2 * s.k, n1 = m * m, n3 = m * 5;
  if (params.size() != 2 * n1 + 2 * n3) throw DimensionError("embed_extremal_tape: parameter count");
  if (x1.size() != m || x2.size() != m) throw DimensionError("embed_extremal_tape: slice length");
  ad::Var W1 = ad::slice(params, 0, n1), W2 = ad::slice(params, n1, n1);
  ad::Var W3 = ad::slice(params, 2 * n1, n3), W4 = ad::slice(params, 2 * n1 + n3, n3);
  ad::Var y1 = ad::sort_desc(ad::abs(ad::matvec_t(W3, ad::gelu(ad::matvec_t(W1, x1, m, m)), m, 5)));
  ad::Var y2 = ad::sort_desc(ad::abs(ad::matvec_t(W4, ad::gelu(ad::matvec_t(W2, x2, m, m)), m, 5)));
  return ad::concat({y1, y2});
}

}  // namespace polyrec
