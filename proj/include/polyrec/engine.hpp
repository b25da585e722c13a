#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "polyrec/autodiff.hpp"
#include "polyrec/recurrence.hpp"

namespace polyrec {

enum class Task { eigen, linsolve, matfunc };

std::string task_name(Task t);
Task task_from_string(const std::string& s);

struct SpectralProbe {
  Vector values;     // task ordered, descending
  Vector residuals;  // same length, >= 0
  Task task = Task::eigen;
  std::size_t k = 0, l = 0, iterations = 0;

  void validate() const;
};

nlohmann::json probe_to_json(const SpectralProbe& p);
SpectralProbe probe_from_json(const nlohmann::json& j);

// Row-major dense weights with explicit dims.
struct Weights {
  std::size_t rows = 0, cols = 0;
  Vector data;

  Weights() = default;
  Weights(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  bool operator==(const Weights&) const = default;
};

// y = W^T x
Vector matvec_t(const Weights& w, std::span<const double> x);

struct BackboneLayer {
  static constexpr double epsilon = 1e-8;
  Weights W;  // e_dim x 5
  Vector b = Vector(5, 0.0);
  Vector w;  // e_dim
  double b_scalar = 0.0;

  explicit BackboneLayer(std::size_t e_dim = 0) : W(e_dim, 5), w(e_dim, 0.0) {}
  std::size_t e_dim() const { return W.rows; }
  bool operator==(const BackboneLayer&) const = default;
};

struct EmbeddingEigen {
  std::size_t k0 = 10, l0 = 104, d_hid = 48;
  Weights W1, W2, W3, W4;

  EmbeddingEigen() : EmbeddingEigen(10, 104) {}
  EmbeddingEigen(std::size_t k0_, std::size_t l0_);
  std::size_t input_dim() const { return 2 * l0; }
  bool operator==(const EmbeddingEigen&) const = default;
};

struct EmbeddingExtremal {
  std::size_t k = 20;
  Weights W1, W2, W3, W4;

  explicit EmbeddingExtremal(std::size_t k_ = 20);
  bool operator==(const EmbeddingExtremal&) const = default;
};

using Embedding = std::variant<std::monostate, EmbeddingEigen, EmbeddingExtremal>;

struct EngineCheckpoint {
  static constexpr int schema_version = 1;
  Task task = Task::eigen;
  int degree = 0;
  std::size_t e_dim = 0;
  std::vector<BackboneLayer> layers;
  Embedding embedding;
  nlohmann::json provenance = nlohmann::json::object();

  void validate() const;
};

std::size_t task_e_dim(Task t);

// coefficients of one layer; degenerate is set when delta + eps == 0
StepCoefficients backbone_layer_forward(const BackboneLayer& layer, std::span<const double> e,
                                        bool* degenerate = nullptr);
CoefficientSchedule engine_forward(const EngineCheckpoint& ck, std::span<const double> e);

Vector embed_eigen(const EmbeddingEigen& emb, std::span<const double> window);
Vector embed_extremal(const EmbeddingExtremal& emb, std::span<const double> x1, std::span<const double> x2);

// Input vectors of the embeddings built from a probe window.
Vector eigen_window_input(const SpectralProbe& window);
// top/bottom blocks [values; residuals], each 2k long
std::pair<Vector, Vector> extremal_inputs(const SpectralProbe& probe, std::size_t k);

// Full inference path: probe -> embedding -> schedule.
Vector embed_probe(const EngineCheckpoint& ck, const SpectralProbe& probe);

// Indices into the probe for the (k0, l0) window, preserving both anchors.
std::vector<std::size_t> probe_window_indices(std::size_t k_prime, std::size_t l_prime, std::size_t k0,
                                              std::size_t l0, std::uint64_t seed);
SpectralProbe normalize_probe_window(const SpectralProbe& probe, std::size_t k_prime, std::size_t l_prime,
                                     std::size_t k0, std::size_t l0, std::uint64_t seed = 0);

// Pre-training features from an exact descending spectrum.
Vector eigen_features(const Vector& lambda_desc, std::size_t k, std::size_t l);
Vector extremal_features(const Vector& lambda_desc);

struct InitConfig {
  double linsolve_margin = 0.02;  // b = (1 + margin) * lambda_max feature
  double linsolve_ratio = 1e-3;   // a = ratio * b
  // probe layout the eigen embedding init assumes when locating the ceil(1.5k) estimate
  std::size_t eigen_k = 10, eigen_l = 40;
};

// Backbones whose initial output is a classical polynomial: Chebyshev filter
// on [lambda_min, lambda_ceil(1.5k)] (eigen), Chebyshev preconditioner on
// [ratio*b, b] (linsolve), Neumann series (matfunc).
EngineCheckpoint init_engine(Task task, int degree, const InitConfig& cfg = {});
// Embeddings that pass the probe through to the pre-training feature layout.
Embedding init_embedding(Task task, const InitConfig& cfg = {});

nlohmann::json checkpoint_to_json(const EngineCheckpoint& ck);
EngineCheckpoint checkpoint_from_json(const nlohmann::json& j);
EngineCheckpoint load_checkpoint(const std::string& path);
void save_checkpoint(const EngineCheckpoint& ck, const std::string& path);

// Flat parameter views used by the optimizer.
Vector pack_backbone(const EngineCheckpoint& ck);
void unpack_backbone(EngineCheckpoint& ck, const Vector& flat);
Vector pack_embedding(const Embedding& emb);
void unpack_embedding(Embedding& emb, const Vector& flat);
std::size_t layer_param_count(std::size_t e_dim);
// FNV-1a over the bytes of the flattened backbone
std::uint64_t backbone_hash(const EngineCheckpoint& ck);

// Tape versions over flat parameter vectors, laid out as pack_backbone/pack_embedding.
std::vector<std::array<ad::Var, 5>> backbone_forward_tape(ad::Var params, ad::Var e, int degree,
                                                           std::size_t e_dim);
ad::Var embed_eigen_tape(const EmbeddingEigen& shape, ad::Var params, ad::Var window);
ad::Var embed_extremal_tape(const EmbeddingExtremal& shape, ad::Var params, ad::Var x1, ad::Var x2);

}  // namespace polyrec
