#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "doctest.h"
#include "polyrec/baselines.hpp"
#include "polyrec/engine.hpp"
#include "test_util.hpp"

using namespace polyrec;

namespace {
void randomize(Weights& w, std::mt19937_64& rng, double s = 0.5) {
  std::normal_distribution<double> g(0.0, s);
  for (auto& v : w.data) v = g(rng);
}

BackboneLayer random_layer(std::size_t e_dim, std::mt19937_64& rng) {
  BackboneLayer l(e_dim);
  randomize(l.W, rng);
  for (auto& v : l.b) v = std::normal_distribution<double>()(rng);
  for (auto& v : l.w) v = std::normal_distribution<double>()(rng);
  l.b_scalar = 3.0;
  return l;
}

EngineCheckpoint random_checkpoint(Task task, int d, std::mt19937_64& rng) {
  EngineCheckpoint ck;
  ck.task = task;
  ck.degree = d;
  ck.e_dim = task_e_dim(task);
  for (int i = 0; i < d; ++i) ck.layers.push_back(random_layer(ck.e_dim, rng));
  return ck;
}

double gelu_ref(double x) { return 0.5 * x * std::erfc(-x / std::sqrt(2.0)); }

// straight-line W^T x with explicit index arithmetic
Vector wt(const Weights& w, const Vector& x) {
  Vector y(w.cols);
  for (std::size_t j = 0; j < w.cols; ++j) {
    long double s = 0;
    for (std::size_t i = 0; i < w.rows; ++i) s += (long double)w.data[i * w.cols + j] * x[i];
    y[j] = double(s);
  }
  return y;
}
}  // namespace

TEST_CASE("backbone_layer_forward spec examples") {
  BackboneLayer zero(5);
  zero.b = {1, 1, 1, 1, 1};
  Vector e(5, 0.0);
  auto c = backbone_layer_forward(zero, e);
  CHECK(c.rho == 1.0);
  CHECK(c.gamma == doctest::Approx(1e8));

  BackboneLayer pass(5);
  pass.b = {0.5, 0, 0, 2, -1};
  pass.b_scalar = 1.0;
  auto p = backbone_layer_forward(pass, Vector{0.3, 1, 2, 3, 4});
  CHECK(p.rho == 0.5);
  CHECK(p.gamma == 0.0);
  CHECK(p.alpha == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(p.beta == doctest::Approx(-1.0).epsilon(1e-7));

  BackboneLayer degen(5);
  degen.b = {0, 1, 0, 0, 0};
  degen.b_scalar = -BackboneLayer::epsilon;
  bool flag = false;
  auto dg = backbone_layer_forward(degen, e, &flag);
  CHECK(flag);
  CHECK(std::isfinite(dg.gamma));
  CHECK_THROWS_AS(backbone_layer_forward(pass, Vector{1, 2}), DimensionError);
}

TEST_CASE("backbone_layer_forward vs straight-line oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto l = random_layer(10, rng);
    auto e = testutil::random_vector(10, rng);
    auto c = backbone_layer_forward(l, e).as_array();
    Vector raw = wt(l.W, e);
    long double delta = l.b_scalar;
    for (int i = 0; i < 10; ++i) delta += (long double)l.w[i] * e[i];
    for (int i = 0; i < 5; ++i) {
      double want = raw[i] + l.b[i];
      if (i > 0) want = double((long double)want / (delta + BackboneLayer::epsilon));
      CHECK(std::abs(c[i] - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("engine_forward") {
  std::mt19937_64 rng(5);
  auto ck1 = random_checkpoint(Task::linsolve, 1, rng);
  Vector e = testutil::random_vector(10, rng);
  CHECK(engine_forward(ck1, e).degree() == 1);

  auto ck = random_checkpoint(Task::linsolve, 4, rng);
  auto s1 = engine_forward(ck, e);
  auto s2 = engine_forward(ck, e);
  CHECK(schedule_to_json(s1).dump() == schedule_to_json(s2).dump());

  auto swapped = ck;
  std::swap(swapped.layers[0], swapped.layers[2]);
  CHECK(!(engine_forward(swapped, e) == s1));

  auto bad = ck;
  bad.layers.pop_back();
  CHECK_THROWS(engine_forward(bad, e));
  CHECK_THROWS_AS(engine_forward(ck, Vector(5, 0.0)), DimensionError);
}

TEST_CASE("embed_eigen") {
  EmbeddingEigen emb;
  CHECK(emb.d_hid == 48);
  Vector x(208, 0.7);
  CHECK(embed_eigen(emb, x) == Vector(5, 0.0));
  CHECK_THROWS_AS(embed_eigen(emb, Vector(207)), DimensionError);

  std::mt19937_64 rng(2);
  randomize(emb.W1, rng, 0.1);
  randomize(emb.W2, rng, 0.1);
  randomize(emb.W3, rng);
  randomize(emb.W4, rng);
  x = testutil::random_vector(208, rng);
  auto e = embed_eigen(emb, x);
  CHECK(e == embed_eigen(emb, x));

  auto h1 = wt(emb.W1, x), h2 = wt(emb.W2, x);
  for (auto& v : h1) v = gelu_ref(v);
  for (auto& v : h2) v = gelu_ref(v);
  auto y1 = wt(emb.W3, h1), y2 = wt(emb.W4, h2);
  double m = 1e300;
  for (double v : y1) m = std::min(m, std::abs(v));
  CHECK(std::abs(e[0] - m) <= 1e-12);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(e[i + 1] - y2[i]) <= 1e-12);
}

TEST_CASE("embed_extremal") {
  EmbeddingExtremal emb;
  Vector x(40, 1.0);
  CHECK(embed_extremal(emb, x, x) == Vector(10, 0.0));
  CHECK_THROWS_AS(embed_extremal(emb, Vector(39), x), DimensionError);

  std::mt19937_64 rng(9);
  for (auto* w : {&emb.W1, &emb.W2, &emb.W3, &emb.W4}) randomize(*w, rng, 0.2);
  auto x1 = testutil::random_vector(40, rng), x2 = testutil::random_vector(40, rng);
  auto e = embed_extremal(emb, x1, x2);
  auto head = [&](const Weights& a, const Weights& b, const Vector& xx) {
    auto h = wt(a, xx);
    for (auto& v : h) v = gelu_ref(v);
    auto y = wt(b, h);
    for (auto& v : y) v = std::abs(v);
    std::sort(y.rbegin(), y.rend());
    return y;
  };
  auto r1 = head(emb.W1, emb.W3, x1), r2 = head(emb.W2, emb.W4, x2);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(e[i] - r1[i]) <= 1e-12);
    CHECK(std::abs(e[5 + i] - r2[i]) <= 1e-12);
  }
  for (int i = 0; i < 4; ++i) CHECK(e[i] >= e[i + 1]);

  // permuting the columns of W3 permutes the pre-sort vector only
  auto perm = emb;
  for (std::size_t r = 0; r < 40; ++r) std::swap(perm.W3(r, 0), perm.W3(r, 3));
  CHECK(embed_extremal(perm, x1, x2) == e);
}

TEST_CASE("normalize_probe_window") {
  SpectralProbe p;
  for (int i = 0; i < 300; ++i) {
    p.values.push_back(300.0 - i);
    p.residuals.push_back(i * 1e-3);
  }
  auto id = probe_window_indices(10, 104, 10, 104, 1);
  for (std::size_t i = 0; i < id.size(); ++i) CHECK(id[i] == i);

  auto w = normalize_probe_window(p, 3, 50, 10, 104, 4);
  REQUIRE(w.values.size() == 104);
  CHECK(w.values[9] == p.values[2]);
  for (int i = 0; i < 10; ++i) CHECK(w.values[i] >= p.values[2]);
  CHECK(w.values[103] == p.values[49]);

  auto sub = probe_window_indices(20, 60, 10, 104, 8);
  CHECK(sub[9] == 19);
  CHECK(std::is_sorted(sub.begin(), sub.begin() + 10));
  CHECK(std::adjacent_find(sub.begin(), sub.begin() + 10) == sub.begin() + 10);

  // anchors hold bitwise for any (k', l')
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t kp = 1 + rng() % 60;
    std::size_t lp = kp + rng() % 200;
    auto win = normalize_probe_window(p, kp, lp, 10, 104, trial);
    CHECK(win.values[9] == p.values[kp - 1]);
    CHECK(win.values[103] == p.values[lp - 1]);
    CHECK(win.residuals[103] == p.residuals[lp - 1]);
  }
  CHECK_THROWS(probe_window_indices(0, 5, 10, 104, 0));
  CHECK_THROWS(normalize_probe_window(p, 10, 400, 10, 104));
}

TEST_CASE("checkpoint round trip is bitwise") {
  std::mt19937_64 rng(17);
  for (Task t : {Task::eigen, Task::linsolve, Task::matfunc}) {
    auto ck = random_checkpoint(t, 7, rng);
    ck.embedding = init_embedding(t);
    std::visit(
        [&](auto& e) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(e)>, std::monostate>)
            for (auto* w : {&e.W1, &e.W2, &e.W3, &e.W4}) randomize(*w, rng);
        },
        ck.embedding);
    ck.provenance = {{"seed", 17}};
    std::string path = "/tmp/polyrec_ck_" + task_name(t) + ".json";
    save_checkpoint(ck, path);
    auto back = load_checkpoint(path);
    std::remove(path.c_str());
    CHECK(back.layers == ck.layers);
    CHECK(backbone_hash(back) == backbone_hash(ck));
    CHECK(pack_embedding(back.embedding) == pack_embedding(ck.embedding));
    for (int trial = 0; trial < 10; ++trial) {
      auto e = testutil::random_vector(ck.e_dim, rng, -3, 3);
      auto a = engine_forward(ck, e), b = engine_forward(back, e);
      for (int k = 0; k < a.degree(); ++k) CHECK(std::memcmp(&a.steps[k], &b.steps[k], sizeof(StepCoefficients)) == 0);
    }
  }
  auto j = checkpoint_to_json(init_engine(Task::eigen, 3));
  j["layers"].erase(0);
  CHECK_THROWS(checkpoint_from_json(j));
}

TEST_CASE("init_engine reproduces the classical polynomials") {
  std::mt19937_64 rng(21);
  Vector grid;
  for (int i = 0; i <= 400; ++i) grid.push_back(1.1 * i / 400.0);

  for (int d : {1, 2, 3, 8, 21}) {
    // eigen: Chebyshev filter on [lambda_min, lambda_ceil(1.5k)]
    auto ck = init_engine(Task::eigen, d);
    Vector e{0.97, 0.9, 0.5, 1.0, 0.05};
    auto s = engine_forward(ck, e);
    auto ref = cheb_eigen_filter(d, {0.05, 0.9});
    auto got = evaluate_polynomial(s, grid), want = evaluate_polynomial(ref, grid);
    double scale = max_abs(want);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-6 * scale);

    // linsolve: Chebyshev preconditioner on [ratio*b, b]
    InitConfig cfg;
    auto cl = init_engine(Task::linsolve, d, cfg);
    Vector ex{0.8, 0.7, 0.6, 0.5, 0.4, 0.05, 0.04, 0.03, 0.02, 0.01};
    double b = 0.8 * (1 + cfg.linsolve_margin);
    auto sl = engine_forward(cl, ex);
    auto rl = cheb_system_precond(d, {cfg.linsolve_ratio * b, b});
    got = evaluate_polynomial(sl, grid);
    want = evaluate_polynomial(rl, grid);
    scale = max_abs(want);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-6 * scale);

    auto cm = init_engine(Task::matfunc, d);
    auto sm = engine_forward(cm, ex);
    auto c = neumann_invsqrt(d);
    for (double x : {0.1, 0.5, 1.0, 1.3}) CHECK(evaluate_polynomial(sm, {x})[0] == doctest::Approx(horner(c, x)).epsilon(1e-9));
  }
}

TEST_CASE("pass-through embeddings reproduce the pre-training features") {
  Vector lam;
  for (int i = 0; i < 300; ++i) lam.push_back(std::pow(0.99, i));
  SpectralProbe p{lam, Vector(lam.size(), 0.0), Task::linsolve, 0, 0, 0};
  auto ext = std::get<EmbeddingExtremal>(init_embedding(Task::linsolve));
  SpectralProbe top;
  top.values.assign(lam.begin(), lam.begin() + 20);
  top.values.insert(top.values.end(), lam.end() - 20, lam.end());
  top.residuals.assign(40, 0.0);
  auto [x1, x2] = extremal_inputs(top, 20);
  auto e = embed_extremal(ext, x1, x2);
  auto f = extremal_features(lam);
  for (int i = 0; i < 10; ++i) CHECK(e[i] == doctest::Approx(f[i]).epsilon(1e-14));

  auto eig = std::get<EmbeddingEigen>(init_embedding(Task::eigen));
  auto win = normalize_probe_window(p, 10, 40, 10, 104, 1);
  auto ee = embed_eigen(eig, eigen_window_input(win));
  CHECK(ee[0] == doctest::Approx(lam[9]).epsilon(1e-14));
  CHECK(ee[2] == doctest::Approx(lam[39]).epsilon(1e-14));
  CHECK(ee[3] == doctest::Approx(lam[0]).epsilon(1e-14));
  CHECK(ee[4] == 0.0);
  // the boundary slot holds an estimate near the ceil(1.5k)-th value
  CHECK(ee[1] <= lam[10]);
  CHECK(ee[1] >= lam[20]);

  EngineCheckpoint bare = init_engine(Task::eigen, 3);
  auto fe = embed_probe(bare, win);
  for (int i = 0; i < 5; ++i) CHECK(fe[i] == doctest::Approx(ee[i]).epsilon(1e-14));
}

TEST_CASE("tape forward matches the plain forward") {
  std::mt19937_64 rng(33);
  auto ck = random_checkpoint(Task::linsolve, 5, rng);
  auto e = testutil::random_vector(10, rng);
  ad::Tape t;
  auto out = backbone_forward_tape(t.leaf(pack_backbone(ck)), t.constant(e), 5, 10);
  auto s = engine_forward(ck, e);
  for (int k = 0; k < 5; ++k) {
    auto a = s.steps[k].as_array();
    for (int i = 0; i < 5; ++i) CHECK(out[k][i].scalar() == doctest::Approx(a[i]).epsilon(1e-14));
  }

  EmbeddingExtremal ext;
  for (auto* w : {&ext.W1, &ext.W2, &ext.W3, &ext.W4}) randomize(*w, rng, 0.3);
  auto x1 = testutil::random_vector(40, rng), x2 = testutil::random_vector(40, rng);
  auto te = embed_extremal_tape(ext, t.leaf(pack_embedding(ext)), t.constant(x1), t.constant(x2));
  auto pe = embed_extremal(ext, x1, x2);
  for (int i = 0; i < 10; ++i) CHECK(te.value()[i] == doctest::Approx(pe[i]).epsilon(1e-14));

  EmbeddingEigen eig;
  for (auto* w : {&eig.W1, &eig.W2, &eig.W3, &eig.W4}) randomize(*w, rng, 0.1);
  auto x = testutil::random_vector(208, rng);
  auto tg = embed_eigen_tape(eig, t.leaf(pack_embedding(eig)), t.constant(x));
  auto pg = embed_eigen(eig, x);
  for (int i = 0; i < 5; ++i) CHECK(tg.value()[i] == doctest::Approx(pg[i]).epsilon(1e-14));

  Embedding emb = eig;
  auto flat = pack_embedding(emb);
  flat[7] = 42.0;
  unpack_embedding(emb, flat);
  CHECK(std::get<EmbeddingEigen>(emb).W1.data[7] == 42.0);
}
