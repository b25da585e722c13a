#pragma once

#include <cstdint>
#include <vector>

#include "polyrec/engine.hpp"
#include "polyrec/linalg.hpp"

namespace polyrec {

struct LanczosResult {
  TridiagonalSym t;       // alpha (m), beta (m-1)
  double beta_m = 0.0;    // norm of the residual after the last step
  std::size_t m = 0;      // steps actually taken
  bool breakdown = false;
  std::size_t breakdown_step = 0;  // 1-based step at which beta vanished
};

struct RitzSet {
  Vector values;     // descending
  Vector residuals;  // same order
  std::size_t l = 0;
  std::size_t iterations = 0;
};

// Seeded random unit start, plain three-term recurrence, no basis stored.
LanczosResult lanczos_probe(const LinearOperator& x, std::size_t m, std::uint64_t seed);
// Residual estimate |beta_m * last component|.
RitzSet ritz_from_lanczos(const LanczosResult& lr);

// Block subspace iteration. Each iteration applies X to the block once; the
// Rayleigh-Ritz step uses the last product, so l * max(1, iterations) matvecs.
RitzSet subspace_probe(const LinearOperator& x, std::size_t l, std::size_t iterations, std::uint64_t seed,
                       const std::vector<Vector>* start = nullptr);

// Bottom-of-spectrum probe: subspace iteration on sigma*I - X, mapped back to X.
RitzSet shifted_subspace_probe(const LinearOperator& x, std::size_t l, std::size_t iterations, double sigma,
                               std::uint64_t seed);
// sigma = 1.05 * largest Ritz value of a 10-step Lanczos run
double bottom_shift(const LinearOperator& x, std::uint64_t seed);

// First k Ritz values are targets, the rest out-of-target; resampled to the
// (k0, l0) window.
SpectralProbe assemble_eigen_probe(const RitzSet& ritz, std::size_t k, std::size_t k0 = 10, std::size_t l0 = 104,
                                   std::uint64_t seed = 0);
// Top k and bottom k estimates, [top desc; bottom desc]. Without a separate
// bottom set both ends come from `ritz`. Short sets replicate boundary values.
SpectralProbe assemble_extremal_probe(const RitzSet& ritz, const RitzSet* bottom = nullptr, std::size_t k = 20,
                                      Task task = Task::linsolve);

}  // namespace polyrec
