#pragma once

#include <functional>
#include <vector>

#include "emie/greens.hpp"
#include "emie/layered.hpp"
#include "emie/toeplitz.hpp"
#include "emie/types.hpp"

namespace emie {

// Scattering coefficients of one cell. gamma is the contraction factor of
// the rewritten integral equation; its modulus stays below one whenever the
// anomalous conductivity has a nonnegative real part and the background a
// positive one, which is what makes the iteration converge.
struct ContrastCoefficients {
  cdouble a;      // (sigma_a + conj sigma_b) / (2 sqrt(Re sigma_b))
  cdouble b;      // (sigma_a - sigma_b) / (2 sqrt(Re sigma_b))
  cdouble gamma;  // (sigma_a - sigma_b) / (sigma_a + conj sigma_b)
};

// Throws when Re sigma_b <= 0, or when the computed factor fails |gamma| < 1.
ContrastCoefficients contrast_coefficients(cdouble sigma_a, cdouble sigma_b);

// The linear system A = S + R1 B R2. The three factors are cell-diagonal
// scalars acting on all vector components alike; B couples cells through its
// lateral spectra. The operator references the spectra, it does not own them.
struct SystemOperator {
  const SpectralOperator* b = nullptr;
  std::vector<cdouble> s;   // 1 - gamma, per cell
  std::vector<double> r1;   // (2 / V) sqrt(Re sigma_b), per cell
  std::vector<cdouble> r2;  // -sqrt(Re sigma_b) gamma, per cell
};

SystemOperator build_system(const AnomalyGrid& grid,
                            const SpectralOperator& op);

GridVector apply(const SystemOperator& sys, const GridVector& u);

enum class SolveStatus { converged, max_iterations, breakdown };

struct SolveReport {
  SolveStatus status = SolveStatus::max_iterations;
  int iterations = 0;
  double residual = 0.0;         // relative, against the right-hand side
  std::vector<double> history;   // one relative residual per iteration
};

using LinearMap = std::function<GridVector(const GridVector&)>;
using IterationHook = std::function<void(int iteration, double residual)>;

struct SolverConfig {
  double tol = 1e-8;
  int restart = 40;
  int max_iters = 500;
  LinearMap right_precond;       // optional, applied flexibly per iteration
  IterationHook on_iteration;    // optional convergence log sink
};

struct FgmresResult {
  GridVector x;
  SolveReport report;
};

// Flexible restarted GMRES. The inner product is conjugate-linear in its
// first argument. The residual history never increases inside a restart
// cycle; a numerically vanishing Krylov vector that does not close on the
// solution is reported as breakdown rather than non-convergence, and the
// best iterate reached is always returned.
FgmresResult fgmres(const LinearMap& apply_a, const GridVector& rhs,
                    const SolverConfig& config = {});

// Assembles the system for the grid and solves A U = rhs. The returned U
// are the scaled scattering coefficients; mapping them back to fields is the
// caller's business.
GridVector solve_cie(const AnomalyGrid& grid, const LayeredModel& model,
                     const SpectralOperator& op, const GridVector& rhs,
                     const SolverConfig& config = {},
                     SolveReport* report = nullptr);

}  // namespace emie
