#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "emie/types.hpp"

namespace emie {

// Horizontally layered background medium. Layer 0 is the upper halfspace (air),
// layer L = tops.size() the lower halfspace. tops[m-1] is the depth of the
// interface above layer m, strictly increasing. Depth axis points down.
struct LayeredModel {
  std::vector<double> tops;    // interface depths [m], size L
  std::vector<cdouble> sigma;  // layer conductivities [S/m], size L+1

  int layer_count() const { return static_cast<int>(sigma.size()); }
  // Points on an interface belong to the layer below it.
  int layer_of(double z) const;
  // Top/bottom depth of a layer; the halfspaces reuse their single real
  // boundary so that thickness() is zero for them.
  double top_of(int m) const;
  double bottom_of(int m) const;
  double thickness(int m) const;
  // Conductivity with the small positive floor applied to the real part.
  cdouble sigma_floored(int m) const;

  void validate() const;  // throws std::invalid_argument on bad geometry

  static constexpr double sigma_floor = 1e-9;
};

// Continuity weight of the 1-D two-point boundary problem: fields built with
// Gamma::unit have continuous value and derivative across interfaces, those
// built with Gamma::cond have continuous value and sigma-weighted derivative.
enum class Gamma { unit, cond };

// Per-(omega, lambda, gamma) coefficient set for one layered model.
struct SpectralLayerState {
  const LayeredModel* model = nullptr;
  double omega = 0.0;
  double lambda = 0.0;
  Gamma gamma = Gamma::unit;
  std::vector<cdouble> sig;     // floored conductivities, size L+1
  std::vector<cdouble> eta;     // sqrt(lambda^2 - i omega mu0 sigma), Re > 0
  std::vector<cdouble> p, q;    // downward/upward reflection chains, p[0] = q[L] = 0
  // 1+p and 1+q kept separately: near-total reflection drives p, q to -1 and
  // the difference would lose the leading digits if formed afterwards
  std::vector<cdouble> one_p, one_q;
  std::vector<cdouble> e2l;     // exp(-2 eta_m l_m), 1 for the halfspaces
  std::vector<cdouble> em1_2l;  // 1 - e2l, stable for thin layers
  std::vector<cdouble> diag_a;  // same-layer amplitude 1/(eta (1 - p q e2l))
};

SpectralLayerState build_spectral_state(const LayeredModel& model, double omega,
                                        double lambda, Gamma gamma);

// Value (or derivative) of the fundamental solution U(z, zs): continuous in z,
// decaying both ways, with a derivative jump -2/w(zs) at z = zs. dz, dzs <= 2
// select d/dz and d/dzs orders; derivatives are one-sided at z = zs. For
// points exactly on a layer boundary the layer below is assumed; layer_z and
// layer_zs override that (the weighted solution takes one-sided limits in zs
// at interfaces, so the source side needs saying which limit is meant).
cdouble fundamental_value(const SpectralLayerState& st, double z, double zs,
                          int dz = 0, int dzs = 0, int layer_z = -1,
                          int layer_zs = -1);

// Vertical grid: contiguous intervals [breaks[i], breaks[i+1]], each contained
// in a single layer of the model.
struct VerticalPartition {
  std::vector<double> breaks;  // size count()+1, strictly increasing
  std::vector<int> layer;      // layer index per interval

  int count() const { return static_cast<int>(layer.size()); }
  static VerticalPartition create(const LayeredModel& model,
                                  const std::vector<double>& breaks);
};

// Double moments W^{ab}[i][j] = int_i dz int_j dzs d^a/dz^a d^b/dzs^b U(z, zs)
// for all derivative pairs with a,b <= 2 that the tensor assembly needs.
struct VerticalMomentTable {
  int nz = 0;
  Gamma gamma = Gamma::unit;
  double lambda = 0.0;
  // order: (0,0) (1,0) (0,1) (1,1) (2,0) (0,2); row-major nz x nz each
  std::array<std::vector<cdouble>, 6> w;

  static int pair_index(int a, int b);
  const cdouble& at(int a, int b, int i, int j) const {
    return w[pair_index(a, b)][static_cast<size_t>(i) * nz + j];
  }
};

VerticalMomentTable vertical_moment_table(const SpectralLayerState& st,
                                          const VerticalPartition& part);

// Builds the Gamma::unit and Gamma::cond tables together, sharing one
// exponential pack (the exponentials depend on eta only, not on gamma).
std::pair<VerticalMomentTable, VerticalMomentTable> vertical_moment_tables(
    const SpectralLayerState& unit_state, const SpectralLayerState& cond_state,
    const VerticalPartition& part);

// Spectral kernels of one interval pair (n = observation, m = source),
// combined from the two moment tables. sigma_bn is the background conductivity
// of the observation interval's layer.
struct VFunctions {
  cdouble v1, v2, v3, v4, v5;
};

VFunctions v_functions(const VerticalMomentTable& unit_table,
                       const VerticalMomentTable& cond_table, int n, int m,
                       cdouble sigma_bn, double omega);

// Single moments anchored at an observation depth z_obs (receiver side):
// m[az][j] = d^az/dz^az |_{z=z_obs} int_j U(z, zs) dzs, az in {0, 1}.
// z_obs may be above, below, or inside the partition span.
struct PointMomentTable {
  int nz = 0;
  std::array<std::vector<cdouble>, 2> m;
};

PointMomentTable point_moments(const SpectralLayerState& st,
                               const VerticalPartition& part, double z_obs);

// Instrumentation: complex-exponential evaluations performed by this module in
// the current thread. Table construction is expected to stay O(nz) per call.
std::uint64_t exp_eval_count();
void reset_exp_eval_count();

}  // namespace emie
