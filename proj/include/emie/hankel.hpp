#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "emie/types.hpp"

namespace emie {

// Digital-filter quadrature for the lateral part of the operator assembly.
// The 4-fold rectangle integral of a Bessel-kernel transform over a cell pair
// collapses, in log radius, to a convolution with a kernel fixed by the pair
// shape; the weights below realize that convolution on a geometric lattice of
// abscissae, so the transform's radial factor is the only thing evaluated at
// assembly time.

struct FilterParams {
  double step = 0.2;      // lattice spacing in log radius
  double shift = 0.0964;  // abscissa offset, in (0, step/2)
  int half = 512;         // half length of the design lattice; transform length 2*half
  int n1 = -250;          // retained weight window [n1, n2], inclusive
  int n2 = 200;
};

struct PairGeometry {
  double r = 0.0;    // reference distance; never zero for integer offsets
  double p = 0.0;    // hx / r
  double q = 0.0;    // hy / r
  double phi = 0.0;  // azimuth of the reference point
};

// Shape of the (observer, source) cell pair at lateral offsets offset_j cells
// in x and offset_i cells in y. Depends only on the offsets and cell sizes.
PairGeometry pair_geometry(int offset_i, int offset_j, double hx, double hy);

// Design input 8 e^{-lambda^2} (lambda^5 - 4 lambda^3 + 2 lambda). Its J0
// transform is (rho^4/4) e^{-rho^2/4}, which keeps every derivative kernel's
// output expressible through Gaussians and error functions.
double design_input(double lambda);

// Output u(s) of the design pair for the (alpha, beta) derivative kernel at
// log radius s, through the closed error-function forms.
double kernel_output(const PairGeometry& g, int alpha, int beta, double s);

// Same value by numeric integration of the defining convolution, with the
// rectangle-integrated Bessel kernel evaluated by adaptive cubature. Slow;
// exists so tests can gate the closed forms above.
double kernel_output_oracle(const PairGeometry& g, int alpha, int beta,
                            double s, double rel_tol);

struct FilterWeights {
  int alpha = 0, beta = 0;
  int n1 = 0, n2 = 0;
  std::vector<double> w;    // weight for lattice index m = n1 + i
  std::vector<double> lam;  // abscissa e^{m*step + shift}
};

// One-shot design; assembly-rate callers should hold a FilterDesigner.
FilterWeights design_weights(const PairGeometry& g, int alpha, int beta,
                             const FilterParams& par = {});

// R^{3-alpha-beta} sum of W_m f(lambda_m / R). f maps a wavenumber to double
// or cdouble.
template <class F>
auto evaluate_integral(const FilterWeights& fw, const PairGeometry& g, F&& f) {
  using R = std::invoke_result_t<F&, double>;
  R acc{};
  for (std::size_t i = 0; i < fw.w.size(); ++i) acc += fw.w[i] * f(fw.lam[i] / g.r);
  if (!std::isfinite(std::abs(acc)))
    throw std::domain_error("filter quadrature: non-finite kernel sample");
  return std::pow(g.r, 3 - fw.alpha - fw.beta) * acc;
}

// Holds the transform plans and the input-side spectrum, which are shared by
// every geometry. design() reuses internal buffers; not for concurrent use.
class FilterDesigner {
 public:
  explicit FilterDesigner(const FilterParams& par = {});
  ~FilterDesigner();
  FilterDesigner(const FilterDesigner&) = delete;
  FilterDesigner& operator=(const FilterDesigner&) = delete;

  FilterWeights design(const PairGeometry& g, int alpha, int beta) const;
  const FilterParams& params() const { return par_; }

 private:
  FilterParams par_;
  void* plan_fwd_ = nullptr;  // fftw plans, kept opaque here
  void* plan_bwd_ = nullptr;
  mutable std::vector<cdouble> buf_, spec_;
  std::vector<cdouble> den_;
  double den_floor_ = 0.0;
};

}  // namespace emie
