#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "emie/types.hpp"

namespace emie {

// First `count` positive zeros of J_nu, nu = 0 or 1, ascending.
std::vector<double> bessel_zeros(int nu, int count);

// Adaptive Gauss-Kronrod 15 on [a, b]. The integrand may return double or
// cdouble; the tolerance is relative to the integral's own magnitude.
template <class F>
auto integrate(F&& f, double a, double b, double rel_tol, int max_depth = 12) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 15>;
  return GK::integrate(f, a, b, max_depth, rel_tol);
}

template <class F>
auto integrate2d(F&& f, double ax, double bx, double ay, double by,
                 double rel_tol) {
  auto outer = [&](double x) {
    return integrate([&](double y) { return f(x, y); }, ay, by, 0.25 * rel_tol);
  };
  return integrate(outer, ax, bx, rel_tol);
}

// Integral of f over [a, inf) for integrands that oscillate with slowly
// decaying amplitude. The axis is cut at the given knots (typically Bessel
// zeros divided by the oscillation radius) and continued past the last knot
// with its final spacing; panel integrals yield a sequence of partial sums
// whose tail alternates, and repeated averaging of that sequence supplies the
// limit far earlier than direct summation would.
template <class F>
auto integrate_oscillatory(F&& f, double a, const std::vector<double>& knots,
                           double rel_tol, int max_panels = 400) {
  using R = decltype(f(a));
  double lo = a;
  std::size_t next = 0;
  double spacing = 0.0;
  auto panel_edge = [&]() {
    while (next < knots.size() && knots[next] <= lo) ++next;
    if (next < knots.size()) {
      spacing = (next > 0) ? knots[next] - knots[next - 1] : knots[next] - a;
      return knots[next++];
    }
    return lo + (spacing > 0.0 ? spacing : 1.0);
  };

  R partial{};
  std::vector<R> diag;  // newest entry of each averaging column
  R est{};
  double prev_change = -1.0;
  for (int n = 0; n < max_panels; ++n) {
    const double hi = panel_edge();
    partial += integrate(f, lo, hi, 0.1 * rel_tol);
    lo = hi;

    R cur = partial;
    for (auto& d : diag) {
      R avg = 0.5 * (d + cur);
      d = cur;
      cur = avg;
    }
    diag.push_back(cur);

    const double change = std::abs(cur - est);
    est = cur;
    const double scale = std::abs(est);
    if (n >= 5 && change <= rel_tol * scale && prev_change >= 0.0 &&
        prev_change <= rel_tol * scale) {
      return est;
    }
    prev_change = change;
  }
  return est;
}

}  // namespace emie
