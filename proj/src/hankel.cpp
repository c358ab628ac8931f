#include "emie/hankel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/bessel.hpp>

#include "emie/quad.hpp"

namespace emie {
namespace {

constexpr double kSqrtPi = 1.7724538509055160273;

// erf(b/2) - erf(a/2); a shared-sign tail goes through erfc so the
// difference keeps its leading digits
double ediff(double a, double b) {
  if (a > 1.0 && b > 1.0) return std::erfc(0.5 * a) - std::erfc(0.5 * b);
  if (a < -1.0 && b < -1.0) return std::erfc(-0.5 * b) - std::erfc(-0.5 * a);
  return std::erf(0.5 * b) - std::erf(0.5 * a);
}

// One axis of the separable design output: the cell-pair integral of
// w^k e^{-w^2/4}, k = 2j, with alpha observer derivatives folded in. Both
// cell integrations reduce to the stencil F(d+h) - 2 F(d) + F(d-h) over the
// (2-alpha)-th antiderivative. The antiderivatives' w-linear parts are
// regrouped around erf differences, which makes the stencil cancel them
// without forming large intermediates; far from the cells everything then
// underflows to an exact zero.
void axis_stencil(int alpha, double d, double h, double out[3]) {
  const double wp = d + h, w0 = d, wm = d - h;
  const double gp = std::exp(-0.25 * wp * wp);
  const double g0 = std::exp(-0.25 * w0 * w0);
  const double gm = std::exp(-0.25 * wm * wm);
  const double gs = gp - 2.0 * g0 + gm;
  const double ep = ediff(w0, wp);   // E(d+h) - E(d)
  const double em = ediff(wm, w0);   // E(d) - E(d-h)
  switch (alpha) {
    case 0: {
      const double lin = wp * ep - wm * em;
      const double w2s = wp * wp * gp - 2.0 * w0 * w0 * g0 + wm * wm * gm;
      out[0] = kSqrtPi * lin + 2.0 * gs;
      out[1] = 2.0 * kSqrtPi * lin + 8.0 * gs;
      out[2] = 12.0 * kSqrtPi * lin + 4.0 * w2s + 64.0 * gs;
      break;
    }
    case 1: {
      const double es = ep - em;
      const double wg = wp * gp - 2.0 * w0 * g0 + wm * gm;
      const double w3g = wp * wp * wp * gp - 2.0 * w0 * w0 * w0 * g0 + wm * wm * wm * gm;
      out[0] = kSqrtPi * es;
      out[1] = 2.0 * kSqrtPi * es - 2.0 * wg;
      out[2] = 12.0 * kSqrtPi * es - 2.0 * w3g - 12.0 * wg;
      break;
    }
    case 2: {
      out[0] = gs;
      out[1] = wp * wp * gp - 2.0 * w0 * w0 * g0 + wm * wm * gm;
      out[2] = wp * wp * wp * wp * gp - 2.0 * w0 * w0 * w0 * w0 * g0 +
               wm * wm * wm * wm * gm;
      break;
    }
    default:
      throw std::invalid_argument("axis_stencil: derivative order");
  }
}

void check_orders(int alpha, int beta) {
  if (alpha < 0 || beta < 0 || alpha > 2 || beta > 2 || alpha + beta > 2)
    throw std::invalid_argument("kernel orders: need alpha, beta >= 0 and alpha + beta <= 2");
}

}  // namespace

PairGeometry pair_geometry(int offset_i, int offset_j, double hx, double hy) {
  if (!(hx > 0.0) || !(hy > 0.0))
    throw std::invalid_argument("pair_geometry: cell sizes must be positive");
  const double ax = offset_j * hx - 0.5 * hx;
  const double ay = offset_i * hy - 0.5 * hy;
  PairGeometry g;
  g.r = std::hypot(ax, ay);
  g.p = hx / g.r;
  g.q = hy / g.r;
  g.phi = std::atan2(ay, ax);
  return g;
}

double design_input(double lambda) {
  // the Gaussian has fully underflowed here; returning 0 outright avoids
  // 0 * inf from the powered terms on extreme lattices
  if (lambda > 38.0) return 0.0;
  const double l2 = lambda * lambda;
  return 8.0 * std::exp(-l2) * lambda * ((l2 - 4.0) * l2 + 2.0);
}

double kernel_output(const PairGeometry& g, int alpha, int beta, double s) {
  check_orders(alpha, beta);
  const double r = std::exp(s);
  const double hx = g.p * r, hy = g.q * r;
  const double dx = r * std::cos(g.phi) + 0.5 * hx;
  const double dy = r * std::sin(g.phi) + 0.5 * hy;
  double ax[3], ay[3];
  axis_stencil(alpha, dx, hx, ax);
  axis_stencil(beta, dy, hy, ay);
  const double comb = 0.25 * (ax[2] * ay[0] + 2.0 * ax[1] * ay[1] + ax[0] * ay[2]);
  if (comb == 0.0) return 0.0;
  return std::exp(-(3 - alpha - beta) * s) * comb;
}

double kernel_output_oracle(const PairGeometry& g, int alpha, int beta,
                            double s, double rel_tol) {
  check_orders(alpha, beta);
  const int pw = 3 - alpha - beta;
  auto bj0 = [](double x) { return boost::math::cyl_bessel_j(0, x); };

  // 30-point Gauss rule on [-1,1], expanded from the half tables
  static const std::vector<std::pair<double, double>> gauss_nodes = [] {
    using rule = boost::math::quadrature::gauss<double, 30>;
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < rule::abscissa().size(); ++i) {
      out.emplace_back(-rule::abscissa()[i], rule::weights()[i]);
      out.emplace_back(rule::abscissa()[i], rule::weights()[i]);
    }
    return out;
  }();
  // fixed composite rule, chunked so each piece spans at most about one
  // oscillation of the Bessel factor. deliberately not adaptive: nesting an
  // adaptive pass inside another hands the outer one noisy samples, and it
  // stalls in full-depth refinement once its tolerance drops below that noise
  auto fixed_1d = [](double a, double b, auto&& f) {
    const int chunks = 1 + static_cast<int>((b - a) / 8.0);
    const double hlen = 0.5 * (b - a) / chunks;
    double acc = 0.0;
    for (int c = 0; c < chunks; ++c) {
      const double mid = a + (2 * c + 1) * hlen;
      for (const auto& [x, w] : gauss_nodes) acc += w * f(mid + hlen * x);
    }
    return acc * hlen;
  };

  // rectangle-integrated Bessel kernel at scale zeta: each axis of the
  // scaled 4-fold integral reduces to a triangular weight (no derivative),
  // a signed pair of boxes (one derivative) or a three-point stencil (two)
  auto kernel_k = [&](double zeta) -> double {
    const double cx = zeta * (std::cos(g.phi) + 0.5 * g.p), hx = zeta * g.p;
    const double cy = zeta * (std::sin(g.phi) + 0.5 * g.q), hy = zeta * g.q;
    if (alpha == 2 || beta == 2) {
      // the other axis has order 0 here
      const bool xpts = (alpha == 2);
      const double cp = xpts ? cx : cy, hp = xpts ? hx : hy;
      const double cc = xpts ? cy : cx, hc = xpts ? hy : hx;
      const double pts[3] = {cp + hp, cp, cp - hp};
      const double coef[3] = {1.0, -2.0, 1.0};
      double acc = 0.0;
      for (int i = 0; i < 3; ++i) {
        for (int side = 0; side < 2; ++side) {
          const double a = side ? cc : cc - hc, b = side ? cc + hc : cc;
          const double ui = pts[i];
          acc += coef[i] * fixed_1d(a, b, [&](double v) {
            const double tri = side ? (cc + hc - v) : (v - (cc - hc));
            return tri * bj0(std::hypot(ui, v));
          });
        }
      }
      return acc;
    }
    double acc = 0.0;
    for (int sx = 0; sx < 2; ++sx) {
      const double x0 = sx ? cx : cx - hx, x1 = sx ? cx + hx : cx;
      for (int sy = 0; sy < 2; ++sy) {
        const double y0 = sy ? cy : cy - hy, y1 = sy ? cy + hy : cy;
        acc += fixed_1d(y0, y1, [&](double v) {
          const double wy = (beta == 0) ? (sy ? cy + hy - v : v - (cy - hy))
                                        : (sy ? 1.0 : -1.0);
          return wy * fixed_1d(x0, x1, [&](double u) {
            const double wx = (alpha == 0) ? (sx ? cx + hx - u : u - (cx - hx))
                                           : (sx ? 1.0 : -1.0);
            return wx * bj0(std::hypot(u, v));
          });
        });
      }
    }
    return acc;
  };

  // below this the sample cannot move the result at the requested accuracy,
  // and skipping it avoids pricing the kernel at large scales for nothing
  const double v_skip = 1e-3 * rel_tol;
  auto integrand = [&](double t) -> double {
    const double v = design_input(std::exp(-t));
    if (std::abs(v) < v_skip) return 0.0;
    const double w = s - t;
    return kernel_k(std::exp(w)) * std::exp(-pw * w) * v;
  };
  // the input's support bounds the convolution variable on both sides
  return integrate(integrand, -2.7, 42.0, rel_tol, 15);
}

FilterDesigner::FilterDesigner(const FilterParams& par) : par_(par) {
  if (!(par.step > 0.0) || !(par.shift > 0.0) || !(par.shift < 0.5 * par.step))
    throw std::invalid_argument("filter params: need 0 < shift < step/2");
  if (par.half < 2 || par.n1 < -par.half || par.n2 <= par.n1 || par.n2 > par.half - 1)
    throw std::invalid_argument("filter params: bad weight window");
  const int n = 2 * par.half;
  buf_.resize(n);
  spec_.resize(n);
  den_.resize(n);
  plan_fwd_ = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(buf_.data()),
                               reinterpret_cast<fftw_complex*>(spec_.data()),
                               FFTW_FORWARD, FFTW_ESTIMATE);
  plan_bwd_ = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(spec_.data()),
                               reinterpret_cast<fftw_complex*>(buf_.data()),
                               FFTW_BACKWARD, FFTW_ESTIMATE);
  // input samples on the unshifted lattice; the alternating signs move the
  // spectrum onto the half-integer modes, away from where the input's
  // transform can get small
  for (int j = 0; j < n; ++j) {
    const int m = j - par.half;
    const double sign = ((j + par.half) % 2 == 0) ? 1.0 : -1.0;
    buf_[j] = sign * design_input(std::exp(-m * par.step));
  }
  fftw_execute(static_cast<fftw_plan>(plan_fwd_));
  den_ = spec_;
  double dmax = 0.0;
  for (const cdouble& d : den_) dmax = std::max(dmax, std::abs(d));
  den_floor_ = 1e-12 * dmax;
}

FilterDesigner::~FilterDesigner() {
  if (plan_fwd_) fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  if (plan_bwd_) fftw_destroy_plan(static_cast<fftw_plan>(plan_bwd_));
}

FilterWeights FilterDesigner::design(const PairGeometry& g, int alpha, int beta) const {
  check_orders(alpha, beta);
  const int n = 2 * par_.half;
  // output samples carry the same lattice offset as the abscissae; that
  // alignment is what makes the discrete deconvolution reproduce the output
  // exactly on the design grid
  for (int j = 0; j < n; ++j) {
    const int m = j - par_.half;
    const double sign = ((j + par_.half) % 2 == 0) ? 1.0 : -1.0;
    buf_[j] = sign * kernel_output(g, alpha, beta, m * par_.step + par_.shift);
  }
  fftw_execute(static_cast<fftw_plan>(plan_fwd_));
  for (int k = 0; k < n; ++k) {
    if (std::abs(den_[k]) < den_floor_)
      throw std::runtime_error("filter design: input spectrum vanishes at a used mode");
    spec_[k] /= den_[k];
  }
  fftw_execute(static_cast<fftw_plan>(plan_bwd_));

  double remax = 0.0, immax = 0.0;
  for (const cdouble& wv : buf_) {
    remax = std::max(remax, std::abs(wv.real()));
    immax = std::max(immax, std::abs(wv.imag()));
  }
  if (immax > 1e-10 * remax)
    throw std::runtime_error("filter design: weights have a non-real residue");

  FilterWeights fw;
  fw.alpha = alpha;
  fw.beta = beta;
  fw.n1 = par_.n1;
  fw.n2 = par_.n2;
  const int count = par_.n2 - par_.n1 + 1;
  fw.w.reserve(count);
  fw.lam.reserve(count);
  for (int m = par_.n1; m <= par_.n2; ++m) {
    const int j = ((m % n) + n) % n;
    const double sign = (m % 2 != 0) ? -1.0 : 1.0;
    fw.w.push_back(sign * buf_[j].real() / n);
    fw.lam.push_back(std::exp(m * par_.step + par_.shift));
  }
  return fw;
}

FilterWeights design_weights(const PairGeometry& g, int alpha, int beta,
                             const FilterParams& par) {
  return FilterDesigner(par).design(g, alpha, beta);
}

}  // namespace emie
