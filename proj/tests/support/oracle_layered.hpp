#pragma once

// Independent reference implementations for the layered-background kernels:
//  - extended-precision reflection recurrences and the textbook explicit
//    product form of the fundamental solution (overflow-prone, moderate
//    lambda only),
//  - a conservative finite-difference two-point boundary solve of the
//    underlying ODE with weighted interface continuity.

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "emie/layered.hpp"

namespace testsup {

using cld = std::complex<long double>;

inline cld lexpm1(cld x) {
  long double em = std::expm1(x.real());
  long double s = std::sin(0.5L * x.imag());
  return cld(em * std::cos(x.imag()) - 2.0L * s * s,
             (em + 1.0L) * std::sin(x.imag()));
}

struct LongStates {
  // one_p = 1 + p kept in exact form; forming it from p loses digits when a
  // huge conductivity contrast drives p to -1
  std::vector<cld> sig, eta, p, q, one_p, one_q, diag_a;
  std::vector<long double> tops;
};

inline LongStates long_state(const emie::LayeredModel& model, double omega,
                             double lambda, emie::Gamma gamma) {
  const long double mu0 = 4.0L * 3.14159265358979323846264338327950288L * 1e-7L;
  int L = (int)model.tops.size();
  LongStates st;
  st.tops.assign(model.tops.begin(), model.tops.end());
  st.sig.resize(L + 1);
  st.eta.resize(L + 1);
  st.p.assign(L + 1, cld(0));
  st.q.assign(L + 1, cld(0));
  st.one_p.assign(L + 1, cld(1));
  st.one_q.assign(L + 1, cld(1));
  st.diag_a.resize(L + 1);
  auto thick = [&](int m) -> long double {
    if (m == 0 || m == L) return 0.0L;
    return st.tops[m] - st.tops[m - 1];
  };
  for (int m = 0; m <= L; ++m) {
    emie::cdouble s = model.sigma_floored(m);
    st.sig[m] = cld(s.real(), s.imag());
    cld eta2 = cld((long double)lambda * lambda, 0) -
               cld(0, (long double)omega * mu0) * st.sig[m];
    cld e = std::sqrt(eta2);
    if (e.real() < 0) e = -e;
    st.eta[m] = e;
  }
  for (int m = 0; m < L; ++m) {
    cld e2l = std::exp(-2.0L * st.eta[m] * thick(m));
    cld t = (st.p[m] * e2l - 1.0L) / (st.p[m] * e2l + 1.0L);
    cld alpha = (gamma == emie::Gamma::cond) ? st.sig[m + 1] / st.sig[m] : cld(1);
    cld w = alpha * (st.eta[m] / st.eta[m + 1]) * t;
    st.p[m + 1] = (1.0L + w) / (1.0L - w);
    st.one_p[m + 1] = 2.0L / (1.0L - w);
  }
  for (int m = L; m > 0; --m) {
    cld e2l = std::exp(-2.0L * st.eta[m] * thick(m));
    cld u = (st.q[m] * e2l - 1.0L) / (st.q[m] * e2l + 1.0L);
    cld beta = (gamma == emie::Gamma::cond) ? st.sig[m - 1] / st.sig[m] : cld(1);
    cld w = beta * (st.eta[m] / st.eta[m - 1]) * u;
    st.q[m - 1] = (1.0L + w) / (1.0L - w);
    st.one_q[m - 1] = 2.0L / (1.0L - w);
  }
  for (int m = 0; m <= L; ++m) {
    cld e2l = std::exp(-2.0L * st.eta[m] * thick(m));
    st.diag_a[m] = 1.0L / (st.eta[m] * (1.0L - st.p[m] * st.q[m] * e2l));
  }
  return st;
}

// Textbook product form: A_{r,s} P_r(z) Qbar_s(zs) for z <= zs, with the
// raw (unbalanced) exponentials. Valid only while nothing overflows.
inline cld u_explicit(const emie::LayeredModel& model, const LongStates& st,
                      emie::Gamma gamma, double z, double zs) {
  int L = (int)model.tops.size();
  bool swapped = z > zs;
  long double zlo = swapped ? zs : z, zhi = swapped ? z : zs;
  int r = model.layer_of((double)zlo), s = model.layer_of((double)zhi);
  auto dtop = [&](int m) -> long double { return m == 0 ? st.tops[0] : st.tops[m - 1]; };
  auto dbot = [&](int m) -> long double { return m == L ? st.tops[L - 1] : st.tops[m]; };
  cld A = st.diag_a[s];
  for (int m = r; m < s; ++m) {
    long double lm = (m == 0) ? 0.0L : dbot(m) - dtop(m);
    cld e2lm1 = lexpm1(-2.0L * st.eta[m] * lm);
    // denominator 1 + p e2l split so a p near -1 keeps its digits
    A *= st.one_p[m + 1] / (-e2lm1 + (1.0L + e2lm1) * st.one_p[m]) *
         std::exp((st.eta[m + 1] - st.eta[m]) * dbot(m));
  }
  cld P = st.p[r] * std::exp(2.0L * st.eta[r] * dtop(r)) * std::exp(-st.eta[r] * zlo) +
          std::exp(st.eta[r] * zlo);
  cld Q = std::exp(-st.eta[s] * zhi) +
          st.q[s] * std::exp(-2.0L * st.eta[s] * dbot(s)) * std::exp(st.eta[s] * zhi);
  cld val = A * P * Q;
  if (swapped && gamma == emie::Gamma::cond) val *= st.sig[s] / st.sig[r];
  return val;
}

// Conservative finite-difference solve of
//   d/dz ((1/w) dU/dz) - (eta^2 / w) U = -(2 / w(zs)) delta(z - zs)
// with decaying (Robin) ends; w = 1 or sigma by gamma. Returns U on the node
// set, plus the nodes. Nodes include all interfaces and zs exactly.
struct FdSolution {
  std::vector<double> z;
  std::vector<std::complex<double>> u;
  std::complex<double> at(double zq) const {
    auto it = std::lower_bound(z.begin(), z.end(), zq);
    if (it == z.end() || std::abs(*it - zq) > 1e-9)
      throw std::runtime_error("fd oracle: query point is not a node");
    return u[it - z.begin()];
  }
};

inline FdSolution fd_solve(const emie::LayeredModel& model, double omega,
                           double lambda, emie::Gamma gamma, double zs,
                           double zmin, double zmax, int n_base,
                           const std::vector<double>& extra = {}) {
  using cd = std::complex<double>;
  const double mu0 = emie::mu0;
  // node set: uniform base grid plus interfaces, the source depth, and any
  // requested query points
  std::vector<double> nodes;
  for (int i = 0; i <= n_base; ++i)
    nodes.push_back(zmin + (zmax - zmin) * i / n_base);
  for (double d : model.tops)
    if (d > zmin && d < zmax) nodes.push_back(d);
  for (double d : extra)
    if (d > zmin && d < zmax) nodes.push_back(d);
  if (zs > zmin && zs < zmax) nodes.push_back(zs);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-12; }),
              nodes.end());
  int n = (int)nodes.size();

  auto seg_layer = [&](int i) { return model.layer_of(0.5 * (nodes[i] + nodes[i + 1])); };
  auto wgt = [&](int m) {
    return gamma == emie::Gamma::cond ? model.sigma_floored(m) : cd(1.0);
  };
  auto eta2 = [&](int m) {
    return cd(lambda * lambda, 0) - cd(0, omega * mu0) * model.sigma_floored(m);
  };

  std::vector<cd> sub(n, 0), diag(n, 0), sup(n, 0), rhs(n, 0);
  // interior balance over dual cells
  for (int i = 0; i < n; ++i) {
    if (i > 0) {
      int m = seg_layer(i - 1);
      double h = nodes[i] - nodes[i - 1];
      cd c = 1.0 / (wgt(m) * h);
      sub[i] += c;
      diag[i] -= c;
      diag[i] -= eta2(m) / wgt(m) * (h / 2.0);
    }
    if (i + 1 < n) {
      int m = seg_layer(i);
      double h = nodes[i + 1] - nodes[i];
      cd c = 1.0 / (wgt(m) * h);
      sup[i] += c;
      diag[i] -= c;
      diag[i] -= eta2(m) / wgt(m) * (h / 2.0);
    }
  }
  // decaying ends: flux (1/w) U' equals +(eta/w) U at the top, -(eta/w) U at
  // the bottom (solution proportional to e^{+eta z} above, e^{-eta z} below)
  {
    int m0 = seg_layer(0);
    cd eta0 = std::sqrt(eta2(m0));
    if (eta0.real() < 0) eta0 = -eta0;
    diag[0] -= eta0 / wgt(m0);
    int mn = seg_layer(n - 2);
    cd etan = std::sqrt(eta2(mn));
    if (etan.real() < 0) etan = -etan;
    diag[n - 1] -= etan / wgt(mn);
  }
  // source
  {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), zs);
    int is = (int)(it - nodes.begin());
    int ms = model.layer_of(zs);
    rhs[is] = -2.0 / wgt(ms);
  }
  // Thomas solve
  for (int i = 1; i < n; ++i) {
    cd f = sub[i] / diag[i - 1];
    diag[i] -= f * sup[i - 1];
    rhs[i] -= f * rhs[i - 1];
  }
  std::vector<cd> u(n);
  u[n - 1] = rhs[n - 1] / diag[n - 1];
  for (int i = n - 2; i >= 0; --i) u[i] = (rhs[i] - sup[i] * u[i + 1]) / diag[i];
  FdSolution sol;
  sol.z = std::move(nodes);
  sol.u = std::move(u);
  return sol;
}

}  // namespace testsup
