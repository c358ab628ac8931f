#include "emie/layered.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emie {

namespace {

thread_local std::uint64_t g_exp_evals = 0;

inline cdouble cexp(cdouble x) {
  ++g_exp_evals;
  return std::exp(x);
}

// exp(x) - 1 without cancellation near x = 0
inline cdouble cexpm1(cdouble x) {
  ++g_exp_evals;
  double em = std::expm1(x.real());
  double s = std::sin(0.5 * x.imag());
  return cdouble(em * std::cos(x.imag()) - 2.0 * s * s,
                 (em + 1.0) * std::sin(x.imag()));
}

}  // namespace

std::uint64_t exp_eval_count() { return g_exp_evals; }
void reset_exp_eval_count() { g_exp_evals = 0; }

int LayeredModel::layer_of(double z) const {
  // number of interfaces at or above z; points on an interface fall below it
  return static_cast<int>(std::upper_bound(tops.begin(), tops.end(), z) -
                          tops.begin());
}

double LayeredModel::top_of(int m) const { return m == 0 ? tops.front() : tops[m - 1]; }

double LayeredModel::bottom_of(int m) const {
  int L = static_cast<int>(tops.size());
  return m == L ? tops.back() : tops[m];
}

double LayeredModel::thickness(int m) const { return bottom_of(m) - top_of(m); }

cdouble LayeredModel::sigma_floored(int m) const {
  cdouble s = sigma[m];
  if (s.real() < sigma_floor) s = cdouble(sigma_floor, s.imag());
  return s;
}

void LayeredModel::validate() const {
  if (tops.empty()) throw std::invalid_argument("layered model needs at least one interface");
  if (sigma.size() != tops.size() + 1)
    throw std::invalid_argument("layered model: sigma count must be tops count + 1");
  for (size_t i = 0; i + 1 < tops.size(); ++i)
    if (!(tops[i] < tops[i + 1]))
      throw std::invalid_argument("layered model: interface depths must increase");
  for (double d : tops)
    if (!std::isfinite(d)) throw std::invalid_argument("layered model: non-finite depth");
  for (cdouble s : sigma)
    if (!std::isfinite(s.real()) || !std::isfinite(s.imag()))
      throw std::invalid_argument("layered model: non-finite conductivity");
}

SpectralLayerState build_spectral_state(const LayeredModel& model, double omega,
                                        double lambda, Gamma gamma) {
  int L = static_cast<int>(model.tops.size());
  SpectralLayerState st;
  st.model = &model;
  st.omega = omega;
  st.lambda = lambda;
  st.gamma = gamma;
  st.sig.resize(L + 1);
  st.eta.resize(L + 1);
  st.e2l.resize(L + 1);
  st.em1_2l.resize(L + 1);
  st.p.assign(L + 1, cdouble(0.0));
  st.q.assign(L + 1, cdouble(0.0));
  st.one_p.assign(L + 1, cdouble(1.0));
  st.one_q.assign(L + 1, cdouble(1.0));
  st.diag_a.resize(L + 1);

  for (int m = 0; m <= L; ++m) {
    st.sig[m] = model.sigma_floored(m);
    cdouble eta2 = cdouble(lambda * lambda, 0.0) - cdouble(0.0, omega * mu0) * st.sig[m];
    cdouble eta = std::sqrt(eta2);
    if (eta.real() < 0.0) eta = -eta;
    st.eta[m] = eta;
    double l = model.thickness(m);
    if (m == 0 || m == L) {
      st.e2l[m] = cdouble(1.0);
      st.em1_2l[m] = cdouble(0.0);
    } else {
      cdouble em1 = cexpm1(-2.0 * eta * l);
      st.e2l[m] = 1.0 + em1;
      st.em1_2l[m] = -em1;
    }
  }

  // reflection chains; the halfspace anchors p[0] = q[L] = 0 make the first
  // recurrence step reproduce the closed-form single-interface coefficients.
  // 1+p is kept in the exact form 2/(1-w): near-total reflection (huge
  // conductivity contrast with one derivative weight) drives p to -1, and
  // forming 1+p from the stored p would wipe out the leading digits.
  for (int m = 0; m < L; ++m) {
    cdouble t = -(st.em1_2l[m] + st.e2l[m] * (2.0 - st.one_p[m])) /
                (st.em1_2l[m] + st.e2l[m] * st.one_p[m]);
    cdouble alpha = (gamma == Gamma::cond) ? st.sig[m + 1] / st.sig[m] : cdouble(1.0);
    cdouble w = alpha * (st.eta[m] / st.eta[m + 1]) * t;
    st.p[m + 1] = (1.0 + w) / (1.0 - w);
    st.one_p[m + 1] = 2.0 / (1.0 - w);
  }
  for (int m = L; m > 0; --m) {
    cdouble u = -(st.em1_2l[m] + st.e2l[m] * (2.0 - st.one_q[m])) /
                (st.em1_2l[m] + st.e2l[m] * st.one_q[m]);
    cdouble beta = (gamma == Gamma::cond) ? st.sig[m - 1] / st.sig[m] : cdouble(1.0);
    cdouble w = beta * (st.eta[m] / st.eta[m - 1]) * u;
    st.q[m - 1] = (1.0 + w) / (1.0 - w);
    st.one_q[m - 1] = 2.0 / (1.0 - w);
  }

  for (int m = 0; m <= L; ++m)
    st.diag_a[m] = 1.0 / (st.eta[m] * (st.em1_2l[m] +
                                       st.e2l[m] * (1.0 - st.p[m] * st.q[m])));

  return st;
}

namespace {

inline cdouble ipow(cdouble c, int n) {
  cdouble r(1.0);
  for (int i = 0; i < n; ++i) r *= c;
  return r;
}

}  // namespace

cdouble fundamental_value(const SpectralLayerState& st, double z, double zs,
                          int dz, int dzs, int layer_z, int layer_zs) {
  const LayeredModel& model = *st.model;
  const bool swapped = z > zs;
  const double zlo = swapped ? zs : z, zhi = swapped ? z : zs;
  const int dlo = swapped ? dzs : dz, dhi = swapped ? dz : dzs;
  const int rz = layer_z >= 0 ? layer_z : model.layer_of(z);
  const int rzs = layer_zs >= 0 ? layer_zs : model.layer_of(zs);
  const int rlo = swapped ? rzs : rz, rhi = swapped ? rz : rzs;

  // The four reflection terms collapse into the product
  //   amp exp(base) (1 + p e^{-2 er (zlo-top)}) (1 + q e^{-2 es (bot-zhi)}),
  // with each z-derivative toggling the sign in front of its factor's p or q.
  // Evaluated through 1+p and expm1 so near-total reflection stays accurate.
  const cdouble er = st.eta[rlo], es = st.eta[rhi];
  const cdouble pr = st.p[rlo], qs = st.q[rhi];
  cdouble amp, base;
  if (rlo == rhi) {
    amp = st.diag_a[rlo];
    base = -er * (zhi - zlo);
  } else {
    cdouble Lsum(0.0);
    cdouble C(1.0);
    for (int m = rlo; m < rhi; ++m) {
      C *= st.one_p[m + 1] / (st.em1_2l[m] + st.e2l[m] * st.one_p[m]);
      if (m > rlo) Lsum += st.eta[m] * model.thickness(m);
    }
    amp = st.diag_a[rhi] * C;
    base = -es * (zhi - model.top_of(rhi)) - er * (model.bottom_of(rlo) - zlo) - Lsum;
  }

  cdouble Sp(1.0), Mp(1.0);
  if (pr != 0.0) {
    const cdouble em1 = cexpm1(-2.0 * er * (zlo - model.top_of(rlo)));
    Sp = st.one_p[rlo] + pr * em1;
    Mp = (2.0 - st.one_p[rlo]) - pr * em1;
  }
  cdouble Sq(1.0), Mq(1.0);
  if (qs != 0.0) {
    const cdouble em1 = cexpm1(-2.0 * es * (model.bottom_of(rhi) - zhi));
    Sq = st.one_q[rhi] + qs * em1;
    Mq = (2.0 - st.one_q[rhi]) - qs * em1;
  }

  cdouble val = amp * cexp(base) * ipow(er, dlo) * ipow(-es, dhi) *
                (dlo % 2 ? Mp : Sp) * (dhi % 2 ? Mq : Sq);
  if (swapped && st.gamma == Gamma::cond) val *= st.sig[rhi] / st.sig[rlo];
  return val;
}

VerticalPartition VerticalPartition::create(const LayeredModel& model,
                                            const std::vector<double>& breaks) {
  if (breaks.size() < 2)
    throw std::invalid_argument("vertical partition needs at least one interval");
  VerticalPartition part;
  part.breaks = breaks;
  int L = static_cast<int>(model.tops.size());
  for (size_t i = 0; i + 1 < breaks.size(); ++i) {
    if (!(breaks[i] < breaks[i + 1]))
      throw std::invalid_argument("vertical partition: breaks must increase");
    int m = model.layer_of(breaks[i]);
    double slack = 1e-7 * (1.0 + std::abs(breaks[i + 1]));
    if (m < L && breaks[i + 1] > model.bottom_of(m) + slack)
      throw std::invalid_argument("vertical partition: interval straddles a layer interface");
    part.layer.push_back(m);
  }
  return part;
}

int VerticalMomentTable::pair_index(int a, int b) {
  if (a == 0 && b == 0) return 0;
  if (a == 1 && b == 0) return 1;
  if (a == 0 && b == 1) return 2;
  if (a == 1 && b == 1) return 3;
  if (a == 2 && b == 0) return 4;
  if (a == 0 && b == 2) return 5;
  throw std::invalid_argument("moment table: unsupported derivative pair");
}

namespace {

// Exponentials of one partition interval [a, b] in layer `layer`. Everything
// is derived from four evaluations (eh, epa, eqb, elh) through expm1 algebra
// so that the 1 + p e^{-x} combinations downstream keep full precision. The
// disabled families stay at their defaults and their terms vanish because p
// (resp. q) is exactly zero in the adjacent halfspace.
struct IntervalPack {
  int layer = 0;
  double a = 0, b = 0, h = 0;
  cdouble eta;
  cdouble eh, ehm1;
  cdouble epa, epa2m1, epabm1, epb2m1;
  cdouble eqb, eqabm1;
  cdouble el2, elh;
};

IntervalPack build_pack(const SpectralLayerState& st, const VerticalPartition& part, int i) {
  const LayeredModel& model = *st.model;
  const int L = static_cast<int>(model.tops.size());
  IntervalPack pk;
  pk.layer = part.layer[i];
  pk.a = part.breaks[i];
  pk.b = part.breaks[i + 1];
  pk.h = pk.b - pk.a;
  pk.eta = st.eta[pk.layer];
  const double d = model.top_of(pk.layer), dp = model.bottom_of(pk.layer);
  const double l = model.thickness(pk.layer);
  const cdouble eta = pk.eta;
  pk.ehm1 = cexpm1(-eta * pk.h);
  pk.eh = 1.0 + pk.ehm1;
  pk.el2 = st.e2l[pk.layer];
  pk.epa = 1.0;
  pk.epa2m1 = pk.epabm1 = pk.epb2m1 = cdouble(0.0);
  pk.eqb = 1.0;
  pk.eqabm1 = cdouble(0.0);
  const bool has_p = pk.layer > 0, has_q = pk.layer < L;
  if (has_p) {
    const cdouble epam1 = cexpm1(-eta * (pk.a - d));
    const cdouble epbm1 = epam1 + pk.ehm1 + epam1 * pk.ehm1;
    pk.epa = 1.0 + epam1;
    pk.epa2m1 = 2.0 * epam1 + epam1 * epam1;
    pk.epabm1 = epam1 + epbm1 + epam1 * epbm1;
    pk.epb2m1 = 2.0 * epbm1 + epbm1 * epbm1;
  }
  if (has_q) {
    const cdouble eqbm1 = cexpm1(-eta * (dp - pk.b));
    const cdouble eqam1 = eqbm1 + pk.ehm1 + eqbm1 * pk.ehm1;
    pk.eqb = 1.0 + eqbm1;
    pk.eqabm1 = eqam1 + eqbm1 + eqam1 * eqbm1;
  }
  pk.elh = (has_p && has_q) ? cexp(-eta * (2.0 * l - pk.h)) : cdouble(0.0);
  return pk;
}

// Per-interval building blocks of the moment tables, for one gamma.
struct IvFactors {
  cdouble H0, H1, theta, J0, J1;
  cdouble W00d, W10d, W11d, W20d;
};

IvFactors make_factors(const SpectralLayerState& st, const IntervalPack& pk) {
  const cdouble p = st.p[pk.layer], q = st.q[pk.layer], A = st.diag_a[pk.layer];
  const cdouble one_p = st.one_p[pk.layer], one_q = st.one_q[pk.layer];
  const cdouble eta = pk.eta;
  IvFactors f;
  const cdouble u = -pk.ehm1;                       // 1 - eh
  const cdouble Sa = one_p + p * pk.epa2m1;         // 1 + p e^{-2 eta (a-d)}
  const cdouble Sab = one_p + p * pk.epabm1;        // 1 + p e^{-eta (a+b-2d)}
  const cdouble Mab = (2.0 - one_p) - p * pk.epabm1;
  const cdouble Dp = one_p + p * pk.epb2m1;         // 1 + p e^{-2 eta (b-d)}
  const cdouble Tq = one_q + q * pk.eqabm1;         // 1 + q e^{-eta (2dp-a-b)}
  const cdouble TMq = (2.0 - one_q) - q * pk.eqabm1;
  f.theta = pk.eh * Sa / Dp;
  f.H0 = u * Sab / (eta * Dp);
  f.H1 = u * Mab / Dp;
  f.J0 = A * u * Sa * Tq / eta;
  f.J1 = -A * u * Sa * TMq;
  const cdouble Ip = pk.epa * u / eta;
  const cdouble Iq = pk.eqb * u / eta;
  const cdouble Sp = p * Ip * Ip, Sq = q * Iq * Iq;
  const cdouble M0 = 2.0 * (pk.h * eta + pk.ehm1) / (eta * eta);
  const cdouble P0 = 2.0 * (pk.elh * u / (eta * eta) - pk.h * pk.el2 / eta);
  f.W00d = A * (Sp + Sq + M0 + p * q * P0);
  f.W10d = A * eta * (Sq - Sp);
  // Both mixed-derivative moments need the kink line z = zs resolved, and the
  // two channels resolve it differently. The zz kernel keeps the full jump
  // content (the -2 h term): dropping it loses the cell contact term that the
  // coincident-cell entries need. The gradient kernel must NOT keep its jump
  // content: retaining it adds a spurious static quadrupole to the lateral
  // second-difference entries, equal and opposite in xx and yy. Both choices
  // were pinned against absolutely convergent position-space corner forms of
  // the whole-space dyadic kernel.
  f.W11d = A * (eta * eta * (Sp + Sq) + 2.0 * u - 2.0 * p * q * pk.elh * u) -
           2.0 * pk.h;
  f.W20d = eta * eta * f.W00d - 2.0 * pk.h;
  return f;
}

VerticalMomentTable fill_table(const SpectralLayerState& st,
                               const VerticalPartition& part,
                               const std::vector<IntervalPack>& packs) {
  const int nz = part.count();
  VerticalMomentTable tab;
  tab.nz = nz;
  tab.gamma = st.gamma;
  tab.lambda = st.lambda;
  for (auto& m : tab.w) m.assign(static_cast<size_t>(nz) * nz, cdouble(0.0));

  std::vector<IvFactors> f(nz);
  for (int i = 0; i < nz; ++i) f[i] = make_factors(st, packs[i]);

  auto& w00 = tab.w[0];
  auto& w10 = tab.w[1];
  auto& w01 = tab.w[2];
  auto& w11 = tab.w[3];
  auto& w20 = tab.w[4];
  auto& w02 = tab.w[5];
  auto id = [nz](int i, int j) { return static_cast<size_t>(i) * nz + j; };

  for (int i = 0; i < nz; ++i) {
    const cdouble ei2 = packs[i].eta * packs[i].eta;
    w00[id(i, i)] = f[i].W00d;
    w10[id(i, i)] = f[i].W10d;
    w01[id(i, i)] = f[i].W10d;
    w11[id(i, i)] = f[i].W11d;
    w20[id(i, i)] = f[i].W20d;
    w02[id(i, i)] = f[i].W20d;
    cdouble chain(1.0);
    for (int j = i + 1; j < nz; ++j) {
      const cdouble base0 = f[i].H0 * chain;
      const cdouble base1 = f[i].H1 * chain;
      const cdouble ej2 = packs[j].eta * packs[j].eta;
      const cdouble b00 = base0 * f[j].J0;
      w00[id(i, j)] = b00;
      w01[id(i, j)] = base0 * f[j].J1;
      w02[id(i, j)] = ej2 * b00;
      w10[id(i, j)] = base1 * f[j].J0;
      w11[id(i, j)] = base1 * f[j].J1;
      w20[id(i, j)] = ei2 * b00;
      chain *= f[j].theta;
    }
  }
  // lower triangle by reciprocity: swap derivative roles, weight by the
  // conductivity ratio when the derivative continuity is sigma-weighted
  for (int i = 1; i < nz; ++i)
    for (int j = 0; j < i; ++j) {
      cdouble ratio = (st.gamma == Gamma::cond)
                          ? st.sig[packs[i].layer] / st.sig[packs[j].layer]
                          : cdouble(1.0);
      w00[id(i, j)] = ratio * w00[id(j, i)];
      w10[id(i, j)] = ratio * w01[id(j, i)];
      w01[id(i, j)] = ratio * w10[id(j, i)];
      w11[id(i, j)] = ratio * w11[id(j, i)];
      w20[id(i, j)] = ratio * w02[id(j, i)];
      w02[id(i, j)] = ratio * w20[id(j, i)];
    }
  return tab;
}

}  // namespace

VerticalMomentTable vertical_moment_table(const SpectralLayerState& st,
                                          const VerticalPartition& part) {
  std::vector<IntervalPack> packs(part.count());
  for (int i = 0; i < part.count(); ++i) packs[i] = build_pack(st, part, i);
  return fill_table(st, part, packs);
}

std::pair<VerticalMomentTable, VerticalMomentTable> vertical_moment_tables(
    const SpectralLayerState& unit_state, const SpectralLayerState& cond_state,
    const VerticalPartition& part) {
  std::vector<IntervalPack> packs(part.count());
  for (int i = 0; i < part.count(); ++i) packs[i] = build_pack(unit_state, part, i);
  return {fill_table(unit_state, part, packs), fill_table(cond_state, part, packs)};
}

VFunctions v_functions(const VerticalMomentTable& unit_table,
                       const VerticalMomentTable& cond_table, int n, int m,
                       cdouble sigma_bn, double omega) {
  const cdouble iwmu(0.0, omega * mu0);
  VFunctions v;
  v.v1 = iwmu * unit_table.at(0, 0, n, m);
  v.v2 = iwmu * cond_table.at(0, 0, n, m);
  v.v3 = -cond_table.at(1, 1, n, m) / sigma_bn;
  v.v4 = cond_table.at(1, 0, n, m) / sigma_bn;
  v.v5 = cond_table.at(2, 0, n, m) / sigma_bn;
  return v;
}

namespace {

// P_m(za) / P_m(zb) for za <= zb inside layer m, via nonpositive exponents
cdouble p_ratio(const SpectralLayerState& st, int m, double za, double zb) {
  const cdouble eta = st.eta[m];
  const cdouble r = cexp(-eta * (zb - za));
  if (m == 0 || st.p[m] == 0.0) return r;
  const double d = st.model->top_of(m);
  const cdouble p = st.p[m], one_p = st.one_p[m];
  const cdouble Sa = one_p + p * cexpm1(-2.0 * eta * (za - d));
  const cdouble Sb = one_p + p * cexpm1(-2.0 * eta * (zb - d));
  return r * Sa / Sb;
}

// int_a^b Qbar(zs) dzs scaled by A and anchored at P(a):  A P(a) int_a^b Qbar
cdouble j0_piece(const SpectralLayerState& st, int m, double a, double b) {
  const cdouble p = st.p[m], q = st.q[m], A = st.diag_a[m], eta = st.eta[m];
  const LayeredModel& model = *st.model;
  const double d = model.top_of(m), dp = model.bottom_of(m);
  const cdouble u = -cexpm1(-eta * (b - a));
  cdouble Sa(1.0), Tq(1.0);
  if (p != 0.0) Sa = st.one_p[m] + p * cexpm1(-eta * 2.0 * (a - d));
  if (q != 0.0) Tq = st.one_q[m] + q * cexpm1(-eta * (2.0 * dp - a - b));
  return A / eta * u * Sa * Tq;
}

// mirror piece:  A Qbar(b) int_a^b P(zs) dzs
cdouble j0_mirror_piece(const SpectralLayerState& st, int m, double a, double b) {
  const cdouble p = st.p[m], q = st.q[m], A = st.diag_a[m], eta = st.eta[m];
  const LayeredModel& model = *st.model;
  const double d = model.top_of(m), dp = model.bottom_of(m);
  const cdouble u = -cexpm1(-eta * (b - a));
  cdouble Sab(1.0), Tq(1.0);
  if (p != 0.0) Sab = st.one_p[m] + p * cexpm1(-eta * (a + b - 2.0 * d));
  if (q != 0.0) Tq = st.one_q[m] + q * cexpm1(-eta * 2.0 * (dp - b));
  return A / eta * u * Sab * Tq;
}

}  // namespace

PointMomentTable point_moments(const SpectralLayerState& st,
                               const VerticalPartition& part, double z_obs) {
  const LayeredModel& model = *st.model;
  const int L = static_cast<int>(model.tops.size());
  const int nz = part.count();
  PointMomentTable out;
  out.nz = nz;
  out.m[0].assign(nz, cdouble(0.0));
  out.m[1].assign(nz, cdouble(0.0));

  const int r0 = model.layer_of(z_obs);
  const cdouble eta0 = st.eta[r0];

  // log-derivative of the decaying-up solution P at z_obs
  cdouble pfac1;
  if (r0 == 0 || st.p[r0] == 0.0) {
    pfac1 = eta0;
  } else {
    const cdouble em1 = cexpm1(-eta0 * 2.0 * (z_obs - model.top_of(r0)));
    pfac1 = eta0 * ((2.0 - st.one_p[r0]) - st.p[r0] * em1) /
            (st.one_p[r0] + st.p[r0] * em1);
  }
  // log-derivative of the decaying-down solution Qbar at z_obs
  cdouble qfac1;
  if (r0 == L || st.q[r0] == 0.0) {
    qfac1 = -eta0;
  } else {
    const cdouble em1 = cexpm1(-eta0 * 2.0 * (model.bottom_of(r0) - z_obs));
    qfac1 = -eta0 * ((2.0 - st.one_q[r0]) - st.q[r0] * em1) /
            (st.one_q[r0] + st.q[r0] * em1);
  }

  // index of the interval holding z_obs, or nz if z_obs is at/below the last
  // break, or -1 if at/above the first
  int k;
  if (z_obs <= part.breaks.front()) {
    k = -1;
  } else if (z_obs >= part.breaks.back()) {
    k = nz;
  } else {
    k = static_cast<int>(std::upper_bound(part.breaks.begin(), part.breaks.end(), z_obs) -
                         part.breaks.begin()) - 1;
  }

  // intervals above the observation depth: integrate the source-side P branch
  for (int j = 0; j < std::min(k, nz); ++j) {
    const IntervalPack pk = build_pack(st, part, j);
    const IvFactors f = make_factors(st, pk);
    cdouble u1 = fundamental_value(st, part.breaks[j + 1], z_obs);
    cdouble sfac = (st.gamma == Gamma::cond) ? st.sig[r0] / st.sig[part.layer[j]]
                                             : cdouble(1.0);
    out.m[0][j] = sfac * f.H0 * u1;
    out.m[1][j] = sfac * f.H0 * u1 * qfac1;
  }

  // interval containing z_obs: split at the observation depth; the boundary
  // terms of the two pieces cancel, so first derivatives stay classical
  if (k >= 0 && k < nz) {
    const int m = part.layer[k];
    cdouble upper = (z_obs > part.breaks[k])
                        ? j0_mirror_piece(st, m, part.breaks[k], z_obs)
                        : cdouble(0.0);
    cdouble lower = (z_obs < part.breaks[k + 1])
                        ? j0_piece(st, m, z_obs, part.breaks[k + 1])
                        : cdouble(0.0);
    out.m[0][k] = upper + lower;
    out.m[1][k] = qfac1 * upper + pfac1 * lower;
  }

  // intervals below: chain the observation-side P ratio down to each interval
  if (k < nz) {
    const int first = std::max(k + 1, 0);
    cdouble T(1.0);
    // walk from z_obs down to the top of the first covered interval
    double zcur = z_obs;
    const double zstop = part.breaks[first];
    int m = r0;
    while (zcur < zstop) {
      double seg_end = (m < L) ? std::min(model.bottom_of(m), zstop) : zstop;
      T *= p_ratio(st, m, zcur, seg_end);
      zcur = seg_end;
      if (zcur < zstop) ++m;
    }
    for (int j = first; j < nz; ++j) {
      const IntervalPack pk = build_pack(st, part, j);
      const IvFactors f = make_factors(st, pk);
      out.m[0][j] = T * f.J0;
      out.m[1][j] = pfac1 * T * f.J0;
      T *= f.theta;
    }
  }
  return out;
}

}  // namespace emie
