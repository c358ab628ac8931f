#include "emie/cie.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>

namespace emie {

ContrastCoefficients contrast_coefficients(cdouble sigma_a, cdouble sigma_b) {
  if (!(sigma_b.real() > 0.0))
    throw std::invalid_argument(
        "contrast coefficients: background needs Re sigma > 0");
  const double den = 2.0 * std::sqrt(sigma_b.real());
  ContrastCoefficients c;
  c.a = (sigma_a + std::conj(sigma_b)) / den;
  c.b = (sigma_a - sigma_b) / den;
  c.gamma = (sigma_a - sigma_b) / (sigma_a + std::conj(sigma_b));
  if (!(std::abs(c.gamma) < 1.0))
    throw std::domain_error(
        "contrast coefficients: contraction factor reaches one");
  return c;
}

SystemOperator build_system(const AnomalyGrid& grid,
                            const SpectralOperator& op) {
  if (grid.nx != op.nx || grid.ny != op.ny || grid.nz() != op.nz)
    throw std::invalid_argument("build_system: grid and operator disagree");
  const int nz = grid.nz();
  const std::size_t cells =
      static_cast<std::size_t>(grid.nx) * grid.ny * nz;

  SystemOperator sys;
  sys.b = &op;
  sys.s.resize(cells);
  sys.r1.resize(cells);
  sys.r2.resize(cells);
  for (int iz = 0; iz < nz; ++iz) {
    const cdouble sb = grid.sigma_b[iz];
    if (!(sb.real() > 0.0))
      throw std::invalid_argument("build_system: interval without conduction");
    const double sq = std::sqrt(sb.real());
    const double r1 = 2.0 / grid.volume(iz) * sq;
    for (int iy = 0; iy < grid.ny; ++iy)
      for (int ix = 0; ix < grid.nx; ++ix) {
        const std::size_t n = grid.cell(iz, iy, ix);
        const ContrastCoefficients c =
            contrast_coefficients(grid.sigma_a[n], sb);
        sys.s[n] = 1.0 - c.gamma;
        sys.r1[n] = r1;
        sys.r2[n] = -sq * c.gamma;
      }
  }
  return sys;
}

GridVector apply(const SystemOperator& sys, const GridVector& u) {
  const SpectralOperator& b = *sys.b;
  if (u.nx != b.nx || u.ny != b.ny || u.nz != b.nz)
    throw std::invalid_argument("apply: field shape does not match system");
  const std::size_t cells = sys.s.size();

  GridVector t(u.nx, u.ny, u.nz);
  for (int c = 0; c < 3; ++c)
    for (std::size_t n = 0; n < cells; ++n)
      t.a[c * cells + n] = sys.r2[n] * u.a[c * cells + n];
  GridVector out = apply(b, t);
  for (int c = 0; c < 3; ++c)
    for (std::size_t n = 0; n < cells; ++n) {
      const std::size_t i = c * cells + n;
      out.a[i] = sys.s[n] * u.a[i] + sys.r1[n] * out.a[i];
    }
  return out;
}

namespace {

cdouble dot(const GridVector& u, const GridVector& v) {
  cdouble s = 0.0;
  for (std::size_t i = 0; i < u.a.size(); ++i)
    s += std::conj(u.a[i]) * v.a[i];
  return s;
}

double norm(const GridVector& u) {
  double s = 0.0;
  for (const cdouble& c : u.a) s += std::norm(c);
  return std::sqrt(s);
}

void axpy(GridVector& y, cdouble a, const GridVector& x) {
  for (std::size_t i = 0; i < y.a.size(); ++i) y.a[i] += a * x.a[i];
}

GridVector scaled(const GridVector& u, double a) {
  GridVector r = u;
  for (cdouble& c : r.a) c *= a;
  return r;
}

// rotation [[c, s], [-conj(s), c]] with real c that maps (f, g) to (r, 0)
void make_rotation(cdouble f, cdouble g, double& c, cdouble& s) {
  if (g == 0.0) {
    c = 1.0;
    s = 0.0;
  } else if (f == 0.0) {
    c = 0.0;
    s = std::conj(g) / std::abs(g);
  } else {
    const double t = std::sqrt(std::norm(f) + std::norm(g));
    c = std::abs(f) / t;
    s = f / std::abs(f) * std::conj(g) / t;
  }
}

}  // namespace

FgmresResult fgmres(const LinearMap& apply_a, const GridVector& rhs,
                    const SolverConfig& cfg) {
  if (!(cfg.tol > 0.0) || cfg.restart < 1 || cfg.max_iters < 1)
    throw std::invalid_argument("fgmres: bad solver configuration");

  FgmresResult res;
  res.x = GridVector(rhs.nx, rhs.ny, rhs.nz);
  const double bnorm = norm(rhs);
  if (bnorm == 0.0) {
    res.report.status = SolveStatus::converged;
    return res;
  }

  const int m = cfg.restart;
  GridVector r = rhs;  // residual of the zero start
  double rnorm = bnorm;
  int iter = 0;
  bool closed = false, pending_entry = false;

  while (iter < cfg.max_iters) {
    std::vector<GridVector> basis;
    std::vector<GridVector> dirs;  // preconditioned directions, flexible
    basis.reserve(m + 1);
    basis.push_back(scaled(r, 1.0 / rnorm));
    std::vector<cdouble> h(static_cast<std::size_t>(m + 1) * m);
    std::vector<double> rot_c(m);
    std::vector<cdouble> rot_s(m);
    std::vector<cdouble> g(m + 1);
    g[0] = rnorm;
    int cols = 0;

    for (int j = 0; j < m && iter < cfg.max_iters; ++j) {
      ++iter;
      cdouble* hj = h.data() + static_cast<std::size_t>(j) * (m + 1);
      GridVector w;
      if (cfg.right_precond) {
        dirs.push_back(cfg.right_precond(basis[j]));
        w = apply_a(dirs.back());
      } else {
        w = apply_a(basis[j]);
      }
      const double wn0 = norm(w);
      // modified Gram-Schmidt, run twice to hold orthogonality
      for (int pass = 0; pass < 2; ++pass)
        for (int i = 0; i <= j; ++i) {
          const cdouble hc = dot(basis[i], w);
          axpy(w, -hc, basis[i]);
          hj[i] += hc;
        }
      const double hnext = norm(w);
      for (int i = 0; i < j; ++i) {
        const cdouble t = rot_c[i] * hj[i] + rot_s[i] * hj[i + 1];
        hj[i + 1] = -std::conj(rot_s[i]) * hj[i] + rot_c[i] * hj[i + 1];
        hj[i] = t;
      }

      if (hnext <= 1e-13 * std::max(wn0, 1e-300)) {
        // The Krylov space closed. With a regular reduced system the exact
        // solution lies inside it; otherwise the iteration is stuck.
        double colmax = hnext;
        for (int i = 0; i <= j; ++i) colmax = std::max(colmax, std::abs(hj[i]));
        if (std::abs(hj[j]) > 1e-13 * std::max(colmax, 1e-300)) {
          cols = j + 1;
        } else {
          cols = j;
          broke = true;
          res.report.history.push_back(rnorm / bnorm);
          if (cfg.on_iteration) cfg.on_iteration(iter, rnorm / bnorm);
        }
        break;
      }

      hj[j + 1] = hnext;
      basis.push_back(scaled(w, 1.0 / hnext));
      make_rotation(hj[j], hnext, rot_c[j], rot_s[j]);
      const cdouble t = rot_c[j] * hj[j] + rot_s[j] * hj[j + 1];
      hj[j + 1] = 0.0;
      hj[j] = t;
      g[j + 1] = -std::conj(rot_s[j]) * g[j];
      g[j] = rot_c[j] * g[j];
      cols = j + 1;

      const double est = std::abs(g[j + 1]) / bnorm;
      res.report.history.push_back(est);
      if (cfg.on_iteration) cfg.on_iteration(iter, est);
      if (est <= cfg.tol) break;
    }

    if (cols > 0) {
      std::vector<cdouble> y(cols);
      for (int k = cols - 1; k >= 0; --k) {
        cdouble acc = g[k];
        for (int l = k + 1; l < cols; ++l)
          acc -= h[static_cast<std::size_t>(l) * (m + 1) + k] * y[l];
        y[k] = acc / h[static_cast<std::size_t>(k) * (m + 1) + k];
      }
      for (int k = 0; k < cols; ++k)
        axpy(res.x, y[k], cfg.right_precond ? dirs[k] : basis[k]);
    }

    GridVector rt = apply_a(res.x);
    for (std::size_t i = 0; i < rt.a.size(); ++i)
      rt.a[i] = rhs.a[i] - rt.a[i];
    rnorm = norm(rt);
    r = std::move(rt);

    if (rnorm / bnorm <= cfg.tol) {
      res.report.status = SolveStatus::converged;
      break;
    }
    if (broke) {
      res.report.status = SolveStatus::breakdown;
      break;
    }
  }
  if (broke && rnorm / bnorm <= cfg.tol)
    res.report.status = SolveStatus::converged;

  res.report.iterations = iter;
  res.report.residual = rnorm / bnorm;
  return res;
}

GridVector solve_cie(const AnomalyGrid& grid, const LayeredModel& model,
                     const SpectralOperator& op, const GridVector& rhs,
                     const SolverConfig& config, SolveReport* report) {
  grid.validate(model);
  const SystemOperator sys = build_system(grid, op);
  FgmresResult res = fgmres(
      [&](const GridVector& u) { return apply(sys, u); }, rhs, config);
  if (report) *report = std::move(res.report);
  return std::move(res.x);
}

}  // namespace emie
