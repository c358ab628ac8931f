#include "emie/toeplitz.hpp"

#include <complex>
#include <cstring>
#include <map>
#include <mutex>
#include <stdexcept>
#include <utility>

#include <fftw3.h>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace emie {

int smooth_embedding_size(int n) {
  if (n < 1) throw std::invalid_argument("smooth_embedding_size: n < 1");
  for (int c = n;; ++c) {
    int r = c;
    for (int f : {2, 3, 5})
      while (r % f == 0) r /= f;
    if (r == 1) return c;
  }
}

namespace {

struct PlanPair {
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
};

// Plans keyed by embedding size, created once under a lock (planning is not
// reentrant) and executed concurrently through the new-array interface. The
// execute arrays all come from fftw_malloc, matching the alignment of the
// throwaway buffers the plans were created on.
PlanPair plans_for(int ex, int ey) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, PlanPair> cache;
  std::lock_guard lk(mu);
  auto it = cache.find({ex, ey});
  if (it != cache.end()) return it->second;
  const std::size_t n = static_cast<std::size_t>(ex) * ey;
  fftw_complex* a = fftw_alloc_complex(n);
  fftw_complex* b = fftw_alloc_complex(n);
  PlanPair p;
  p.fwd = fftw_plan_dft_2d(ey, ex, a, b, FFTW_FORWARD, FFTW_ESTIMATE);
  p.bwd = fftw_plan_dft_2d(ey, ex, a, b, FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_free(a);
  fftw_free(b);
  if (!p.fwd || !p.bwd) throw std::runtime_error("toeplitz: planning failed");
  cache.emplace(std::make_pair(ex, ey), p);
  return p;
}

// lateral parity of each stored component: +1 even, -1 odd, per direction
constexpr int parity_x[6] = {1, 1, 1, -1, -1, 1};
constexpr int parity_y[6] = {1, 1, 1, -1, 1, -1};

const std::vector<cdouble>& block_comp(const GreensBlock& b, int c) {
  switch (c) {
    case 0: return b.xx;
    case 1: return b.yy;
    case 2: return b.zz;
    case 3: return b.xy;
    case 4: return b.xz;
    default: return b.yz;
  }
}

struct FftwBuffer {
  fftw_complex* p = nullptr;
  explicit FftwBuffer(std::size_t n) : p(fftw_alloc_complex(n)) {
    if (!p) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(p); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  cdouble* c() { return reinterpret_cast<cdouble*>(p); }
};

}  // namespace

std::size_t SpectralOperator::stored_complex_count() const {
  std::size_t n = 0;
  for (const auto& v : comp) n += v.size();
  return n;
}

SpectralOperator transform_operator(const CompressedGreensOperator& op) {
  if (op.nx <= 0 || op.ny <= 0 || op.nz <= 0)
    throw std::invalid_argument("transform_operator: empty operator");
  SpectralOperator s;
  s.nx = op.nx;
  s.ny = op.ny;
  s.nz = op.nz;
  s.omega = op.omega;
  s.ex = smooth_embedding_size(2 * op.nx - 1);
  s.ey = smooth_embedding_size(2 * op.ny - 1);
  s.qx = s.ex / 2 + 1;
  s.qy = s.ey / 2 + 1;
  const std::size_t ntri =
      static_cast<std::size_t>(op.nz) * (op.nz + 1) / 2;
  const std::size_t nfull = static_cast<std::size_t>(op.nz) * op.nz;
  const std::size_t modes = s.mode_count();
  for (int c = 0; c < 6; ++c) s.comp[c].resize(modes * (c < 4 ? ntri : nfull));

  const PlanPair plans = plans_for(s.ex, s.ey);
  const std::size_t n = static_cast<std::size_t>(s.ex) * s.ey;

  // one transform per (component, matrix entry); the work splits into
  // independent pieces, each with its own scratch pair
  struct Piece {
    int c;
    std::size_t entry;
  };
  std::vector<Piece> pieces;
  for (int c = 0; c < 6; ++c)
    for (std::size_t e = 0; e < (c < 4 ? ntri : nfull); ++e)
      pieces.push_back({c, e});

#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    FftwBuffer win(n), wout(n);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (std::ptrdiff_t pi = 0;
         pi < static_cast<std::ptrdiff_t>(pieces.size()); ++pi) {
      const int c = pieces[pi].c;
      const std::size_t entry = pieces[pi].entry;
      const std::size_t nent = c < 4 ? ntri : nfull;
      const double sx = parity_x[c], sy = parity_y[c];
      std::memset(win.p, 0, n * sizeof(fftw_complex));
      cdouble* w = win.c();
      for (int oi = 0; oi < op.ny; ++oi)
        for (int oj = 0; oj < op.nx; ++oj) {
          const cdouble v = block_comp(op.stored(oi, oj), c)[entry];
          w[static_cast<std::size_t>(oi) * s.ex + oj] = v;
          if (oj > 0)
            w[static_cast<std::size_t>(oi) * s.ex + (s.ex - oj)] = sx * v;
          if (oi > 0)
            w[static_cast<std::size_t>(s.ey - oi) * s.ex + oj] = sy * v;
          if (oi > 0 && oj > 0)
            w[static_cast<std::size_t>(s.ey - oi) * s.ex + (s.ex - oj)] =
                sx * sy * v;
        }
      fftw_execute_dft(plans.fwd, win.p, wout.p);
      const cdouble* o = wout.c();
      for (int my = 0; my < s.qy; ++my)
        for (int mx = 0; mx < s.qx; ++mx)
          s.comp[c][(static_cast<std::size_t>(my) * s.qx + mx) * nent +
                    entry] = o[static_cast<std::size_t>(my) * s.ex + mx];
    }
  }
  return s;
}

GridVector apply(const SpectralOperator& sop, const GridVector& v) {
  const int nx = sop.nx, ny = sop.ny, nz = sop.nz;
  if (v.nx != nx || v.ny != ny || v.nz != nz ||
      v.size() != 3 * static_cast<std::size_t>(nx) * ny * nz)
    throw std::invalid_argument("apply: field shape does not match operator");
  const std::size_t n = static_cast<std::size_t>(sop.ex) * sop.ey;
  const std::size_t ntri = static_cast<std::size_t>(nz) * (nz + 1) / 2;
  const std::size_t nfull = static_cast<std::size_t>(nz) * nz;
  const PlanPair plans = plans_for(sop.ex, sop.ey);

  std::vector<cdouble> spec(3 * static_cast<std::size_t>(nz) * n);
  std::vector<cdouble> spec_out(3 * static_cast<std::size_t>(nz) * n);

#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    FftwBuffer win(n), wout(n);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int t = 0; t < 3 * nz; ++t) {
      const int c = t / nz, iz = t % nz;
      std::memset(win.p, 0, n * sizeof(fftw_complex));
      for (int iy = 0; iy < ny; ++iy)
        std::memcpy(win.c() + static_cast<std::size_t>(iy) * sop.ex,
                    v.a.data() + v.idx(c, iz, iy, 0),
                    static_cast<std::size_t>(nx) * sizeof(cdouble));
      fftw_execute_dft(plans.fwd, win.p, wout.p);
      std::memcpy(spec.data() + static_cast<std::size_t>(t) * n, wout.c(),
                  n * sizeof(cdouble));
    }
  }

  // index of the triangle slot holding (k, kp) in either order
  std::vector<std::size_t> tlut(nfull);
  for (int k = 0; k < nz; ++k)
    for (int kp = 0; kp < nz; ++kp)
      tlut[static_cast<std::size_t>(k) * nz + kp] =
          k <= kp ? GreensBlock::tri(k, kp, nz)
                  : GreensBlock::tri(kp, k, nz);

#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    std::vector<cdouble> ux(nz), uy(nz), uz(nz), ox(nz), oy(nz), oz(nz);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (std::ptrdiff_t m = 0; m < static_cast<std::ptrdiff_t>(n); ++m) {
      const int my = static_cast<int>(m) / sop.ex;
      const int mx = static_cast<int>(m) % sop.ex;
      int qmy = my, qmx = mx;
      double fy = 1.0, fx = 1.0;  // fold signs for the odd parities
      if (my > sop.ey / 2) {
        qmy = sop.ey - my;
        fy = -1.0;
      }
      if (mx > sop.ex / 2) {
        qmx = sop.ex - mx;
        fx = -1.0;
      }
      const std::size_t qm = static_cast<std::size_t>(qmy) * sop.qx + qmx;
      const cdouble* xxp = sop.comp[0].data() + qm * ntri;
      const cdouble* yyp = sop.comp[1].data() + qm * ntri;
      const cdouble* zzp = sop.comp[2].data() + qm * ntri;
      const cdouble* xyp = sop.comp[3].data() + qm * ntri;
      const cdouble* xzp = sop.comp[4].data() + qm * nfull;
      const cdouble* yzp = sop.comp[5].data() + qm * nfull;
      const double pxy = fx * fy, pxz = fx, pyz = fy;

      for (int k = 0; k < nz; ++k) {
        ux[k] = spec[(0 * static_cast<std::size_t>(nz) + k) * n + m];
        uy[k] = spec[(1 * static_cast<std::size_t>(nz) + k) * n + m];
        uz[k] = spec[(2 * static_cast<std::size_t>(nz) + k) * n + m];
        ox[k] = oy[k] = oz[k] = 0.0;
      }
      for (int k = 0; k < nz; ++k)
        for (int kp = 0; kp < nz; ++kp) {
          const std::size_t f = static_cast<std::size_t>(k) * nz + kp;
          const std::size_t ft = static_cast<std::size_t>(kp) * nz + k;
          const std::size_t s = tlut[f];
          const cdouble xyv = pxy * xyp[s];
          ox[k] += xxp[s] * ux[kp] + xyv * uy[kp] + pxz * xzp[f] * uz[kp];
          oy[k] += xyv * ux[kp] + yyp[s] * uy[kp] + pyz * yzp[f] * uz[kp];
          oz[k] += -pxz * xzp[ft] * ux[kp] - pyz * yzp[ft] * uy[kp] +
                   zzp[s] * uz[kp];
        }
      for (int k = 0; k < nz; ++k) {
        spec_out[(0 * static_cast<std::size_t>(nz) + k) * n + m] = ox[k];
        spec_out[(1 * static_cast<std::size_t>(nz) + k) * n + m] = oy[k];
        spec_out[(2 * static_cast<std::size_t>(nz) + k) * n + m] = oz[k];
      }
    }
  }

  GridVector out(nx, ny, nz);
  const double inv = 1.0 / static_cast<double>(n);
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    FftwBuffer win(n), wout(n);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int t = 0; t < 3 * nz; ++t) {
      const int c = t / nz, iz = t % nz;
      std::memcpy(win.c(), spec_out.data() + static_cast<std::size_t>(t) * n,
                  n * sizeof(cdouble));
      fftw_execute_dft(plans.bwd, win.p, wout.p);
      const cdouble* o = wout.c();
      for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix)
          out.at(c, iz, iy, ix) =
              inv * o[static_cast<std::size_t>(iy) * sop.ex + ix];
    }
  }
  return out;
}

GridVector dense_reference_apply(const CompressedGreensOperator& op,
                                 const GridVector& v) {
  const int nx = op.nx, ny = op.ny, nz = op.nz;
  const std::size_t cells = static_cast<std::size_t>(nx) * ny * nz;
  if (cells > 4096)
    throw std::invalid_argument("dense_reference_apply: grid too large");
  if (v.nx != nx || v.ny != ny || v.nz != nz || v.size() != 3 * cells)
    throw std::invalid_argument("dense_reference_apply: field shape");

  GridVector out(nx, ny, nz);
  for (int oi = -(ny - 1); oi <= ny - 1; ++oi)
    for (int oj = -(nx - 1); oj <= nx - 1; ++oj) {
      const FullBlock f = fetch_block(op, oi, oj);
      for (int iy = std::max(0, oi); iy < std::min(ny, ny + oi); ++iy)
        for (int ix = std::max(0, oj); ix < std::min(nx, nx + oj); ++ix) {
          const int sy = iy - oi, sx = ix - oj;
          for (int a = 0; a < 3; ++a)
            for (int k = 0; k < nz; ++k) {
              cdouble acc = 0.0;
              for (int b = 0; b < 3; ++b)
                for (int kp = 0; kp < nz; ++kp)
                  acc += f.at(a, b, k, kp) * v.at(b, kp, sy, sx);
              out.at(a, k, iy, ix) += acc;
            }
        }
    }
  return out;
}

}  // namespace emie
