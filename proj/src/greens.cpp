#include "emie/greens.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace emie {

void AnomalyGrid::validate(const LayeredModel& model) const {
  if (nx <= 0 || ny <= 0 || part.count() <= 0)
    throw std::invalid_argument("grid: empty dimensions");
  if (!(hx > 0.0) || !(hy > 0.0))
    throw std::invalid_argument("grid: cell sizes must be positive");
  const std::size_t cells =
      static_cast<std::size_t>(nx) * ny * part.count();
  if (sigma_a.size() != cells || sigma_b.size() != static_cast<std::size_t>(part.count()))
    throw std::invalid_argument("grid: conductivity array sizes");
  for (const cdouble& s : sigma_a)
    if (!(s.real() >= 0.0))
      throw std::invalid_argument("grid: cell conductivity with negative real part");
  for (int iz = 0; iz < part.count(); ++iz)
    if (!(model.sigma[part.layer[iz]].real() > 0.0))
      throw std::invalid_argument(
          "grid: interval in a non-conducting layer; the anomaly must be "
          "buried in the conductive section");
}

AnomalyGrid make_grid(const LayeredModel& model,
                      const std::vector<double>& breaks, int nx, int ny,
                      double hx, double hy, double x0, double y0) {
  AnomalyGrid g;
  g.nx = nx;
  g.ny = ny;
  g.hx = hx;
  g.hy = hy;
  g.x0 = x0;
  g.y0 = y0;
  g.part = VerticalPartition::create(model, breaks);
  g.sigma_b.resize(g.part.count());
  for (int iz = 0; iz < g.part.count(); ++iz)
    g.sigma_b[iz] = model.sigma_floored(g.part.layer[iz]);
  g.sigma_a.resize(static_cast<std::size_t>(nx) * ny * g.part.count());
  for (int iz = 0; iz < g.part.count(); ++iz)
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) g.sigma_a[g.cell(iz, iy, ix)] = g.sigma_b[iz];
  g.validate(model);
  return g;
}

void fill_box(AnomalyGrid& grid, int ix0, int ix1, int iy0, int iy1, int iz0,
              int iz1, cdouble sigma) {
  if (ix0 < 0 || iy0 < 0 || iz0 < 0 || ix1 >= grid.nx || iy1 >= grid.ny ||
      iz1 >= grid.nz() || ix0 > ix1 || iy0 > iy1 || iz0 > iz1)
    throw std::invalid_argument("fill_box: index box out of range");
  for (int iz = iz0; iz <= iz1; ++iz)
    for (int iy = iy0; iy <= iy1; ++iy)
      for (int ix = ix0; ix <= ix1; ++ix) grid.sigma_a[grid.cell(iz, iy, ix)] = sigma;
}

const GreensBlock& CompressedGreensOperator::stored(int oi, int oj) const {
  if (oi < 0 || oj < 0 || oi >= ny || oj >= nx)
    throw std::out_of_range("stored: offset outside the stored sector");
  return blocks[static_cast<std::size_t>(oi) * nx + oj];
}

std::size_t CompressedGreensOperator::stored_complex_count() const {
  std::size_t n = 0;
  for (const GreensBlock& b : blocks) n += b.stored_count();
  return n;
}

CompressedGreensOperator compress(int nx, int ny,
                                  std::vector<GreensBlock> blocks,
                                  double omega) {
  if (blocks.size() != static_cast<std::size_t>(nx) * ny)
    throw std::invalid_argument("compress: need one block per non-negative offset");
  CompressedGreensOperator op;
  op.nx = nx;
  op.ny = ny;
  op.nz = blocks.empty() ? 0 : blocks[0].nz;
  op.omega = omega;
  const std::size_t ntri = static_cast<std::size_t>(op.nz) * (op.nz + 1) / 2;
  const std::size_t nfull = static_cast<std::size_t>(op.nz) * op.nz;
  for (const GreensBlock& b : blocks)
    if (b.nz != op.nz || b.xx.size() != ntri || b.yy.size() != ntri ||
        b.zz.size() != ntri || b.xy.size() != ntri || b.xz.size() != nfull ||
        b.yz.size() != nfull)
      throw std::invalid_argument("compress: block missing or malformed");
  op.blocks = std::move(blocks);
  return op;
}

MomentMemo::MomentMemo(const LayeredModel& model, const VerticalPartition& part,
                       double omega, std::size_t byte_budget)
    : model_(model), part_(part), omega_(omega), byte_budget_(byte_budget) {
  const std::size_t nz2 = static_cast<std::size_t>(part.count()) * part.count();
  bytes_per_entry_ = 2 * 6 * nz2 * sizeof(cdouble) + 256;
}

std::shared_ptr<const MomentMemo::TablePair> MomentMemo::get(double lambda) {
  const std::uint64_t key = std::bit_cast<std::uint64_t>(lambda);
  {
    std::shared_lock rl(mu_);
    auto it = map_.find(key);
    if (it != map_.end()) return it->second;
  }
  const SpectralLayerState su = build_spectral_state(model_, omega_, lambda, Gamma::unit);
  const SpectralLayerState sc = build_spectral_state(model_, omega_, lambda, Gamma::cond);
  auto tabs = std::make_shared<const TablePair>(vertical_moment_tables(su, sc, part_));
  std::unique_lock wl(mu_);
  if ((map_.size() + 1) * bytes_per_entry_ > byte_budget_) map_.clear();
  return map_.emplace(key, std::move(tabs)).first->second;
}

namespace {

// Weight sets for the six lateral kernels of one offset, in the order
// (0,0) (2,0) (0,2) (1,1) (1,0) (0,1).
struct OffsetFilters {
  PairGeometry g;
  std::array<FilterWeights, 6> w;
};

OffsetFilters design_offset_filters(const FilterDesigner& designer, int oi,
                                    int oj, double hx, double hy) {
  OffsetFilters f;
  f.g = pair_geometry(oi, oj, hx, hy);
  static constexpr int ab[6][2] = {{0, 0}, {2, 0}, {0, 2}, {1, 1}, {1, 0}, {0, 1}};
  for (int k = 0; k < 6; ++k) f.w[k] = designer.design(f.g, ab[k][0], ab[k][1]);
  return f;
}

void check_finite(const std::vector<cdouble>& v, const char* what) {
  for (const cdouble& c : v)
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag()))
      throw std::domain_error(std::string("assemble_block: non-finite ") + what);
}

}  // namespace

GreensBlock assemble_block(const AnomalyGrid& grid, double omega,
                           int offset_i, int offset_j,
                           const FilterDesigner& designer, MomentMemo& memo) {
  if (std::abs(offset_i) >= grid.ny || std::abs(offset_j) >= grid.nx)
    throw std::out_of_range("assemble_block: offset outside the grid");
  const int nz = grid.nz();
  const OffsetFilters of = design_offset_filters(designer, offset_i, offset_j,
                                                 grid.hx, grid.hy);
  const double R = of.g.r;
  const std::size_t ntri = static_cast<std::size_t>(nz) * (nz + 1) / 2;
  const std::size_t nfull = static_cast<std::size_t>(nz) * nz;

  // separate accumulators per weight stream; the radius powers differ
  std::vector<cdouble> a00(ntri), a20(ntri), a02(ntri), a11(ntri), az(ntri);
  std::vector<cdouble> axz(nfull), ayz(nfull);

  const std::size_t nt = of.w[0].lam.size();
  for (std::size_t t = 0; t < nt; ++t) {
    const double lambda = of.w[0].lam[t] / R;
    const auto tabs = memo.get(lambda);
    const double w00 = of.w[0].w[t], w20 = of.w[1].w[t], w02 = of.w[2].w[t];
    const double w11 = of.w[3].w[t], w10 = of.w[4].w[t], w01 = of.w[5].w[t];
    for (int k = 0; k < nz; ++k) {
      for (int kp = 0; kp < nz; ++kp) {
        const VFunctions v = v_functions(tabs->first, tabs->second, k, kp,
                                         grid.sigma_b[k], omega);
        const cdouble f4 = lambda * v.v4;
        const std::size_t fidx = static_cast<std::size_t>(k) * nz + kp;
        axz[fidx] += w10 * f4;
        ayz[fidx] += w01 * f4;
        if (k <= kp) {
          const std::size_t s = GreensBlock::tri(k, kp, nz);
          const cdouble f2 = (v.v1 + v.v3) / lambda;
          a00[s] += w00 * (lambda * v.v1);
          a20[s] += w20 * f2;
          a02[s] += w02 * f2;
          a11[s] += w11 * f2;
          az[s] += w00 * (lambda * (v.v2 + v.v5));
        }
      }
    }
  }

  const double c3 = R * R * R / (4.0 * pi);
  const double c2 = R * R / (4.0 * pi);
  const double c1 = R / (4.0 * pi);
  GreensBlock b;
  b.nz = nz;
  b.xx.resize(ntri);
  b.yy.resize(ntri);
  b.zz.resize(ntri);
  b.xy.resize(ntri);
  b.xz.resize(nfull);
  b.yz.resize(nfull);
  for (std::size_t s = 0; s < ntri; ++s) {
    b.xx[s] = c3 * a00[s] + c1 * a20[s];
    b.yy[s] = c3 * a00[s] + c1 * a02[s];
    b.zz[s] = c3 * az[s];
    b.xy[s] = c1 * a11[s];
  }
  for (std::size_t i = 0; i < nfull; ++i) {
    b.xz[i] = c2 * axz[i];
    b.yz[i] = c2 * ayz[i];
  }
  check_finite(b.xx, "xx");
  check_finite(b.yy, "yy");
  check_finite(b.zz, "zz");
  check_finite(b.xy, "xy");
  check_finite(b.xz, "xz");
  check_finite(b.yz, "yz");
  return b;
}

GreensBlock assemble_block(const AnomalyGrid& grid, const LayeredModel& model,
                           double omega, int offset_i, int offset_j,
                           const FilterParams& params) {
  FilterDesigner designer(params);
  MomentMemo memo(model, grid.part, omega);
  return assemble_block(grid, omega, offset_i, offset_j, designer, memo);
}

FullBlock assemble_block_full(const AnomalyGrid& grid, double omega,
                              int offset_i, int offset_j,
                              const FilterDesigner& designer,
                              MomentMemo& memo) {
  if (std::abs(offset_i) >= grid.ny || std::abs(offset_j) >= grid.nx)
    throw std::out_of_range("assemble_block_full: offset outside the grid");
  const int nz = grid.nz();
  const OffsetFilters of = design_offset_filters(designer, offset_i, offset_j,
                                                 grid.hx, grid.hy);
  const double R = of.g.r;
  const std::size_t nfull = static_cast<std::size_t>(nz) * nz;

  std::vector<cdouble> a00(nfull), a20(nfull), a02(nfull), a11(nfull), az(nfull);
  std::vector<cdouble> axz(nfull), ayz(nfull), azx(nfull), azy(nfull);

  const std::size_t nt = of.w[0].lam.size();
  for (std::size_t t = 0; t < nt; ++t) {
    const double lambda = of.w[0].lam[t] / R;
    const auto tabs = memo.get(lambda);
    const double w00 = of.w[0].w[t], w20 = of.w[1].w[t], w02 = of.w[2].w[t];
    const double w11 = of.w[3].w[t], w10 = of.w[4].w[t], w01 = of.w[5].w[t];
    for (int k = 0; k < nz; ++k) {
      for (int kp = 0; kp < nz; ++kp) {
        const VFunctions v = v_functions(tabs->first, tabs->second, k, kp,
                                         grid.sigma_b[k], omega);
        // source-side vertical derivative: same kernels viewed from the
        // other interval of the pair
        const VFunctions vs = v_functions(tabs->first, tabs->second, kp, k,
                                          grid.sigma_b[kp], omega);
        const std::size_t i = static_cast<std::size_t>(k) * nz + kp;
        const cdouble f2 = (v.v1 + v.v3) / lambda;
        a00[i] += w00 * (lambda * v.v1);
        a20[i] += w20 * f2;
        a02[i] += w02 * f2;
        a11[i] += w11 * f2;
        az[i] += w00 * (lambda * (v.v2 + v.v5));
        axz[i] += w10 * (lambda * v.v4);
        ayz[i] += w01 * (lambda * v.v4);
        azx[i] += w10 * (lambda * vs.v4);
        azy[i] += w01 * (lambda * vs.v4);
      }
    }
  }

  const double c3 = R * R * R / (4.0 * pi);
  const double c2 = R * R / (4.0 * pi);
  const double c1 = R / (4.0 * pi);
  FullBlock f;
  f.nz = nz;
  for (auto& q : f.q) q.resize(nfull);
  for (std::size_t i = 0; i < nfull; ++i) {
    f.q[0][i] = c3 * a00[i] + c1 * a20[i];  // xx
    f.q[4][i] = c3 * a00[i] + c1 * a02[i];  // yy
    f.q[8][i] = c3 * az[i];                 // zz
    f.q[1][i] = c1 * a11[i];                // xy; yx shares the defining sum
    f.q[3][i] = f.q[1][i];
    f.q[2][i] = c2 * axz[i];                // xz
    f.q[5][i] = c2 * ayz[i];                // yz
    f.q[6][i] = -c2 * azx[i];               // zx
    f.q[7][i] = -c2 * azy[i];               // zy
  }
  return f;
}

FullBlock fetch_block(const CompressedGreensOperator& op, int offset_i,
                      int offset_j) {
  if (std::abs(offset_i) >= op.ny || std::abs(offset_j) >= op.nx)
    throw std::out_of_range("fetch_block: offset out of range");
  const GreensBlock& b = op.stored(std::abs(offset_i), std::abs(offset_j));
  const int nz = op.nz;
  const double sx = offset_j < 0 ? -1.0 : 1.0;  // x-odd components
  const double sy = offset_i < 0 ? -1.0 : 1.0;  // y-odd components

  FullBlock f;
  f.nz = nz;
  for (auto& q : f.q) q.resize(static_cast<std::size_t>(nz) * nz);
  for (int k = 0; k < nz; ++k) {
    for (int kp = 0; kp < nz; ++kp) {
      const std::size_t i = static_cast<std::size_t>(k) * nz + kp;
      const std::size_t s = k <= kp ? GreensBlock::tri(k, kp, nz)
                                    : GreensBlock::tri(kp, k, nz);
      f.q[0][i] = b.xx[s];
      f.q[4][i] = b.yy[s];
      f.q[8][i] = b.zz[s];
      f.q[1][i] = sx * sy * b.xy[s];
      f.q[3][i] = f.q[1][i];
      f.q[2][i] = sx * b.xz[i];
      f.q[5][i] = sy * b.yz[i];
    }
  }
  // vertical-transpose relations at the fetched offset
  for (int k = 0; k < nz; ++k)
    for (int kp = 0; kp < nz; ++kp) {
      const std::size_t i = static_cast<std::size_t>(k) * nz + kp;
      const std::size_t it = static_cast<std::size_t>(kp) * nz + k;
      f.q[6][i] = -f.q[2][it];
      f.q[7][i] = -f.q[5][it];
    }
  return f;
}

CompressedGreensOperator assemble_operator(const AnomalyGrid& grid,
                                           const LayeredModel& model,
                                           double omega,
                                           const FilterParams& params) {
  grid.validate(model);
  const int n_off = grid.ny * grid.nx;
  int nthreads = 1;
#ifdef _OPENMP
  nthreads = omp_get_max_threads();
#endif
  // plan creation is not reentrant, so designers are made up front
  std::vector<std::unique_ptr<FilterDesigner>> designers;
  designers.reserve(nthreads);
  for (int t = 0; t < nthreads; ++t)
    designers.push_back(std::make_unique<FilterDesigner>(params));
  MomentMemo memo(model, grid.part, omega);
  std::vector<GreensBlock> blocks(n_off);
  std::atomic<bool> failed{false};
  std::exception_ptr err;
  static std::mutex err_mu;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int o = 0; o < n_off; ++o) {
    if (failed.load(std::memory_order_relaxed)) continue;
    int tid = 0;
#ifdef _OPENMP
    tid = omp_get_thread_num();
#endif
    try {
      blocks[o] = assemble_block(grid, omega, o / grid.nx, o % grid.nx,
                                 *designers[tid], memo);
    } catch (...) {
      std::lock_guard lk(err_mu);
      if (!failed.exchange(true)) err = std::current_exception();
    }
  }
  if (failed.load()) std::rethrow_exception(err);
  return compress(grid.nx, grid.ny, std::move(blocks), omega);
}

namespace {

constexpr std::uint32_t cache_magic = 0x454d4731;  // "EMG1"

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
bool take(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return bool(is);
}

void put_vec(std::ostream& os, const std::vector<cdouble>& v) {
  put(os, static_cast<std::uint64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(cdouble)));
}

bool take_vec(std::istream& is, std::vector<cdouble>& v, std::size_t expect) {
  std::uint64_t n = 0;
  if (!take(is, n) || n != expect) return false;
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(cdouble)));
  return bool(is);
}

}  // namespace

void save_operator(const std::string& path,
                   const CompressedGreensOperator& op) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_operator: cannot open " + path);
  put(os, cache_magic);
  put(os, static_cast<std::int32_t>(op.nx));
  put(os, static_cast<std::int32_t>(op.ny));
  put(os, static_cast<std::int32_t>(op.nz));
  put(os, op.omega);
  for (const GreensBlock& b : op.blocks) {
    put_vec(os, b.xx);
    put_vec(os, b.yy);
    put_vec(os, b.zz);
    put_vec(os, b.xy);
    put_vec(os, b.xz);
    put_vec(os, b.yz);
  }
  if (!os) throw std::runtime_error("save_operator: write failed on " + path);
}

std::optional<CompressedGreensOperator> load_operator(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  std::uint32_t magic = 0;
  std::int32_t nx = 0, ny = 0, nz = 0;
  double omega = 0.0;
  if (!take(is, magic) || magic != cache_magic) return std::nullopt;
  if (!take(is, nx) || !take(is, ny) || !take(is, nz) || !take(is, omega))
    return std::nullopt;
  if (nx <= 0 || ny <= 0 || nz <= 0) return std::nullopt;
  const std::size_t ntri = static_cast<std::size_t>(nz) * (nz + 1) / 2;
  const std::size_t nfull = static_cast<std::size_t>(nz) * nz;
  std::vector<GreensBlock> blocks(static_cast<std::size_t>(nx) * ny);
  for (GreensBlock& b : blocks) {
    b.nz = nz;
    if (!take_vec(is, b.xx, ntri) || !take_vec(is, b.yy, ntri) ||
        !take_vec(is, b.zz, ntri) || !take_vec(is, b.xy, ntri) ||
        !take_vec(is, b.xz, nfull) || !take_vec(is, b.yz, nfull))
      return std::nullopt;
  }
  return compress(nx, ny, std::move(blocks), omega);
}

}  // namespace emie
