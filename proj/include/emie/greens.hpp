#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "emie/hankel.hpp"
#include "emie/layered.hpp"
#include "emie/types.hpp"

namespace emie {

// Anomalous domain: nx x ny uniform lateral cells of hx x hy meters, vertical
// intervals from a shared partition. sigma_a is the full cell conductivity
// (equal to the background where nothing is painted), sigma_b the background
// conductivity of each interval's host layer.
struct AnomalyGrid {
  int nx = 0, ny = 0;
  double hx = 0.0, hy = 0.0;
  double x0 = 0.0, y0 = 0.0;  // min corner of cell (ix, iy) = (0, 0)
  VerticalPartition part;
  std::vector<cdouble> sigma_a;  // [(iz*ny + iy)*nx + ix]
  std::vector<cdouble> sigma_b;  // per interval

  int nz() const { return part.count(); }
  std::size_t cell(int iz, int iy, int ix) const {
    return (static_cast<std::size_t>(iz) * ny + iy) * nx + ix;
  }
  double dz(int iz) const { return part.breaks[iz + 1] - part.breaks[iz]; }
  double volume(int iz) const { return hx * hy * dz(iz); }

  void validate(const LayeredModel& model) const;
};

// Grid with sigma_a preset to the background everywhere. Throws if any
// interval sits in a layer with no conduction (the scattering equation is
// written for anomalies buried in the conductive part of the section).
AnomalyGrid make_grid(const LayeredModel& model,
                      const std::vector<double>& breaks, int nx, int ny,
                      double hx, double hy, double x0, double y0);

// Paint sigma over an inclusive cell-index box; later calls overwrite.
void fill_box(AnomalyGrid& grid, int ix0, int ix1, int iy0, int iy1, int iz0,
              int iz1, cdouble sigma);

// Volume-integrated Green's tensor for one lateral offset, interval by
// interval: entry (k, kp) couples observation interval k to source interval
// kp, in Ohm m^3. The xx, yy, zz, xy parts are symmetric in (k, kp) and hold
// the upper triangle only; xz and yz are full. The zx, zy, yx parts are never
// stored: zx = -xz^T, zy = -yz^T, yx = xy at the same offset.
struct GreensBlock {
  int nz = 0;
  std::vector<cdouble> xx, yy, zz, xy;  // triangle, index tri(k, kp), k <= kp
  std::vector<cdouble> xz, yz;          // full, [k*nz + kp]

  static std::size_t tri(int k, int kp, int nz) {
    // row-major upper triangle: row k starts after k rows of nz, nz-1, ...
    return static_cast<std::size_t>(k) * nz - static_cast<std::size_t>(k) * (k - 1) / 2 +
           (kp - k);
  }
  std::size_t stored_count() const {
    return 2 * static_cast<std::size_t>(nz) * (2 * nz + 1);
  }
};

// Blocks for offsets i = 0..ny-1, j = 0..nx-1; negative offsets are
// reconstructed by parity, so the stored complex count is exactly
// 2 nx ny nz (2 nz + 1).
struct CompressedGreensOperator {
  int nx = 0, ny = 0, nz = 0;
  double omega = 0.0;
  std::vector<GreensBlock> blocks;  // [oi*nx + oj]

  const GreensBlock& stored(int oi, int oj) const;
  std::size_t stored_complex_count() const;
};

CompressedGreensOperator compress(int nx, int ny,
                                  std::vector<GreensBlock> blocks,
                                  double omega = 0.0);

// One full 3x3-of-matrices view at a signed offset. Component (a, b) of the
// tensor is q[3a + b], row-major nz x nz over (observation, source) intervals.
struct FullBlock {
  int nz = 0;
  std::array<std::vector<cdouble>, 9> q;

  const cdouble& at(int a, int b, int k, int kp) const {
    return q[3 * a + b][static_cast<std::size_t>(k) * nz + kp];
  }
};

FullBlock fetch_block(const CompressedGreensOperator& op, int offset_i,
                      int offset_j);

// Shared cache of vertical moment tables keyed by exact wavenumber. Every
// entry kernel at a given lambda draws on the same pair of tables, so one
// build serves all interval pairs and all tensor components; offsets whose
// abscissae coincide (square cells mirror x against y) share entries too.
// get() is safe for concurrent callers; the cache clears itself when the
// retained tables exceed the byte budget.
class MomentMemo {
 public:
  using TablePair = std::pair<VerticalMomentTable, VerticalMomentTable>;

  MomentMemo(const LayeredModel& model, const VerticalPartition& part,
             double omega, std::size_t byte_budget = std::size_t(1) << 28);

  std::shared_ptr<const TablePair> get(double lambda);

 private:
  const LayeredModel& model_;
  const VerticalPartition& part_;
  double omega_;
  std::size_t byte_budget_, bytes_per_entry_;
  std::unordered_map<std::uint64_t, std::shared_ptr<const TablePair>> map_;
  std::shared_mutex mu_;
};

// One block of the compressed operator, entries built as 1/(4 pi) times the
// filter-evaluated lateral integrals of the spectral kernels. offset_i and
// offset_j may be negative; the result is the block one would store there.
// The memo carries the layered model and frequency.
GreensBlock assemble_block(const AnomalyGrid& grid, double omega, int offset_i,
                           int offset_j, const FilterDesigner& designer,
                           MomentMemo& memo);
GreensBlock assemble_block(const AnomalyGrid& grid, const LayeredModel& model,
                           double omega, int offset_i, int offset_j,
                           const FilterParams& params = {});

// All nine components evaluated directly, each from its own filter sum with
// no use of the storage symmetries. Exists so consistency checks have an
// independently assembled object to compare against.
FullBlock assemble_block_full(const AnomalyGrid& grid, double omega,
                              int offset_i, int offset_j,
                              const FilterDesigner& designer, MomentMemo& memo);

// All stored blocks, parallel over offsets.
CompressedGreensOperator assemble_operator(const AnomalyGrid& grid,
                                           const LayeredModel& model,
                                           double omega,
                                           const FilterParams& params = {});

// Binary snapshot of a compressed operator. load returns nothing when the
// file is absent, from an older layout, or truncated.
void save_operator(const std::string& path, const CompressedGreensOperator& op);
std::optional<CompressedGreensOperator> load_operator(const std::string& path);

}  // namespace emie
