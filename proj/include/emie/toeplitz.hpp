#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "emie/greens.hpp"
#include "emie/types.hpp"

namespace emie {

// smallest integer >= n whose prime factors all lie in {2, 3, 5}
int smooth_embedding_size(int n);

// Lateral mode spectra of the compressed operator on a circulant embedding of
// size ex x ey >= (2 nx - 1) x (2 ny - 1). The offset sequence of every
// component is even or odd in each lateral direction and the discrete
// transform keeps those parities, so modes are stored for one quadrant only
// (mx <= ex/2, my <= ey/2), in the same six-component triangle layout the
// blocks use; the other three quadrants are sign flips of the stored one.
struct SpectralOperator {
  int nx = 0, ny = 0, nz = 0;
  int ex = 0, ey = 0;  // embedding grid
  int qx = 0, qy = 0;  // stored quadrant of modes
  double omega = 0.0;
  // mode-major: entry s of quadrant mode (my, mx) sits at
  // (my qx + mx) * entries + s; entries is the triangle size for the first
  // four components and nz^2 for the last two
  std::array<std::vector<cdouble>, 6> comp;  // xx yy zz xy | xz yz

  std::size_t mode_count() const {
    return static_cast<std::size_t>(qx) * qy;
  }
  std::size_t stored_complex_count() const;
};

SpectralOperator transform_operator(const CompressedGreensOperator& op);

// B v: zero-pad, 3 nz forward lateral transforms, a 3x3-of-(nz x nz) block
// multiply per lateral mode with the missing components rebuilt from parity
// signs and negative transposes, 3 nz backward transforms, truncation.
// The operator is immutable; concurrent calls on one operator are safe.
GridVector apply(const SpectralOperator& sop, const GridVector& v);

// plain O(N^2) summation over cell pairs through fetch_block; guarded to
// small grids, exists as the correctness reference for apply
GridVector dense_reference_apply(const CompressedGreensOperator& op,
                                 const GridVector& v);

}  // namespace emie
