#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace emie {

using cdouble = std::complex<double>;

inline constexpr double mu0 = 1.2566370614359172e-06;  // 4*pi*1e-7 [H/m]
inline constexpr double pi = 3.141592653589793238462643383279502884;

// Complex 3-vector field on a structured grid, component-major:
// index = ((c*nz + iz)*ny + iy)*nx + ix, c in {x=0, y=1, z=2}.
struct GridVector {
  int nx = 0, ny = 0, nz = 0;
  std::vector<cdouble> a;

  GridVector() = default;
  GridVector(int nx_, int ny_, int nz_)
      : nx(nx_), ny(ny_), nz(nz_), a(static_cast<size_t>(3) * nx_ * ny_ * nz_) {}

  size_t size() const { return a.size(); }
  size_t idx(int c, int iz, int iy, int ix) const {
    return ((static_cast<size_t>(c) * nz + iz) * ny + iy) * nx + ix;
  }
  cdouble& at(int c, int iz, int iy, int ix) { return a[idx(c, iz, iy, ix)]; }
  const cdouble& at(int c, int iz, int iy, int ix) const { return a[idx(c, iz, iy, ix)]; }
};

}  // namespace emie
