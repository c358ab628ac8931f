#include "emie/quad.hpp"

#include <boost/math/special_functions/bessel.hpp>

namespace emie {

std::vector<double> bessel_zeros(int nu, int count) {
  if (nu != 0 && nu != 1) throw std::invalid_argument("bessel_zeros: nu must be 0 or 1");
  if (count < 0) throw std::invalid_argument("bessel_zeros: negative count");
  std::vector<double> z(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    z[static_cast<std::size_t>(k)] =
        boost::math::cyl_bessel_j_zero(static_cast<double>(nu), k + 1);
  }
  return z;
}

}  // namespace emie
