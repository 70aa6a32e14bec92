#include "rfuse/special.hpp"

#include "rfuse/errors.hpp"

#include <cmath>

namespace rfuse {

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw ValidationError("digamma requires a finite positive argument");
  }
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // psi(x) ~ ln x - 1/(2x) - sum_k B_2k / (2k x^2k)
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  return result + std::log(x) - 0.5 * inv - series;
}

}  // namespace rfuse
