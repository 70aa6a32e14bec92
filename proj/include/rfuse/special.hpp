#pragma once

namespace rfuse {

/// Digamma function psi(x) for x > 0: upward recurrence to x >= 6, then the
/// asymptotic Bernoulli series. Absolute error is below 1e-12 over (0, inf).
double digamma(double x);

}  // namespace rfuse
