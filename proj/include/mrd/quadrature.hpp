#pragma once

#include <cmath>
#include <functional>

namespace mrd {

namespace detail {

// Gauss-Kronrod 7-15 nodes and weights on [-1,1]
inline constexpr double kKronrodNodes[15] = {
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,                0.207784955007898,
    0.405845151377397,  0.586087235467691,  0.741531185599394,
    0.864864423359769,  0.949107912342759,  0.991455371120813};
inline constexpr double kKronrodWeights[15] = {
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728, 0.204432940075298,
    0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529};
inline constexpr double kGaussWeights[7] = {
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870};

template <class F>
void gk15(const F& f, double a, double b, double& result, double& error) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  double kron = 0.0, gauss = 0.0;
  for (int i = 0; i < 15; ++i) {
    const double v = f(c + h * kKronrodNodes[i]);
    kron += kKronrodWeights[i] * v;
    if (i % 2 == 1) gauss += kGaussWeights[i / 2] * v;
  }
  result = kron * h;
  error = std::abs(kron - gauss) * h;
}

template <class F>
double adaptive_gk_step(const F& f, double a, double b, double tol, int depth,
                        int force) {
  double result, error;
  gk15(f, a, b, result, error);
  // `force` levels are always refined: symmetric integrands can make the
  // first error estimates vanish by coincidence
  if (force <= 0 && (depth <= 0 || error <= tol)) return result;
  const double m = 0.5 * (a + b);
  return adaptive_gk_step(f, a, m, 0.5 * tol, depth - 1, force - 1) +
         adaptive_gk_step(f, m, b, 0.5 * tol, depth - 1, force - 1);
}

}  // namespace detail

// Adaptive Gauss-Kronrod on [a,b] to absolute tolerance `tol`.
template <class F>
double integrate_1d(const F& f, double a, double b, double tol = 1e-11,
                    int max_depth = 30) {
  if (!(b > a)) return 0.0;
  return detail::adaptive_gk_step(f, a, b, tol, max_depth, 1);
}

// Tensor-product adaptive 2D integral over [ax,bx] x [ay,by]; the inner
// integral runs at a tighter tolerance so its error does not pollute the
// outer one.
template <class F>
double integrate_2d(const F& f, double ax, double bx, double ay, double by,
                    double tol = 1e-10) {
  const double inner_tol = tol / (8.0 * std::max(1.0, by - ay));
  auto outer = [&](double y) {
    return integrate_1d([&](double x) { return f(x, y); }, ax, bx, inner_tol);
  };
  return integrate_1d(outer, ay, by, tol / 4.0);
}

// Integral of f over the half-disk {|z| <= 1, z2 >= 0 (upper) or z2 <= 0},
// computed in polar coordinates so the radial kink of cone-type integrands
// sits on the boundary of the domain.
template <class F>
double integrate_half_disk(const F& f, bool upper, double tol = 1e-10) {
  const double t0 = upper ? 0.0 : M_PI;
  const double t1 = upper ? M_PI : 2.0 * M_PI;
  const double inner_tol = tol / (8.0 * M_PI);
  auto outer = [&](double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    return integrate_1d([&](double r) { return f(r * c, r * s) * r; }, 0.0, 1.0,
                        inner_tol);
  };
  return integrate_1d(outer, t0, t1, tol / 4.0);
}

}  // namespace mrd
