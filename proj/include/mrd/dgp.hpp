#pragma once

#include <array>
#include <cmath>
#include <string>

#include "mrd/errors.hpp"
#include "mrd/geometry.hpp"
#include "mrd/rng.hpp"

namespace mrd {

// Saturated polynomial surfaces in rotated coordinates: X runs along the
// boundary, the sign of Y sets treatment. Term order:
//   1, X..X^5, Y..Y^5, XY, X^2Y, XY^2, X^2Y^2, X^3Y, XY^3.
inline constexpr int kNumPolyTerms = 17;

inline const std::array<const char*, kNumPolyTerms>& poly_term_names() {
  static const std::array<const char*, kNumPolyTerms> names = {
      "1",  "X",    "X^2",  "X^3",    "X^4",  "X^5",  "Y",      "Y^2", "Y^3",
      "Y^4", "Y^5", "X*Y", "X^2*Y", "X*Y^2", "X^2*Y^2", "X^3*Y", "X*Y^3"};
  return names;
}

inline double eval_poly(const std::array<double, kNumPolyTerms>& c, double x,
                        double y) {
  const double x2 = x * x, x3 = x2 * x, x4 = x3 * x, x5 = x4 * x;
  const double y2 = y * y, y3 = y2 * y, y4 = y3 * y, y5 = y4 * y;
  return c[0] + c[1] * x + c[2] * x2 + c[3] * x3 + c[4] * x4 + c[5] * x5 +
         c[6] * y + c[7] * y2 + c[8] * y3 + c[9] * y4 + c[10] * y5 +
         c[11] * x * y + c[12] * x2 * y + c[13] * x * y2 + c[14] * x2 * y2 +
         c[15] * x3 * y + c[16] * x * y3;
}

struct DesignSpec {
  int id = 0;
  std::array<double, kNumPolyTerms> control{};
  std::array<double, kNumPolyTerms> treated{};
  double x_lo = -50.0, x_hi = 50.0;
  double y_lo = -30.0, y_hi = 30.0;
  double noise_std = 0.1295;
  bool lpm = false;  // Bernoulli outcomes from the clamped mean

  double true_theta() const { return treated[0] - control[0]; }
};

inline DesignSpec make_design(int id) {
  DesignSpec d;
  d.id = id;
  switch (id) {
    case 1:
      d.control = {0.351330594, 0.0016345305, 0.0001058476, 8.255e-07, 5.9e-09,
                   1e-10, 0.0053400898, 2.4132e-05, -1.83e-08, -4e-10, -0.0,
                   4.50874e-05, 1.0092e-06, 3.368e-07, 2e-10, 8e-10, 1.07e-08};
      d.treated = {0.6585339043, 0.000775413, 5.94362e-05, -1.3635e-06, 4.988e-07,
                   1.69e-08, 0.0032217053, -6.65157e-05, 2.97e-06, -3.79e-08, 1e-10,
                   -1.03557e-05, -4.2481e-06, 3.884e-07, 4.4e-09, -6e-10, -1.027e-07};
      break;
    case 2:
      d.control = {0.36273926, -0.0021631216, 5.15506e-05, 8.953e-07, -7.4e-09,
                   1e-10, 0.0046917496, 1.61902e-05, -3.67e-08, -4e-10, -0.0,
                   1.50884e-05, 2.408e-07, 3.25e-07, 2e-10, 8e-10, 1.07e-08};
      d.treated = {0.7242674163, -0.0040502435, -0.0004489873, 4.78549e-05, -1.5242e-06,
                   1.69e-08, 0.0024425863, -7.33327e-05, 2.9837e-06, -3.79e-08, 1e-10,
                   1.61465e-05, 3.1439e-06, 1.796e-07, 4.4e-09, -6e-10, -1.027e-07};
      break;
    case 3:
      d.control = {0.5206142027, 0.0052087349, 8.183e-06, -8.79e-08, -4e-10,
                   -0.0, -0.0021581664, 2.64291e-05, 1.5009e-06, -1.18e-08, 1e-10,
                   3.3066e-05, 3.854e-07, -1.5e-09, 2e-10, 1.07e-08, 8e-10};
      d.treated = {0.7549214382, 0.0025430669, 3.01802e-05, -1.152e-07, -1.75e-08,
                   1e-10, 0.014353943, -0.0021086853, 0.0001045443, -2.1986e-06,
                   1.69e-08, -4.90521e-05, 6.19e-08, 5.8515e-06, 4.4e-09,
                   -1.027e-07, -6e-10};
      break;
    case 4:
      d.control = {0.7458374267, 0.0052893523, -8.065e-06, -1.737e-07, -6e-10,
                   -0.0, -3.26995e-05, 2.68002e-05, 1.9491e-06, -1.18e-08, 1e-10,
                   6.94992e-05, 4.82e-07, 1.92e-08, 2e-10, 1.07e-08, 8e-10};
      d.treated = {0.8710000105, 0.0015475707, -6.16581e-05, -4.855e-07, 1.31e-08,
                   1e-10, 0.0123605658, -0.0018552507, 0.0001002323, -2.1986e-06,
                   1.69e-08, -4.68808e-05, -1.02e-08, 6.2169e-06, 4.4e-09,
                   -1.027e-07, -6e-10};
      break;
    default:
      throw InvalidArgumentError("make_design: id must be in 1..4");
  }
  return d;
}

// Mean surface; treated polynomial applies on the closed upper half-plane.
inline double eval_mean(const DesignSpec& d, double z1, double z2) {
  if (z1 < d.x_lo || z1 > d.x_hi || z2 < d.y_lo || z2 > d.y_hi)
    throw InvalidArgumentError("eval_mean: point outside the design support");
  return eval_poly(z2 >= 0.0 ? d.treated : d.control, z1, z2);
}

// All-treated rectangle R1 ~ U[-1,1], R2 ~ U[0,1] with the evaluation point
// at the origin: the design behind the distance-density diagnostics, where
// P(|R| <= z) = (pi/4) z^2 near zero.
inline Dataset sample_uniform_half_rect(int n, std::uint64_t seed,
                                        double noise_std = 0.0) {
  if (n < 1) throw InvalidArgumentError("sample_uniform_half_rect: n must be >= 1");
  Rng rng(seed);
  Dataset out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double r1 = rng.uniform(-1.0, 1.0);
    const double r2 = rng.uniform();
    const double y = noise_std > 0.0 ? rng.normal(0.0, noise_std) : 0.0;
    out.push_back(y, r1, r2, true);
  }
  return out;
}

// One simulation draw: X uniform on the support, Y from a rescaled Beta(2,4),
// Gaussian noise (or Bernoulli outcomes in LPM mode). Deterministic in seed.
inline Dataset sample(const DesignSpec& d, int n, std::uint64_t seed) {
  if (n < 1) throw InvalidArgumentError("sample: n must be >= 1");
  Rng rng(seed);
  Dataset out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double u1 = rng.uniform(-1.0, 1.0);
    const double u2 = 2.0 * rng.beta_2_4() - 1.0;
    const double z1 = d.x_lo + 0.5 * (u1 + 1.0) * (d.x_hi - d.x_lo);
    const double z2 = d.y_lo + 0.5 * (u2 + 1.0) * (d.y_hi - d.y_lo);
    const double m = eval_mean(d, z1, z2);
    double y;
    if (d.lpm) {
      const double p = std::clamp(m, 0.0, 1.0);
      y = rng.uniform() < p ? 1.0 : 0.0;
    } else {
      y = m + rng.normal(0.0, d.noise_std);
    }
    out.push_back(y, z1, z2, z2 >= 0.0);
  }
  return out;
}

}  // namespace mrd
