#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mrd {

// splitmix64; used to derive independent stream seeds from (base, index).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x51ed2701a9e5f3d7ULL));
}

// Deterministic draws on top of mt19937_64. The standard distributions are
// implementation-defined, so uniforms come straight from the engine bits and
// everything else goes through inverse CDFs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // uniform on [0,1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // uniform on (0,1), safe for inverse-CDF transforms
  double uniform_open() {
    double u = uniform();
    return u > 0.0 ? u : 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal(double mean = 0.0, double sd = 1.0) {
    return mean + sd * normal_quantile(uniform_open());
  }

  // Beta(2,4) via Newton inversion of the closed-form CDF
  //   I_x(2,4) = 10 x^2 (1-x)^3 + 10 x^3 (1-x)^2 + 5 x^4 (1-x) + x^5,
  // density 20 x (1-x)^3.
  double beta_2_4() {
    const double u = uniform_open();
    double x = 0.3;  // near the mean 1/3
    for (int it = 0; it < 60; ++it) {
      const double omx = 1.0 - x;
      const double cdf = x * x * (10.0 * omx * omx * omx + x * (10.0 * omx * omx + x * (5.0 * omx + x)));
      const double pdf = 20.0 * x * omx * omx * omx;
      double step = (cdf - u) / (pdf > 1e-300 ? pdf : 1e-300);
      if (step > 0.4) step = 0.4;
      if (step < -0.4) step = -0.4;
      x -= step;
      if (x <= 0.0) x = 1e-12;
      if (x >= 1.0) x = 1.0 - 1e-12;
      if (std::abs(step) < 1e-14) break;
    }
    return x;
  }

  std::uint64_t bits() { return engine_(); }

  // Acklam's rational approximation with one Halley refinement;
  // accurate to full double precision over (0,1).
  static double normal_quantile(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
      const double q = std::sqrt(-2.0 * std::log(p));
      x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
          ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
      const double q = p - 0.5;
      const double r = q * q;
      x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
          (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
      const double q = std::sqrt(-2.0 * std::log(1.0 - p));
      x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
          ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley step against erfc
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mrd
