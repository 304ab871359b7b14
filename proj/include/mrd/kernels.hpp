#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>

#include "mrd/errors.hpp"
#include "mrd/quadrature.hpp"

namespace mrd {

// Admissible kernels. All are supported on [-1,1]^2, integrate to one on
// their half-plane, and have vanishing odd z1-moments, which is what the
// bandwidth formulas require once the boundary is rotated onto the z1-axis.
enum class KernelFamily { product_triangular, product_epanechnikov, cone };

enum class Side { plus, minus };

struct KernelSpec {
  KernelFamily family = KernelFamily::product_triangular;
  Side side = Side::plus;
};

inline const char* to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::product_triangular: return "product-triangular";
    case KernelFamily::product_epanechnikov: return "product-epanechnikov";
    case KernelFamily::cone: return "cone";
  }
  return "?";
}

inline const char* to_string(Side s) { return s == Side::plus ? "plus" : "minus"; }

namespace detail {

// two-sided triangular (1-|u|) on [-1,1]
inline double tri2(double u) {
  const double a = std::abs(u);
  return a <= 1.0 ? 1.0 - a : 0.0;
}

// one-sided triangular 2(1-u) on [0,1]
inline double tri1(double u) { return (u >= 0.0 && u <= 1.0) ? 2.0 * (1.0 - u) : 0.0; }

inline double epan(double u) {
  const double a = std::abs(u);
  return a <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
}

// int u^a K1(u) du for the two-sided triangular; odd moments vanish
inline double mom_tri2(int a, int v) {
  if (a % 2 == 1) return 0.0;
  if (v == 1) return 2.0 / ((a + 1.0) * (a + 2.0));
  return 4.0 / ((a + 1.0) * (a + 2.0) * (a + 3.0));  // v == 2
}

// int_0^1 u^a {2(1-u)}^v du
inline double mom_tri1(int a, int v) {
  if (v == 1) return 2.0 / ((a + 1.0) * (a + 2.0));
  return 8.0 / ((a + 1.0) * (a + 2.0) * (a + 3.0));
}

inline double mom_epan(int a, int v) {
  if (a % 2 == 1) return 0.0;
  if (v == 1) return 3.0 / ((a + 1.0) * (a + 3.0));
  // (3/4)^2 (1-u^2)^2 integrated over [-1,1]
  return (9.0 / 8.0) * (1.0 / (a + 1.0) - 2.0 / (a + 3.0) + 1.0 / (a + 5.0));
}

// int_0^pi cos^a t sin^b t dt; zero for odd a
inline double angular(int a, int b) {
  if (a % 2 == 1) return 0.0;
  return std::exp(std::lgamma((a + 1.0) / 2.0) + std::lgamma((b + 1.0) / 2.0) -
                  std::lgamma((a + b) / 2.0 + 1.0));
}

// int_0^1 r^{s+1} (1-r)^v dr = B(s+2, v+1)
inline double radial(int s, int v) {
  if (v == 1) return 1.0 / ((s + 2.0) * (s + 3.0));
  return 2.0 / ((s + 2.0) * (s + 3.0) * (s + 4.0));
}

}  // namespace detail

// K_side(z) = K(z1, +-z2). Zero outside the support.
inline double kernel_eval(const KernelSpec& spec, double z1, double z2) {
  const double w2 = spec.side == Side::plus ? z2 : -z2;
  switch (spec.family) {
    case KernelFamily::product_triangular:
      return detail::tri2(z1) * detail::tri1(w2);
    case KernelFamily::product_epanechnikov:
      return detail::epan(z1) * detail::tri1(w2);
    case KernelFamily::cone: {
      if (w2 < 0.0) return 0.0;
      const double r = std::hypot(z1, w2);
      return r <= 1.0 ? (6.0 / M_PI) * (1.0 - r) : 0.0;
    }
  }
  return 0.0;
}

// kappa moment: int z1^a1 z2^a2 K_side^v(z) dz, by closed form.
inline double kernel_moment(const KernelSpec& spec, int a1, int a2, int v) {
  if (v != 1 && v != 2)
    throw InvalidArgumentError("kernel_moment: v must be 1 or 2");
  if (a1 < 0 || a2 < 0 || a1 + a2 > 8)
    throw InvalidArgumentError("kernel_moment: powers must be nonnegative with a1+a2 <= 8");
  const double sign2 = (spec.side == Side::minus && a2 % 2 == 1) ? -1.0 : 1.0;
  switch (spec.family) {
    case KernelFamily::product_triangular:
      return sign2 * detail::mom_tri2(a1, v) * detail::mom_tri1(a2, v);
    case KernelFamily::product_epanechnikov:
      return sign2 * detail::mom_epan(a1, v) * detail::mom_tri1(a2, v);
    case KernelFamily::cone: {
      const double c = std::pow(6.0 / M_PI, v);
      return sign2 * c * detail::radial(a1 + a2, v) * detail::angular(a1, a2);
    }
  }
  return 0.0;
}

// Same moment by adaptive quadrature; the independent route used by the
// verification suite and by restriction checks on arbitrary kernels.
inline double kernel_moment_quadrature(const KernelSpec& spec, int a1, int a2,
                                       int v, double tol = 1e-10) {
  auto integrand = [&](double z1, double z2) {
    return std::pow(z1, a1) * std::pow(z2, a2) *
           std::pow(kernel_eval(spec, z1, z2), v);
  };
  if (spec.family == KernelFamily::cone)
    return integrate_half_disk(integrand, spec.side == Side::plus, tol);
  const double y0 = spec.side == Side::plus ? 0.0 : -1.0;
  const double y1 = spec.side == Side::plus ? 1.0 : 0.0;
  // split at the z1 kink of the triangular/Epanechnikov factor
  return integrate_2d(integrand, -1.0, 0.0, y0, y1, 0.5 * tol) +
         integrate_2d(integrand, 0.0, 1.0, y0, y1, 0.5 * tol);
}

// The five moments that must vanish for the closed-form bandwidth selector:
//   int z1 K, int z1 z2 K, int z1 K^2, int z1 z2 K^2, int z1 z2^2 K.
struct RestrictionReport {
  std::array<double, 5> kappa{};
  bool satisfied = false;
};

inline RestrictionReport check_restriction(
    const std::function<double(double, double)>& kernel, bool upper_half,
    double tol = 1e-9) {
  auto mom = [&](int a1, int a2, int v) {
    auto integrand = [&](double z1, double z2) {
      return std::pow(z1, a1) * std::pow(z2, a2) * std::pow(kernel(z1, z2), v);
    };
    const double y0 = upper_half ? 0.0 : -1.0;
    const double y1 = upper_half ? 1.0 : 0.0;
    return integrate_2d(integrand, -1.0, 0.0, y0, y1, 5e-11) +
           integrate_2d(integrand, 0.0, 1.0, y0, y1, 5e-11);
  };
  RestrictionReport rep;
  rep.kappa = {mom(1, 0, 1), mom(1, 1, 1), mom(1, 0, 2), mom(1, 1, 2), mom(1, 2, 1)};
  rep.satisfied = true;
  for (double k : rep.kappa)
    if (std::abs(k) > tol) rep.satisfied = false;
  return rep;
}

inline RestrictionReport check_restriction(const KernelSpec& spec, double tol = 1e-9) {
  if (spec.family == KernelFamily::cone) {
    auto mom = [&](int a1, int a2, int v) {
      return kernel_moment_quadrature(spec, a1, a2, v, 5e-11);
    };
    RestrictionReport rep;
    rep.kappa = {mom(1, 0, 1), mom(1, 1, 1), mom(1, 0, 2), mom(1, 1, 2), mom(1, 2, 1)};
    rep.satisfied = true;
    for (double k : rep.kappa)
      if (std::abs(k) > tol) rep.satisfied = false;
    return rep;
  }
  return check_restriction(
      [&](double z1, double z2) { return kernel_eval(spec, z1, z2); },
      spec.side == Side::plus, tol);
}

// Monomial exponents in the stacking order (1, (z)_1, ..., (z)_p):
// degree blocks in increasing L, and within a block z1^L, z1^{L-1}z2, ..., z2^L.
inline std::vector<std::pair<int, int>> monomial_exponents(int p) {
  std::vector<std::pair<int, int>> out;
  for (int L = 0; L <= p; ++L)
    for (int j = 0; j <= L; ++j) out.emplace_back(L - j, j);
  return out;
}

// Moment matrices of a kernel at polynomial order p:
//   S    = int K z z' dz          (D x D)
//   Kcal = int K^2 z z' dz        (D x D)
//   B    = int K z (z)'_{p+1} dz  (D x Dbar)
// together with sTilde = S^{-1} e1 and the two scalar bandwidth constants.
struct MomentMatrices {
  int p = 1;
  Eigen::MatrixXd S;
  Eigen::MatrixXd Kcal;
  Eigen::MatrixXd B;
  Eigen::VectorXd sTilde;
  double sTilde11 = 0.0;  // sTilde1 kappa_1^{(2,1)} + sTilde3 kappa_{1,2}^{(2,1,1)}
  double sTilde22 = 0.0;  // sTilde1 kappa_2^{(2,1)} + sTilde3 kappa_2^{(3,1)}
  double var_const = 0.0;  // e1' S^{-1} Kcal S^{-1} e1
  double cond_S = 0.0;
};

inline MomentMatrices compute_moment_matrices(const KernelSpec& spec, int p) {
  if (p < 1 || p > 3)
    throw InvalidArgumentError("moment_matrices: p must be in {1,2,3}");
  const auto rows = monomial_exponents(p);
  std::vector<std::pair<int, int>> cols;  // multi-indices of length p+1
  for (int j = 0; j <= p + 1; ++j) cols.emplace_back(p + 1 - j, j);

  const int D = static_cast<int>(rows.size());
  const int Dbar = static_cast<int>(cols.size());
  MomentMatrices mm;
  mm.p = p;
  mm.S.resize(D, D);
  mm.Kcal.resize(D, D);
  mm.B.resize(D, Dbar);
  for (int i = 0; i < D; ++i) {
    for (int j = 0; j < D; ++j) {
      const int a1 = rows[i].first + rows[j].first;
      const int a2 = rows[i].second + rows[j].second;
      mm.S(i, j) = kernel_moment(spec, a1, a2, 1);
      mm.Kcal(i, j) = kernel_moment(spec, a1, a2, 2);
    }
    for (int j = 0; j < Dbar; ++j)
      mm.B(i, j) = kernel_moment(spec, rows[i].first + cols[j].first,
                                 rows[i].second + cols[j].second, 1);
  }

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(mm.S, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smin = svd.singularValues()(D - 1);
  if (!(smin > 1e-10))
    throw KernelUnsuitableError("moment matrix S is numerically singular");
  mm.cond_S = svd.singularValues()(0) / smin;

  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(D);
  e1(0) = 1.0;
  mm.sTilde = svd.solve(e1);
  mm.var_const = mm.sTilde.dot(mm.Kcal * mm.sTilde);
  // p >= 1 guarantees the linear block (rows 1, z1, z2) exists
  const double s1 = mm.sTilde(0);
  const double s3 = mm.sTilde(2);
  mm.sTilde11 = s1 * kernel_moment(spec, 2, 0, 1) + s3 * kernel_moment(spec, 2, 1, 1);
  mm.sTilde22 = s1 * kernel_moment(spec, 0, 2, 1) + s3 * kernel_moment(spec, 0, 3, 1);
  return mm;
}

// Cached per (family, side, p); these are constants of the method.
inline const MomentMatrices& moment_matrices(const KernelSpec& spec, int p) {
  static std::map<std::tuple<int, int, int>, MomentMatrices> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_tuple(static_cast<int>(spec.family),
                                   static_cast<int>(spec.side), p);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, compute_moment_matrices(spec, p)).first;
  return it->second;
}

}  // namespace mrd
