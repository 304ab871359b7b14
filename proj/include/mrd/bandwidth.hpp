#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "mrd/errors.hpp"
#include "mrd/geometry.hpp"
#include "mrd/kernels.hpp"
#include "mrd/localpoly.hpp"

namespace mrd {

enum class BandwidthMode { heterogeneous, common, fixed };

inline const char* to_string(BandwidthMode m) {
  switch (m) {
    case BandwidthMode::heterogeneous: return "heterogeneous";
    case BandwidthMode::common: return "common";
    case BandwidthMode::fixed: return "fixed";
  }
  return "?";
}

// Estimated second-derivative differences and the bias-term building blocks
//   B1 = |(d11+ - d11-) sTilde11|,  B2 = |(d22+ - d22-) sTilde22|,
// with the sandwich covariance of (d11, d22) kept per side so callers can
// form variances of any linear functional of the bias estimates.
struct BiasTerms {
  double b1_hat = 0.0, b2_hat = 0.0;
  double var_b1 = 0.0, var_b2 = 0.0;
  double d11_plus = 0.0, d22_plus = 0.0;
  double d11_minus = 0.0, d22_minus = 0.0;
  double d12_plus = 0.0, d12_minus = 0.0;  // unused in B1/B2 by the kernel restriction
  Eigen::Matrix2d cov_plus = Eigen::Matrix2d::Zero();   // cov of (d11+, d22+)
  Eigen::Matrix2d cov_minus = Eigen::Matrix2d::Zero();
  // per-target windows the quadratic fits actually used (fallbacks included)
  double win11_plus_1 = 0.0, win11_plus_2 = 0.0;
  double win22_plus_1 = 0.0, win22_plus_2 = 0.0;
  double win11_minus_1 = 0.0, win11_minus_2 = 0.0;
  double win22_minus_1 = 0.0, win22_minus_2 = 0.0;
};

struct PreliminaryBandwidths {
  double b1 = 0.0;
  double b2 = 0.0;
  bool fallback = false;
};

struct BandwidthSelection {
  double sigma2_plus = 0.0, sigma2_minus = 0.0;
  double fhat = 1.0;            // density estimate at c (1 when unused)
  double pilot_plus = 0.0, pilot_minus = 0.0;
  double h1 = 0.0, h2 = 0.0;
  BandwidthMode mode = BandwidthMode::heterogeneous;
  double scale1 = 1.0, scale2 = 1.0;  // per-axis standardization factors
  BiasTerms bias;
  PreliminaryBandwidths prelim_plus, prelim_minus;
};

namespace detail {

struct SideStats {
  int count = 0;
  double range1 = 0.0;
  double range2 = 0.0;
  double sd1 = 0.0;
  double sd2 = 0.0;
};

inline SideStats side_stats(const Dataset& rot, Side side) {
  SideStats st;
  double lo1 = 0, hi1 = 0, lo2 = 0, hi2 = 0;
  double s1 = 0, q1 = 0, s2 = 0, q2 = 0;
  bool first = true;
  for (std::size_t i = 0; i < rot.size(); ++i) {
    const double z2 = rot.r2[i];
    if (side == Side::plus ? z2 < 0.0 : z2 >= 0.0) continue;
    const double z1 = rot.r1[i];
    if (first) {
      lo1 = hi1 = z1;
      lo2 = hi2 = z2;
      first = false;
    } else {
      lo1 = std::min(lo1, z1);
      hi1 = std::max(hi1, z1);
      lo2 = std::min(lo2, z2);
      hi2 = std::max(hi2, z2);
    }
    s1 += z1;
    q1 += z1 * z1;
    s2 += z2;
    q2 += z2 * z2;
    ++st.count;
  }
  st.range1 = hi1 - lo1;
  st.range2 = hi2 - lo2;
  if (st.count > 1) {
    const double m1 = s1 / st.count;
    const double m2 = s2 / st.count;
    st.sd1 = std::sqrt(std::max(0.0, q1 / st.count - m1 * m1));
    st.sd2 = std::sqrt(std::max(0.0, q2 / st.count - m2 * m2));
  }
  return st;
}

// Product-triangular KDE of the running-variable density at the origin.
inline double kde_at_origin(const Dataset& rot, double a1, double a2) {
  if (!(a1 > 0.0) || !(a2 > 0.0)) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < rot.size(); ++i)
    s += tri2(rot.r1[i] / a1) * tri2(rot.r2[i] / a2);
  return s / (rot.size() * a1 * a2);
}

// Axis-proportional window around the origin holding roughly k records of
// the side; the variance-at-the-cutoff window.
inline std::pair<double, double> knn_window(const Dataset& rot, Side side, int k) {
  double s1 = 0, s2 = 0, m1 = 0, m2 = 0;
  int cnt = 0;
  for (std::size_t i = 0; i < rot.size(); ++i) {
    const double z2 = rot.r2[i];
    if (side == Side::plus ? z2 < 0.0 : z2 >= 0.0) continue;
    m1 += rot.r1[i];
    m2 += z2;
    s1 += rot.r1[i] * rot.r1[i];
    s2 += z2 * z2;
    ++cnt;
  }
  if (cnt == 0) return {1.0, 1.0};
  m1 /= cnt;
  m2 /= cnt;
  const double sd1 = std::max(1e-12, std::sqrt(std::max(0.0, s1 / cnt - m1 * m1)));
  const double sd2 = std::max(1e-12, std::sqrt(std::max(0.0, s2 / cnt - m2 * m2)));
  std::vector<double> dist;
  dist.reserve(cnt);
  for (std::size_t i = 0; i < rot.size(); ++i) {
    const double z2 = rot.r2[i];
    if (side == Side::plus ? z2 < 0.0 : z2 >= 0.0) continue;
    dist.push_back(std::max(std::abs(rot.r1[i]) / sd1, std::abs(z2) / sd2));
  }
  const int kk = std::min<int>(std::max(k, 8), static_cast<int>(dist.size()));
  std::nth_element(dist.begin(), dist.begin() + (kk - 1), dist.end());
  const double t = std::max(dist[kk - 1], 1e-12);
  return {sd1 * t, sd2 * t};
}

inline double rule_of_thumb_density(const Dataset& rot) {
  const std::size_t n = rot.size();
  if (n < 2) return 1.0;
  double m1 = 0, m2 = 0, q1 = 0, q2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m1 += rot.r1[i];
    m2 += rot.r2[i];
    q1 += rot.r1[i] * rot.r1[i];
    q2 += rot.r2[i] * rot.r2[i];
  }
  m1 /= n;
  m2 /= n;
  const double sd1 = std::sqrt(std::max(1e-300, q1 / n - m1 * m1));
  const double sd2 = std::sqrt(std::max(1e-300, q2 / n - m2 * m2));
  const double rate = std::pow(static_cast<double>(n), -1.0 / 6.0);
  const double f = kde_at_origin(rot, sd1 * rate, sd2 * rate);
  return std::max(f, 1e-12);
}

struct QuarticStage {
  bool ok = false;
  std::array<double, 5> w4{};  // (d1111/24, d1112/6, d1122/4, d1222/6, d2222/24)
  Eigen::Matrix<double, 5, 5> cov4 = Eigen::Matrix<double, 5, 5>::Zero();
  double sigma2 = 0.0;
};

// Global quartic least squares on one side; coordinates are standardized
// internally for conditioning and the coefficients mapped back.
inline QuarticStage global_quartic(const Dataset& rot, Side side) {
  QuarticStage out;
  const auto exps = monomial_exponents(4);
  const int D = static_cast<int>(exps.size());  // 15
  std::vector<int> idx;
  for (std::size_t i = 0; i < rot.size(); ++i) {
    const double z2 = rot.r2[i];
    if (side == Side::plus ? z2 >= 0.0 : z2 < 0.0) idx.push_back(static_cast<int>(i));
  }
  const int n = static_cast<int>(idx.size());
  if (n < D + 2) return out;

  double s1 = 0, s2 = 0, q1 = 0, q2 = 0;
  for (int i : idx) {
    s1 += rot.r1[i];
    s2 += rot.r2[i];
    q1 += rot.r1[i] * rot.r1[i];
    q2 += rot.r2[i] * rot.r2[i];
  }
  const double sd1 = std::max(1e-12, std::sqrt(std::max(0.0, q1 / n - (s1 / n) * (s1 / n))));
  const double sd2 = std::max(1e-12, std::sqrt(std::max(0.0, q2 / n - (s2 / n) * (s2 / n))));

  Eigen::MatrixXd X(n, D);
  Eigen::VectorXd yv(n);
  for (int r = 0; r < n; ++r) {
    const double u1 = rot.r1[idx[r]] / sd1;
    const double u2 = rot.r2[idx[r]] / sd2;
    for (int k = 0; k < D; ++k)
      X(r, k) = std::pow(u1, exps[k].first) * std::pow(u2, exps[k].second);
    yv(r) = rot.y[idx[r]];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < D) return out;
  const Eigen::VectorXd beta = qr.solve(yv);
  out.sigma2 = (yv - X * beta).squaredNorm() / std::max(1, n - D);

  const Eigen::MatrixXd xtx_inv =
      (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(D, D));

  auto index_at = [&](int a1, int a2) {
    for (int k = 0; k < D; ++k)
      if (exps[k].first == a1 && exps[k].second == a2) return k;
    return -1;
  };
  const std::array<std::pair<int, int>, 5> deg4 = {
      std::pair{4, 0}, {3, 1}, {2, 2}, {1, 3}, {0, 4}};
  std::array<int, 5> ks{};
  std::array<double, 5> scale{};
  for (int c = 0; c < 5; ++c) {
    ks[c] = index_at(deg4[c].first, deg4[c].second);
    scale[c] = std::pow(sd1, deg4[c].first) * std::pow(sd2, deg4[c].second);
    out.w4[c] = beta(ks[c]) / scale[c];
  }
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b)
      out.cov4(a, b) = out.sigma2 * xtx_inv(ks[a], ks[b]) / (scale[a] * scale[b]);
  out.ok = true;
  return out;
}

// Plug-in constants for estimating the order-L derivatives with a local
// polynomial of order L at a common bandwidth b:
//   MSE(b) = (sum_t C_t^2) b^2 + sigma2 (sum_t V_t) / (f n b^{2+2L})
// with C_t built from the order-(L+1) derivative inputs. The minimizer is
// b^{4+2L} = (1+L) sigma2 sum V_t / (f n sum C_t^2).
struct PluginPieces {
  double sumC2 = 0.0;
  double sumV = 0.0;
};

inline PluginPieces plugin_pieces(const KernelSpec& spec, int L,
                                  std::span<const double> next_derivs_over_sfact) {
  const auto& mm = moment_matrices(spec, L);
  const auto& idx = MultiIndexSet::of(L);
  const Eigen::Map<const Eigen::VectorXd> w(next_derivs_over_sfact.data(),
                                            next_derivs_over_sfact.size());
  PluginPieces out;
  const Eigen::LDLT<Eigen::MatrixXd> Sld(mm.S);
  for (int k = 0; k < idx.size(); ++k) {
    const auto& e = idx.entries[k];
    if (e.a1 + e.a2 != L) continue;
    Eigen::VectorXd ek = Eigen::VectorXd::Zero(idx.size());
    ek(k) = 1.0;
    const Eigen::VectorXd Sinv_e = Sld.solve(ek);
    const double Ct = e.sfact * Sinv_e.dot(mm.B * w);
    const double Vt = e.sfact * e.sfact * Sinv_e.dot(mm.Kcal * Sinv_e);
    out.sumC2 += Ct * Ct;
    out.sumV += Vt;
  }
  return out;
}

}  // namespace detail

// Residual variance at the boundary point: kernel-weighted mean of squared
// residuals from a local-linear pilot fit on the given side.
inline double estimate_sigma2_rotated(const Dataset& rot, Side side, double b1,
                                      double b2, const KernelSpec& spec) {
  const LocalFit f = fit(rot, b1, b2, 1, side, spec);
  double num = 0.0;
  for (std::size_t j = 0; j < f.weights.size(); ++j)
    num += f.weights[j] * f.residuals[j] * f.residuals[j];
  return num / f.weight_sum;
}

inline double estimate_sigma2(const Dataset& data, const BoundaryFrame& frame,
                              Side side, double pilot_h,
                              const KernelSpec& spec = {}) {
  if (!(pilot_h > 0.0))
    throw InvalidArgumentError("estimate_sigma2: pilot bandwidth must be positive");
  return estimate_sigma2_rotated(rotate_to_frame(data, frame), side, pilot_h,
                                 pilot_h, spec);
}

// Rule-of-thumb bandwidth seeding the local-cubic step, from global-quartic
// curvature and residual variance; falls back to half the subsample range
// when the quartic is unavailable.
inline PreliminaryBandwidths preliminary_bandwidth_rotated(const Dataset& rot,
                                                           Side side,
                                                           const KernelSpec& spec,
                                                           double fhat) {
  const auto st = detail::side_stats(rot, side);
  PreliminaryBandwidths out;
  const double half_range = 0.5 * std::max(st.range1, st.range2);
  out.b1 = out.b2 = std::max(half_range, 1e-12);
  out.fallback = true;
  if (st.count < 17) return out;

  const auto quartic = detail::global_quartic(rot, side);
  if (!quartic.ok) return out;
  const auto pieces = detail::plugin_pieces(KernelSpec{spec.family, side}, 3,
                                            std::span<const double>(quartic.w4));
  const double n = static_cast<double>(rot.size());
  if (!(pieces.sumC2 > 1e-24) || !(quartic.sigma2 > 0.0)) return out;
  double b = std::pow(4.0 * quartic.sigma2 * pieces.sumV / (fhat * n * pieces.sumC2),
                      0.1);
  if (!std::isfinite(b) || !(b > 0.0)) return out;
  b = std::min(b, std::max(st.range1, st.range2));
  out.b1 = out.b2 = b;
  out.fallback = false;
  return out;
}

inline PreliminaryBandwidths preliminary_bandwidth(const Dataset& data,
                                                   const BoundaryFrame& frame,
                                                   Side side,
                                                   const KernelSpec& spec = {}) {
  const Dataset rot = rotate_to_frame(data, frame);
  return preliminary_bandwidth_rotated(rot, side, spec,
                                       detail::rule_of_thumb_density(rot));
}

struct PilotWindow {
  double b1 = 0.0;
  double b2 = 0.0;
};

// Per-target pilot windows: the two second derivatives live on different
// scales of the two axes, so each gets its own MSE-optimal window.
struct PilotWindows {
  PilotWindow w11;
  PilotWindow w22;
};

// Pilot window for the local-quadratic bias estimation on one side: per-axis
// bandwidths minimizing the plug-in MSE of the two second-derivative
// estimates,
//   sum_t [debiased 3rd-order bias_t^2 + 4th-order bias_t^2]
//     + sigma2/(f n) (V11 / (b1^5 b2) + V22 / (b1 b2^5)),
// with third-derivative inputs from a local-cubic fit at the preliminary
// bandwidth and fourth-derivative inputs from the global quartic. The
// squared third-order functionals are debiased by their sampling variance,
// so an axis with no curvature signal widens to the data range; the
// fourth-order term stops a window from growing into regions where the
// quadratic no longer fits.
inline PilotWindows pilot_window_rotated(const Dataset& rot, Side side,
                                         const PreliminaryBandwidths& prelim,
                                         double sigma2, const KernelSpec& spec,
                                         double fhat) {
  const auto st = detail::side_stats(rot, side);
  const double n = static_cast<double>(rot.size());
  const double hi1 = std::max(1e-12, st.range1);
  const double hi2 = std::max(1e-12, st.range2);
  const PilotWindow corner{hi1, hi2};

  std::optional<LocalFit> cubic;
  try {
    cubic = fit(rot, prelim.b1, prelim.b2, 3, side, spec);
  } catch (const InsufficientLocalDataError&) {
    try {
      cubic = fit(rot, 0.5 * hi1, 0.5 * hi2, 3, side, spec);
    } catch (const InsufficientLocalDataError&) {
      return {corner, corner};
    }
  }

  Eigen::Vector4d w3;  // cubic coefficients of the degree-3 block
  for (int k = 0; k < 4; ++k) w3(k) = cubic->coef(6 + k);
  const Eigen::Matrix4d cov =
      sandwich_covariance(*cubic, sigma2).block<4, 4>(6, 6);
  const auto quartic = detail::global_quartic(rot, side);
  Eigen::Matrix<double, 5, 1> w4 = Eigen::Matrix<double, 5, 1>::Zero();
  Eigen::Matrix<double, 5, 5> cov4 = Eigen::Matrix<double, 5, 5>::Zero();
  if (quartic.ok) {
    for (int k = 0; k < 5; ++k) w4(k) = quartic.w4[k];
    cov4 = quartic.cov4;
  }

  const KernelSpec side_spec{spec.family, side};
  const auto& mm2 = moment_matrices(side_spec, 2);
  const auto& idx2 = MultiIndexSet::of(2);
  const Eigen::LDLT<Eigen::MatrixXd> Sld(mm2.S);

  // per target t in {z1^2, z2^2}: contractions against the degree-3 and
  // degree-4 monomial blocks, plus the variance constants
  Eigen::Matrix<double, 2, 4> contr3;
  Eigen::Matrix<double, 2, 5> contr4;
  Eigen::Vector2d vconst;
  const std::array<int, 2> targets = {idx2.index_of(2, 0), idx2.index_of(0, 2)};
  const auto rows = monomial_exponents(2);
  for (int t = 0; t < 2; ++t) {
    Eigen::VectorXd ek = Eigen::VectorXd::Zero(idx2.size());
    ek(targets[t]) = 1.0;
    const Eigen::VectorXd Sinv_e = Sld.solve(ek);
    contr3.row(t) = (2.0 * mm2.B.transpose() * Sinv_e).transpose();  // s! = 2
    for (int c = 0; c <= 4; ++c) {
      double acc = 0.0;
      for (std::size_t rr = 0; rr < rows.size(); ++rr)
        acc += Sinv_e(rr) * kernel_moment(side_spec, rows[rr].first + 4 - c,
                                          rows[rr].second + c, 1);
      contr4(t, c) = 2.0 * acc;
    }
    vconst(t) = 4.0 * Sinv_e.dot(mm2.Kcal * Sinv_e);
  }

  // kernel-weighted second moments of the degree-4 remainder: its square
  // acts as extra residual noise inside wide windows
  Eigen::Matrix<double, 5, 5> mom4;
  for (int c = 0; c < 5; ++c)
    for (int cc = 0; cc < 5; ++cc)
      mom4(c, cc) = kernel_moment(side_spec, 8 - c - cc, c + cc, 1);

  // degree-3 columns (3,0)..(0,3); degree-4 columns (4,0)..(0,4)
  auto objective = [&](int t, double b1, double b2) {
    double p3[4], p4[5];
    for (int c = 0; c < 4; ++c) p3[c] = std::pow(b1, 3 - c) * std::pow(b2, c);
    for (int c = 0; c < 5; ++c) p4[c] = std::pow(b1, 4 - c) * std::pow(b2, c);
    const double denom = t == 0 ? b1 * b1 : b2 * b2;
    Eigen::Vector4d g3;
    for (int c = 0; c < 4; ++c) g3(c) = contr3(t, c) * p3[c] / denom;
    const double bias3 = g3.dot(w3);
    double J = std::max(0.0, bias3 * bias3 - g3.dot(cov * g3));
    Eigen::Matrix<double, 5, 1> g4;
    for (int c = 0; c < 5; ++c) g4(c) = contr4(t, c) * p4[c] / denom;
    const double bias4 = g4.dot(w4);
    J += std::max(0.0, bias4 * bias4 - g4.dot(cov4 * g4));
    double dev4 = 0.0, dev4_noise = 0.0;
    for (int c = 0; c < 5; ++c)
      for (int cc = 0; cc < 5; ++cc) {
        dev4 += w4(c) * w4(cc) * p4[c] * p4[cc] * mom4(c, cc);
        dev4_noise += cov4(c, cc) * p4[c] * p4[cc] * mom4(c, cc);
      }
    const double sigma2_eff = sigma2 + std::max(0.0, dev4 - dev4_noise);
    const double vb = t == 0 ? std::pow(b1, 5) * b2 : b1 * std::pow(b2, 5);
    J += sigma2_eff * vconst(t) / (fhat * n * vb);
    return J;
  };

  const int G = 25;
  PilotWindows best{corner, corner};
  for (int t = 0; t < 2; ++t) {
    PilotWindow arg = corner;
    double bestJ = objective(t, corner.b1, corner.b2);
    for (int i = 0; i < G; ++i)
      for (int j = 0; j < G; ++j) {
        const double b1 = hi1 * std::pow(50.0, -static_cast<double>(i) / (G - 1));
        const double b2 = hi2 * std::pow(50.0, -static_cast<double>(j) / (G - 1));
        const double J = objective(t, b1, b2);
        if (J < bestJ) {
          bestJ = J;
          arg = {b1, b2};
        }
      }
    (t == 0 ? best.w11 : best.w22) = arg;
  }
  return best;
}

// Scalar summary of the pilot windows, kept for reporting.
inline double pilot_bandwidth_rotated(const Dataset& rot, Side side,
                                      const PreliminaryBandwidths& prelim,
                                      double sigma2, const KernelSpec& spec,
                                      double fhat) {
  const PilotWindows w = pilot_window_rotated(rot, side, prelim, sigma2, spec, fhat);
  return std::pow(w.w11.b1 * w.w11.b2 * w.w22.b1 * w.w22.b2, 0.25);
}

inline std::pair<double, double> pilot_bandwidths(const Dataset& data,
                                                  const BoundaryFrame& frame,
                                                  const KernelSpec& spec = {}) {
  const Dataset rot = rotate_to_frame(data, frame);
  const double fhat = detail::rule_of_thumb_density(rot);
  std::pair<double, double> out;
  for (Side side : {Side::plus, Side::minus}) {
    const auto prelim = preliminary_bandwidth_rotated(rot, side, spec, fhat);
    const double s2 = estimate_sigma2_rotated(rot, side, prelim.b1, prelim.b2, spec);
    const double b = pilot_bandwidth_rotated(rot, side, prelim, s2, spec, fhat);
    (side == Side::plus ? out.first : out.second) = b;
  }
  return out;
}

namespace detail {

struct BiasStage {
  BiasTerms bias;
  // weighted residual variances of the pilot quadratic fits; the quadratic
  // absorbs the curvature that inflates the local-linear residuals
  double sigma2_plus = 0.0;
  double sigma2_minus = 0.0;
};

inline BiasStage bias_stage(const Dataset& rot, const PilotWindows& w_plus,
                            const PilotWindows& w_minus, double sigma2_plus,
                            double sigma2_minus, const KernelSpec& spec) {
  for (const auto& w : {w_plus.w11, w_plus.w22, w_minus.w11, w_minus.w22})
    if (!(w.b1 > 0.0) || !(w.b2 > 0.0))
      throw InvalidArgumentError("estimate_bias_terms: pilot bandwidths must be positive");
  const auto& mm = moment_matrices(KernelSpec{spec.family, Side::plus}, 1);
  const auto& idx2 = MultiIndexSet::of(2);
  const int k11 = idx2.index_of(2, 0);
  const int k12 = idx2.index_of(1, 1);
  const int k22 = idx2.index_of(0, 2);
  (void)sigma2_plus;
  (void)sigma2_minus;

  BiasStage st;
  BiasTerms& out = st.bias;
  std::vector<double> acc(rot.size(), 0.0);
  for (Side side : {Side::plus, Side::minus}) {
    const PilotWindows& w = side == Side::plus ? w_plus : w_minus;
    auto fit_window = [&](PilotWindow win) {
      PilotWindow used = win;
      LocalFit q = [&] {
        try {
          return fit(rot, win.b1, win.b2, 2, side, spec);
        } catch (const InsufficientLocalDataError&) {
          const auto sst = side_stats(rot, side);
          used = {std::max(1e-12, sst.range1), std::max(1e-12, sst.range2)};
          return fit(rot, used.b1, used.b2, 2, side, spec);  // rethrows with side info
        }
      }();
      return std::pair<LocalFit, PilotWindow>(std::move(q), used);
    };
    auto [q11, used11] = fit_window(w.w11);
    const bool shared = w.w22.b1 == w.w11.b1 && w.w22.b2 == w.w11.b2;
    auto [q22, used22] =
        shared ? std::pair<LocalFit, PilotWindow>(q11, used11) : fit_window(w.w22);

    // per-record residual sandwich: a window stretched over a misspecified
    // region inflates its own uncertainty through the residuals
    auto fit_sigma2 = [](const LocalFit& q) {
      double rss = 0.0;
      for (std::size_t j = 0; j < q.weights.size(); ++j)
        rss += q.weights[j] * q.residuals[j] * q.residuals[j];
      return rss / q.weight_sum;
    };
    const double s2_11 = fit_sigma2(q11);

    Eigen::VectorXd c11 = Eigen::VectorXd::Zero(idx2.size());
    c11(k11) = 2.0;
    Eigen::VectorXd c22 = Eigen::VectorXd::Zero(idx2.size());
    c22(k22) = 2.0;
    const Eigen::VectorXd i11 = q11.influence(c11);
    const Eigen::VectorXd i22 = q22.influence(c22);
    double v11 = 0.0, v22 = 0.0, cross = 0.0;
    for (int j = 0; j < i11.size(); ++j) {
      const double ir = i11(j) * q11.residuals[j];
      v11 += ir * ir;
      acc[q11.active[j]] = ir;
    }
    for (int j = 0; j < i22.size(); ++j) {
      const double ir = i22(j) * q22.residuals[j];
      v22 += ir * ir;
      cross += acc[q22.active[j]] * ir;
    }
    for (int j = 0; j < i11.size(); ++j) acc[q11.active[j]] = 0.0;

    Eigen::Matrix2d cd;
    cd << v11, cross, cross, v22;
    if (side == Side::plus) {
      out.d11_plus = 2.0 * q11.coef(k11);
      out.d22_plus = 2.0 * q22.coef(k22);
      out.d12_plus = q11.coef(k12);
      out.cov_plus = cd;
      out.win11_plus_1 = used11.b1;
      out.win11_plus_2 = used11.b2;
      out.win22_plus_1 = used22.b1;
      out.win22_plus_2 = used22.b2;
      st.sigma2_plus = s2_11;
    } else {
      out.d11_minus = 2.0 * q11.coef(k11);
      out.d22_minus = 2.0 * q22.coef(k22);
      out.d12_minus = q11.coef(k12);
      out.cov_minus = cd;
      out.win11_minus_1 = used11.b1;
      out.win11_minus_2 = used11.b2;
      out.win22_minus_1 = used22.b1;
      out.win22_minus_2 = used22.b2;
      st.sigma2_minus = s2_11;
    }
  }
  out.b1_hat = std::abs((out.d11_plus - out.d11_minus) * mm.sTilde11);
  out.b2_hat = std::abs((out.d22_plus - out.d22_minus) * mm.sTilde22);
  out.var_b1 = mm.sTilde11 * mm.sTilde11 * (out.cov_plus(0, 0) + out.cov_minus(0, 0));
  out.var_b2 = mm.sTilde22 * mm.sTilde22 * (out.cov_plus(1, 1) + out.cov_minus(1, 1));
  return st;
}

}  // namespace detail

// Local-quadratic fits at the pilot bandwidths on each side; yields the
// second partials (coefficients times 2), the bias terms, and their
// sandwich variances.
inline BiasTerms estimate_bias_terms_rotated(const Dataset& rot, double b_plus,
                                             double b_minus, double sigma2_plus,
                                             double sigma2_minus,
                                             const KernelSpec& spec) {
  const PilotWindows wp{{b_plus, b_plus}, {b_plus, b_plus}};
  const PilotWindows wm{{b_minus, b_minus}, {b_minus, b_minus}};
  return detail::bias_stage(rot, wp, wm, sigma2_plus, sigma2_minus, spec).bias;
}

inline BiasTerms estimate_bias_terms(const Dataset& data, const BoundaryFrame& frame,
                                     double b_plus, double b_minus,
                                     const KernelSpec& spec = {}) {
  const Dataset rot = rotate_to_frame(data, frame);
  const double s2p = estimate_sigma2_rotated(rot, Side::plus, b_plus, b_plus, spec);
  const double s2m = estimate_sigma2_rotated(rot, Side::minus, b_minus, b_minus, spec);
  return estimate_bias_terms_rotated(rot, b_plus, b_minus, s2p, s2m, spec);
}

// Final bandwidths. Heterogeneous mode solves the first-order conditions of
// the anisotropic MSE expansion,
//   h1^6 = (sigma2_+ + sigma2_-)/(2n) V (Q1^{-5/4} Q2^{1/4}),
// with Q_j = B_j^2 + 3 var(B_j); the regularizer keeps the selection finite
// when the bias terms vanish. Common mode minimizes the common-h MSE,
// h^6 = C / (2 n Q_c). `fhat` enters only through the caller dividing the
// variance constant (density-adjusted mode); pass 1 otherwise.
inline BandwidthSelection select_bandwidths(const BiasTerms& bias, double sigma2_plus,
                                            double sigma2_minus, double fhat,
                                            std::size_t n, const KernelSpec& spec,
                                            BandwidthMode mode) {
  if (n == 0) throw InvalidArgumentError("select_bandwidths: n must be >= 1");
  const auto& mm = moment_matrices(KernelSpec{spec.family, Side::plus}, 1);
  const double C = (sigma2_plus + sigma2_minus) * mm.var_const / std::max(fhat, 1e-300);
  const double A = C / (2.0 * static_cast<double>(n));

  BandwidthSelection sel;
  sel.sigma2_plus = sigma2_plus;
  sel.sigma2_minus = sigma2_minus;
  sel.fhat = fhat;
  sel.bias = bias;
  sel.mode = mode;

  if (mode == BandwidthMode::common) {
    const double bc = 0.5 * ((bias.d11_plus - bias.d11_minus) * mm.sTilde11 +
                             (bias.d22_plus - bias.d22_minus) * mm.sTilde22);
    Eigen::Vector2d g(mm.sTilde11, mm.sTilde22);
    const double var_bc =
        0.25 * (g.dot(bias.cov_plus * g) + g.dot(bias.cov_minus * g));
    const double Qc = bc * bc + 3.0 * var_bc;
    if (!(A > 0.0) || !(Qc > 0.0))
      throw DegenerateSelectionError(
          "select_bandwidths: bias, variance, and noise estimates are all zero");
    sel.h1 = sel.h2 = std::pow(A / Qc, 1.0 / 6.0);
    return sel;
  }

  const double Q1 = bias.b1_hat * bias.b1_hat + 3.0 * bias.var_b1;
  const double Q2 = bias.b2_hat * bias.b2_hat + 3.0 * bias.var_b2;
  if (!(A > 0.0) || !(Q1 > 0.0) || !(Q2 > 0.0))
    throw DegenerateSelectionError(
        "select_bandwidths: bias, variance, and noise estimates are all zero");
  sel.h1 = std::pow(A * std::pow(Q1, -1.25) * std::pow(Q2, 0.25), 1.0 / 6.0);
  sel.h2 = std::pow(A * std::pow(Q2, -1.25) * std::pow(Q1, 0.25), 1.0 / 6.0);
  return sel;
}

namespace detail {

struct PilotStage {
  double sigma2_plus = 0.0, sigma2_minus = 0.0;
  double pilot_plus = 0.0, pilot_minus = 0.0;
  PreliminaryBandwidths prelim_plus, prelim_minus;
  BiasTerms bias;
  double fhat_internal = 1.0;
};

inline PilotStage run_pilot_stage(const Dataset& rot, const KernelSpec& spec) {
  PilotStage st;
  st.fhat_internal = rule_of_thumb_density(rot);
  PilotWindows win[2];
  for (Side side : {Side::plus, Side::minus}) {
    const int k = side == Side::plus ? 0 : 1;
    auto& prelim = side == Side::plus ? st.prelim_plus : st.prelim_minus;
    auto& s2 = side == Side::plus ? st.sigma2_plus : st.sigma2_minus;
    prelim = preliminary_bandwidth_rotated(rot, side, spec, st.fhat_internal);
    // residual variance in a near-cutoff window, so surface curvature over
    // wide pilot windows cannot leak into it
    const auto [v1, v2] = knn_window(rot, side, 80);
    try {
      s2 = estimate_sigma2_rotated(rot, side, v1, v2, spec);
    } catch (const InsufficientLocalDataError&) {
      s2 = estimate_sigma2_rotated(rot, side, prelim.b1, prelim.b2, spec);
    }
    win[k] = pilot_window_rotated(rot, side, prelim, s2, spec, st.fhat_internal);
  }
  auto summary = [](const PilotWindows& w) {
    return std::pow(w.w11.b1 * w.w11.b2 * w.w22.b1 * w.w22.b2, 0.25);
  };
  st.pilot_plus = summary(win[0]);
  st.pilot_minus = summary(win[1]);
  const BiasStage bs =
      bias_stage(rot, win[0], win[1], st.sigma2_plus, st.sigma2_minus, spec);
  st.bias = bs.bias;
  return st;
}

inline BandwidthSelection select_pipeline_plain(const Dataset& rot,
                                                const KernelSpec& spec,
                                                BandwidthMode mode,
                                                bool density_adjusted) {
  const PilotStage st = run_pilot_stage(rot, spec);

  // The 1/f(c) factor belongs to the variance term of the MSE expansion;
  // without it the first-order condition is not even dimensionally a
  // bandwidth. Density-adjusted mode re-estimates f at the pilot bandwidths.
  double fhat = st.fhat_internal;
  if (density_adjusted) {
    const double a = 0.5 * (st.pilot_plus + st.pilot_minus);
    fhat = std::max(kde_at_origin(rot, a, a), 1e-12);
  }
  BandwidthSelection sel = select_bandwidths(st.bias, st.sigma2_plus, st.sigma2_minus,
                                             fhat, rot.size(), spec, mode);
  sel.pilot_plus = st.pilot_plus;
  sel.pilot_minus = st.pilot_minus;
  sel.prelim_plus = st.prelim_plus;
  sel.prelim_minus = st.prelim_minus;

  // keep the windows inside the data's coordinate range
  const auto [lo1, hi1] = std::minmax_element(rot.r1.begin(), rot.r1.end());
  const auto [lo2, hi2] = std::minmax_element(rot.r2.begin(), rot.r2.end());
  const double r1 = *hi1 - *lo1;
  const double r2 = *hi2 - *lo2;
  if (r1 > 0.0) sel.h1 = std::min(sel.h1, r1);
  if (r2 > 0.0) sel.h2 = std::min(sel.h2, r2);
  if (sel.mode == BandwidthMode::common) sel.h1 = sel.h2 = std::min(sel.h1, sel.h2);
  return sel;
}

}  // namespace detail

// Pilot quantities at user-fixed bandwidths: runs the preliminary, variance,
// pilot, and bias stages (needed for bias correction) without the final
// first-order-condition step.
inline BandwidthSelection select_fixed(const Dataset& rot, const KernelSpec& spec,
                                       double h1, double h2) {
  if (!(h1 > 0.0) || !(h2 > 0.0))
    throw InvalidArgumentError("select_fixed: bandwidths must be positive");
  const detail::PilotStage st = detail::run_pilot_stage(rot, spec);
  BandwidthSelection sel;
  sel.mode = BandwidthMode::fixed;
  sel.h1 = h1;
  sel.h2 = h2;
  sel.sigma2_plus = st.sigma2_plus;
  sel.sigma2_minus = st.sigma2_minus;
  sel.pilot_plus = st.pilot_plus;
  sel.pilot_minus = st.pilot_minus;
  sel.prelim_plus = st.prelim_plus;
  sel.prelim_minus = st.prelim_minus;
  sel.bias = st.bias;
  return sel;
}

// Full selection pipeline on rotated data: global quartic -> preliminary
// bandwidth -> residual variances -> local cubic -> pilot bandwidths ->
// local quadratic -> regularized optimum. The density-adjusted variant
// standardizes each axis by its sample standard deviation, runs the pipeline
// in standardized units with the 1/fhat variance factor, and maps the
// bandwidths back, which makes the selection exactly scale-equivariant.
inline BandwidthSelection select_pipeline(const Dataset& rot, const KernelSpec& spec,
                                          BandwidthMode mode,
                                          bool density_adjusted = false) {
  if (mode == BandwidthMode::fixed)
    throw InvalidArgumentError("select_pipeline: fixed mode carries no selection");
  if (!density_adjusted)
    return detail::select_pipeline_plain(rot, spec, mode, false);

  const std::size_t n = rot.size();
  double m1 = 0, m2 = 0, q1 = 0, q2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m1 += rot.r1[i];
    m2 += rot.r2[i];
    q1 += rot.r1[i] * rot.r1[i];
    q2 += rot.r2[i] * rot.r2[i];
  }
  m1 /= n;
  m2 /= n;
  const double s1 = std::max(1e-12, std::sqrt(std::max(0.0, q1 / n - m1 * m1)));
  const double s2 = std::max(1e-12, std::sqrt(std::max(0.0, q2 / n - m2 * m2)));

  Dataset std_rot = rot;
  for (std::size_t i = 0; i < n; ++i) {
    std_rot.r1[i] = rot.r1[i] / s1;
    std_rot.r2[i] = rot.r2[i] / s2;
  }
  BandwidthSelection sel = detail::select_pipeline_plain(std_rot, spec, mode, true);
  sel.scale1 = s1;
  sel.scale2 = s2;
  if (mode == BandwidthMode::common) {
    sel.h1 = sel.h2 = sel.h1 * std::sqrt(s1 * s2);
  } else {
    sel.h1 *= s1;
    sel.h2 *= s2;
  }
  // map the bias pieces back to original units
  sel.bias.d11_plus /= s1 * s1;
  sel.bias.d11_minus /= s1 * s1;
  sel.bias.d22_plus /= s2 * s2;
  sel.bias.d22_minus /= s2 * s2;
  sel.bias.d12_plus /= s1 * s2;
  sel.bias.d12_minus /= s1 * s2;
  const Eigen::Vector2d inv(1.0 / (s1 * s1), 1.0 / (s2 * s2));
  sel.bias.cov_plus = inv.asDiagonal() * sel.bias.cov_plus * inv.asDiagonal();
  sel.bias.cov_minus = inv.asDiagonal() * sel.bias.cov_minus * inv.asDiagonal();
  sel.bias.b1_hat /= s1 * s1;
  sel.bias.b2_hat /= s2 * s2;
  sel.bias.var_b1 /= s1 * s1 * s1 * s1;
  sel.bias.var_b2 /= s2 * s2 * s2 * s2;
  sel.bias.win11_plus_1 *= s1;
  sel.bias.win11_plus_2 *= s2;
  sel.bias.win22_plus_1 *= s1;
  sel.bias.win22_plus_2 *= s2;
  sel.bias.win11_minus_1 *= s1;
  sel.bias.win11_minus_2 *= s2;
  sel.bias.win22_minus_1 *= s1;
  sel.bias.win22_minus_2 *= s2;
  return sel;
}

}  // namespace mrd
