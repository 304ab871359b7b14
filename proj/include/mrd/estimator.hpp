#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mrd/bandwidth.hpp"
#include "mrd/errors.hpp"
#include "mrd/geometry.hpp"
#include "mrd/kernels.hpp"
#include "mrd/localpoly.hpp"
#include "mrd/rng.hpp"

namespace mrd {

struct EstimateOptions {
  KernelSpec kernel{};
  BandwidthMode mode = BandwidthMode::heterogeneous;
  bool density_adjusted = false;
  double alpha = 0.05;
  double fixed_h1 = 0.0;  // used when mode == fixed
  double fixed_h2 = 0.0;
};

struct RDEstimate {
  double theta = 0.0;     // beta0+ - beta0-
  double theta_bc = 0.0;  // after plug-in bias correction
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double h1 = 0.0, h2 = 0.0;
  double pilot_plus = 0.0, pilot_minus = 0.0;
  int eff_n_plus = 0, eff_n_minus = 0;
  double alpha = 0.05;
  BoundaryFrame frame;
};

// Point estimate at the boundary point: local-linear fits on both sides at
// the selected (h1, h2); bias correction subtracts the estimated leading
// smoothing bias
//   h1^2/2 (d11+ - d11-) sTilde11 + h2^2/2 (d22+ - d22-) sTilde22,
// and the standard error adds the sandwich variance of that estimate to the
// two intercept variances (the fits' leading terms are treated as
// independent). Confidence intervals are Gaussian and centered at the
// corrected estimate.
inline RDEstimate estimate_rd(const Dataset& data, const BoundaryFrame& frame,
                              const EstimateOptions& opt = {}) {
  if (!(opt.alpha > 0.0 && opt.alpha < 0.5))
    throw InvalidArgumentError("estimate_rd: alpha must lie in (0, 0.5)");
  const Dataset rot = rotate_to_frame(data, frame);

  BandwidthSelection sel;
  if (opt.mode == BandwidthMode::fixed) {
    if (!(opt.fixed_h1 > 0.0) || !(opt.fixed_h2 > 0.0))
      throw InvalidArgumentError("estimate_rd: fixed mode requires positive bandwidths");
    // pilots are still needed for the bias correction
    sel = select_fixed(rot, opt.kernel, opt.fixed_h1, opt.fixed_h2);
  } else {
    sel = select_pipeline(rot, opt.kernel, opt.mode, opt.density_adjusted);
  }

  const LocalFit fp = fit(rot, sel.h1, sel.h2, 1, Side::plus, opt.kernel);
  const LocalFit fm = fit(rot, sel.h1, sel.h2, 1, Side::minus, opt.kernel);

  const auto& mm = moment_matrices(KernelSpec{opt.kernel.family, Side::plus}, 1);
  const double bias_hat =
      0.5 * sel.h1 * sel.h1 * (sel.bias.d11_plus - sel.bias.d11_minus) * mm.sTilde11 +
      0.5 * sel.h2 * sel.h2 * (sel.bias.d22_plus - sel.bias.d22_minus) * mm.sTilde22;

  // Robust variance of the corrected estimate. Per side, intercept - L is a
  // single linear functional of the outcomes (L the plug-in bias built from
  // the pilot quadratic), so its exact conditional variance is the squared
  // joint influence; the local-linear and quadratic windows overlap, which
  // the independence approximation would miss.
  double se2 = 0.0;
  const auto& idx2 = MultiIndexSet::of(2);
  Eigen::VectorXd c11 = Eigen::VectorXd::Zero(idx2.size());
  c11(idx2.index_of(2, 0)) = sel.h1 * sel.h1 * mm.sTilde11;
  Eigen::VectorXd c22 = Eigen::VectorXd::Zero(idx2.size());
  c22(idx2.index_of(0, 2)) = sel.h2 * sel.h2 * mm.sTilde22;
  Eigen::Vector3d e1(1.0, 0.0, 0.0);
  std::vector<double> u(rot.size(), 0.0);
  for (Side side : {Side::plus, Side::minus}) {
    const LocalFit& fll = side == Side::plus ? fp : fm;
    const bool plus = side == Side::plus;
    const double s2 = plus ? sel.sigma2_plus : sel.sigma2_minus;
    const LocalFit q11 =
        fit(rot, plus ? sel.bias.win11_plus_1 : sel.bias.win11_minus_1,
            plus ? sel.bias.win11_plus_2 : sel.bias.win11_minus_2, 2, side, opt.kernel);
    const LocalFit q22 =
        fit(rot, plus ? sel.bias.win22_plus_1 : sel.bias.win22_minus_1,
            plus ? sel.bias.win22_plus_2 : sel.bias.win22_minus_2, 2, side, opt.kernel);
    const Eigen::VectorXd alpha = fll.influence(e1);
    const Eigen::VectorXd l11 = q11.influence(c11);
    const Eigen::VectorXd l22 = q22.influence(c22);
    for (std::size_t j = 0; j < fll.active.size(); ++j)
      u[fll.active[j]] += alpha(j);
    for (std::size_t j = 0; j < q11.active.size(); ++j)
      u[q11.active[j]] -= l11(j);
    for (std::size_t j = 0; j < q22.active.size(); ++j)
      u[q22.active[j]] -= l22(j);
    double ss = 0.0;
    for (const auto* f : {&fll, &q11, &q22})
      for (int i : f->active) {
        ss += u[i] * u[i];  // zero for indices already consumed
        u[i] = 0.0;
      }
    se2 += s2 * ss;
  }

  RDEstimate est;
  est.theta = fp.intercept() - fm.intercept();
  est.theta_bc = est.theta - bias_hat;
  est.se = std::sqrt(std::max(0.0, se2));
  const double zq = Rng::normal_quantile(1.0 - opt.alpha / 2.0);
  est.ci_low = est.theta_bc - zq * est.se;
  est.ci_high = est.theta_bc + zq * est.se;
  est.h1 = sel.h1;
  est.h2 = sel.h2;
  est.pilot_plus = sel.pilot_plus;
  est.pilot_minus = sel.pilot_minus;
  est.eff_n_plus = fp.effective_n;
  est.eff_n_minus = fm.effective_n;
  est.alpha = opt.alpha;
  est.frame = frame;
  return est;
}

struct SweepEntry {
  bool ok = false;
  RDEstimate estimate;
  std::string error_kind;
  std::string error_message;
};

// One independent estimate per frame; a failure at one point is recorded
// there and does not abort the sweep.
inline std::vector<SweepEntry> sweep_boundary(const Dataset& data,
                                              const std::vector<BoundaryFrame>& frames,
                                              const EstimateOptions& opt = {}) {
  if (frames.empty())
    throw InvalidArgumentError("sweep_boundary: frames must be nonempty");
  std::vector<SweepEntry> out(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    SweepEntry& e = out[k];
    try {
      e.estimate = estimate_rd(data, frames[k], opt);
      e.ok = true;
    } catch (const InsufficientLocalDataError& err) {
      e.error_kind = "insufficient-local-data";
      e.error_message = err.what();
    } catch (const DegenerateSelectionError& err) {
      e.error_kind = "degenerate-selection";
      e.error_message = err.what();
    } catch (const Error& err) {
      e.error_kind = "error";
      e.error_message = err.what();
    }
  }
  return out;
}

// Inputs for the higher-order bias expansion of the local-linear intercept.
struct LocalDerivatives {
  double d11 = 0.0, d12 = 0.0, d22 = 0.0;
  double d111 = 0.0, d112 = 0.0, d122 = 0.0, d222 = 0.0;
  double dlogf1 = 0.0;  // d1 f / f
  double dlogf2 = 0.0;  // d2 f / f
};

// Three-term bias expansion of the local-linear intercept:
//   h1^2/2 d11 sTilde11 + h2^2/2 d22 sTilde22
// + h1^2 h2 (d11/2 dlogf2 + d12 dlogf1 + d112/2)(s1 k12^{(2,1,1)} + s3 k12^{(2,2,1)})
// + h2^3   (d22/2 dlogf2 + d222/6)         (s1 k2^{(3,1)}  + s3 k2^{(4,1)}).
inline double higher_order_bias(const LocalDerivatives& d, double h1, double h2,
                                const KernelSpec& spec = {}) {
  const KernelSpec ks{spec.family, Side::plus};
  const auto& mm = moment_matrices(ks, 1);
  const double s1 = mm.sTilde(0);
  const double s3 = mm.sTilde(2);
  const double lead = 0.5 * h1 * h1 * d.d11 * mm.sTilde11 +
                      0.5 * h2 * h2 * d.d22 * mm.sTilde22;
  const double c_cross = s1 * kernel_moment(ks, 2, 1, 1) + s3 * kernel_moment(ks, 2, 2, 1);
  const double cross = h1 * h1 * h2 *
                       (0.5 * d.d11 * d.dlogf2 + d.d12 * d.dlogf1 + 0.5 * d.d112) *
                       c_cross;
  const double c_vert = s1 * kernel_moment(ks, 0, 3, 1) + s3 * kernel_moment(ks, 0, 4, 1);
  const double vert = h2 * h2 * h2 * (0.5 * d.d22 * d.dlogf2 + d.d222 / 6.0) * c_vert;
  return lead + cross + vert;
}

}  // namespace mrd
