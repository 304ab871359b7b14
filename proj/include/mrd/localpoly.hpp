#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "mrd/errors.hpp"
#include "mrd/geometry.hpp"
#include "mrd/kernels.hpp"

namespace mrd {

// Monomials of (z1, z2) up to total degree p in the stacking order
// (1, z1, z2, z1^2, z1 z2, z2^2, ...). Entry k carries its exponents and the
// multi-index factorial s! = a1! a2!, so derivative estimates are
// s! * coefficient.
struct MultiIndexSet {
  int p = 1;
  struct Entry {
    int a1;
    int a2;
    double sfact;
  };
  std::vector<Entry> entries;

  int size() const { return static_cast<int>(entries.size()); }

  static const MultiIndexSet& of(int p) {
    static const std::array<MultiIndexSet, 4> cache = [] {
      std::array<MultiIndexSet, 4> out;
      auto fact = [](int n) {
        double f = 1.0;
        for (int i = 2; i <= n; ++i) f *= i;
        return f;
      };
      for (int q = 0; q <= 3; ++q) {
        out[q].p = q;
        for (const auto& [a1, a2] : monomial_exponents(q))
          out[q].entries.push_back({a1, a2, fact(a1) * fact(a2)});
      }
      return out;
    }();
    if (p < 0 || p > 3)
      throw InvalidArgumentError("MultiIndexSet: p must be in {0,1,2,3}");
    return cache[p];
  }

  // index of the monomial z1^a1 z2^a2
  int index_of(int a1, int a2) const {
    for (int k = 0; k < size(); ++k)
      if (entries[k].a1 == a1 && entries[k].a2 == a2) return k;
    throw InvalidArgumentError("MultiIndexSet: monomial not present");
  }
};

inline void design_row(double z1, double z2, const MultiIndexSet& idx,
                       std::span<double> out) {
  for (int k = 0; k < idx.size(); ++k)
    out[k] = std::pow(z1, idx.entries[k].a1) * std::pow(z2, idx.entries[k].a2);
}

inline Eigen::VectorXd design_row(double z1, double z2, const MultiIndexSet& idx) {
  Eigen::VectorXd v(idx.size());
  design_row(z1, z2, idx, std::span<double>(v.data(), v.size()));
  return v;
}

// Kernel-weighted polynomial least squares around the origin of rotated
// coordinates. Coefficients are reported on the original scale; internally
// the fit runs in bandwidth units u = (z1/h1, z2/h2), which keeps the Gram
// matrix condition independent of the bandwidths.
struct LocalFit {
  Eigen::VectorXd coef;        // beta-hat, original units
  double h1 = 0.0, h2 = 0.0;
  Side side = Side::plus;
  int p = 1;
  int effective_n = 0;         // records with positive weight
  double weight_sum = 0.0;
  double cond = 0.0;           // condition number of the scaled Gram
  Eigen::MatrixXd gram;        // scaled-units Gram  sum_i w_i u_i u_i'
  Eigen::MatrixXd design;      // scaled design rows of the active records
  std::vector<int> active;     // indices into the fitted dataset
  std::vector<double> weights;
  std::vector<double> residuals;  // y_i - x_i' beta over active records
  Eigen::VectorXd scale;       // h1^a1 h2^a2 per coefficient

  double intercept() const { return coef(0); }

  // derivative estimate s! * beta for the given monomial
  double deriv(int a1, int a2) const {
    const auto& idx = MultiIndexSet::of(p);
    const int k = idx.index_of(a1, a2);
    return idx.entries[k].sfact * coef(k);
  }

  // Per-active-record weights of the linear functional c' beta-hat, i.e.
  // c'(X'WX)^{-1} x_i w_i with c in original coefficient units. The
  // functional equals the inner product of these weights with the outcomes.
  Eigen::VectorXd influence(const Eigen::VectorXd& c) const {
    const Eigen::VectorXd c_u = c.cwiseQuotient(scale);
    const Eigen::VectorXd z = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(c_u);
    Eigen::VectorXd infl(static_cast<int>(active.size()));
    for (std::size_t j = 0; j < active.size(); ++j)
      infl(j) = weights[j] * design.row(j).dot(z);
    return infl;
  }
};

inline LocalFit fit(const Dataset& rotated, double h1, double h2, int p,
                    Side side, const KernelSpec& spec) {
  if (!(h1 > 0.0) || !(h2 > 0.0))
    throw InvalidArgumentError("fit: bandwidths must be positive");
  const auto& idx = MultiIndexSet::of(p);
  const int D = idx.size();
  const KernelSpec ks{spec.family, side};

  LocalFit out;
  out.h1 = h1;
  out.h2 = h2;
  out.side = side;
  out.p = p;

  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(D, D);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(D);
  Eigen::VectorXd row(D);
  std::vector<double> rows_flat;
  for (std::size_t i = 0; i < rotated.size(); ++i) {
    const double z2 = rotated.r2[i];
    if (side == Side::plus ? z2 < 0.0 : z2 >= 0.0) continue;
    const double u1 = rotated.r1[i] / h1;
    const double u2 = z2 / h2;
    const double w = kernel_eval(ks, u1, u2);
    if (!(w > 0.0)) continue;
    design_row(u1, u2, idx, std::span<double>(row.data(), D));
    G.selfadjointView<Eigen::Lower>().rankUpdate(row, w);
    b.noalias() += w * rotated.y[i] * row;
    out.active.push_back(static_cast<int>(i));
    out.weights.push_back(w);
    rows_flat.insert(rows_flat.end(), row.data(), row.data() + D);
    out.weight_sum += w;
  }
  G = G.selfadjointView<Eigen::Lower>();
  out.effective_n = static_cast<int>(out.active.size());
  // D + 2 keeps us away from exactly determined fits
  if (out.effective_n < D + 2)
    throw InsufficientLocalDataError("fit: too few observations with positive weight",
                                     out.effective_n, 0.0, to_string(side));

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(G, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(D - 1);
  out.cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  if (!(smin > smax * 1e-13))
    throw InsufficientLocalDataError("fit: weighted Gram matrix is singular",
                                     out.effective_n, out.cond, to_string(side));
  const Eigen::VectorXd coef_u = svd.solve(b);

  out.scale.resize(D);
  out.coef.resize(D);
  for (int k = 0; k < D; ++k) {
    out.scale(k) = std::pow(h1, idx.entries[k].a1) * std::pow(h2, idx.entries[k].a2);
    out.coef(k) = coef_u(k) / out.scale(k);
  }
  out.gram = std::move(G);
  out.design = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                              Eigen::RowMajor>>(
      rows_flat.data(), out.effective_n, D);
  out.residuals.resize(out.active.size());
  for (std::size_t j = 0; j < out.active.size(); ++j)
    out.residuals[j] = rotated.y[out.active[j]] - out.design.row(j).dot(coef_u);
  return out;
}

namespace detail {

inline Eigen::MatrixXd sandwich_impl(const LocalFit& f,
                                     const std::function<double(std::size_t)>& sigma2_at) {
  const int D = static_cast<int>(f.coef.size());
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(D, D);
  for (std::size_t j = 0; j < f.active.size(); ++j) {
    const double w2s = f.weights[j] * f.weights[j] * sigma2_at(j);
    if (w2s == 0.0) continue;
    meat.selfadjointView<Eigen::Lower>().rankUpdate(f.design.row(j).transpose(), w2s);
  }
  meat = meat.selfadjointView<Eigen::Lower>();
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(f.gram);
  Eigen::MatrixXd cov_u = ldlt.solve(ldlt.solve(meat).transpose());
  // back to original units: Cov = S^{-1} Cov_u S^{-1}
  Eigen::MatrixXd cov = f.scale.cwiseInverse().asDiagonal() * cov_u *
                        f.scale.cwiseInverse().asDiagonal();
  return 0.5 * (cov + cov.transpose());
}

}  // namespace detail

// Finite-sample sandwich G^{-1} (sum w_i^2 x_i x_i' sigma_i^2) G^{-1}.
inline Eigen::MatrixXd sandwich_covariance(const LocalFit& f, double sigma2) {
  return detail::sandwich_impl(f, [&](std::size_t) { return sigma2; });
}

// per-record variances, indexed like the fitted dataset
inline Eigen::MatrixXd sandwich_covariance(const LocalFit& f,
                                           std::span<const double> sigma2) {
  return detail::sandwich_impl(
      f, [&](std::size_t j) { return sigma2[f.active[j]]; });
}

}  // namespace mrd
