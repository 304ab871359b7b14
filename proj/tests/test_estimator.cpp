#include <doctest.h>

#include <cmath>

#include "mrd/dgp.hpp"
#include "mrd/mc.hpp"
#include "mrd/estimator.hpp"
#include "mrd/rng.hpp"

using namespace mrd;

namespace {

const BoundaryFrame kOrigin = BoundaryFrame::from_normal({0.0, 0.0}, {0.0, 1.0});

Dataset jump_design(int n, int seed, double tau, double noise) {
  Rng rng(seed);
  Dataset d;
  d.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double z1 = rng.uniform(-1.0, 1.0);
    const double z2 = rng.uniform(-1.0, 1.0);
    const double m = 0.4 + 0.8 * z1 - 0.5 * z2 + (z2 >= 0.0 ? tau : 0.0);
    d.push_back(m + (noise > 0 ? rng.normal(0.0, noise) : 0.0), z1, z2, z2 >= 0.0);
  }
  return d;
}

EstimateOptions fixed_opt(double h1, double h2) {
  EstimateOptions o;
  o.mode = BandwidthMode::fixed;
  o.fixed_h1 = h1;
  o.fixed_h2 = h2;
  return o;
}

}  // namespace

TEST_CASE("noiseless piecewise-linear jump is recovered exactly") {
  const Dataset d = jump_design(3000, 61, 0.3, 0.0);
  const RDEstimate est = estimate_rd(d, kOrigin, fixed_opt(0.7, 0.7));
  CHECK(est.theta == doctest::Approx(0.3).epsilon(1e-8));
  CHECK(std::abs(est.theta_bc - est.theta) < 1e-8);
  CHECK(est.se < 1e-8);
}

TEST_CASE("confidence interval invariants") {
  const Dataset d = jump_design(4000, 67, 0.3, 0.2);
  const RDEstimate est = estimate_rd(d, kOrigin, fixed_opt(0.6, 0.6));
  CHECK(est.ci_low <= est.theta_bc);
  CHECK(est.theta_bc <= est.ci_high);
  const double zq = Rng::normal_quantile(1.0 - est.alpha / 2.0);
  CHECK(est.ci_high - est.ci_low ==
        doctest::Approx(2.0 * zq * est.se).epsilon(1e-12));
  CHECK(est.se >= 0.0);
}

TEST_CASE("single draw of the second simulation design covers the truth") {
  const Dataset d = sample(make_design(2), 100000, 4242);
  const RDEstimate est = estimate_rd(d, kOrigin);
  CHECK(std::abs(est.theta - 0.3615281563) < 3.0 * est.se);
  CHECK(est.eff_n_plus > 100);
  CHECK(est.eff_n_minus > 100);
}

TEST_CASE("mirroring the tangential axis leaves the estimate unchanged") {
  const Dataset d = sample(make_design(2), 5000, 777);
  Dataset mir = d;
  for (auto& v : mir.r1) v = -v;
  const RDEstimate a = estimate_rd(d, kOrigin);
  const RDEstimate b = estimate_rd(mir, kOrigin);
  CHECK(a.theta == doctest::Approx(b.theta).epsilon(1e-10));
  CHECK(a.theta_bc == doctest::Approx(b.theta_bc).epsilon(1e-10));
  CHECK(a.se == doctest::Approx(b.se).epsilon(1e-10));
  CHECK(a.h1 == doctest::Approx(b.h1).epsilon(1e-10));
}

TEST_CASE("relabeling treatment negates the estimate") {
  const Dataset d = jump_design(4000, 71, 0.25, 0.15);
  // flipping the frame swaps the sides
  const BoundaryFrame flipped = BoundaryFrame::from_normal({0.0, 0.0}, {0.0, -1.0});
  const RDEstimate a = estimate_rd(d, kOrigin, fixed_opt(0.6, 0.6));
  const RDEstimate b = estimate_rd(d, flipped, fixed_opt(0.6, 0.6));
  CHECK(b.theta == doctest::Approx(-a.theta).epsilon(1e-12));
  CHECK(b.theta_bc == doctest::Approx(-a.theta_bc).epsilon(1e-12));
  CHECK(b.se == doctest::Approx(a.se).epsilon(1e-10));
}

TEST_CASE("location-scale change of the outcome maps through") {
  const Dataset d = sample(make_design(2), 5000, 901);
  Dataset t = d;
  for (auto& y : t.y) y = 2.5 * y + 1.0;
  const RDEstimate a = estimate_rd(d, kOrigin);
  const RDEstimate b = estimate_rd(t, kOrigin);
  CHECK(b.theta == doctest::Approx(2.5 * a.theta).epsilon(1e-7));
  CHECK(b.se == doctest::Approx(2.5 * a.se).epsilon(1e-7));
  CHECK(b.h1 == doctest::Approx(a.h1).epsilon(1e-9));  // selection is scale-free in y
}

TEST_CASE("alpha is validated and drives the interval width") {
  const Dataset d = jump_design(3000, 73, 0.2, 0.1);
  EstimateOptions o = fixed_opt(0.6, 0.6);
  o.alpha = 0.9;
  CHECK_THROWS_AS(estimate_rd(d, kOrigin, o), InvalidArgumentError);
  o.alpha = 0.10;
  const RDEstimate a90 = estimate_rd(d, kOrigin, o);
  o.alpha = 0.05;
  const RDEstimate a95 = estimate_rd(d, kOrigin, o);
  CHECK(a95.ci_high - a95.ci_low > a90.ci_high - a90.ci_low);
}

TEST_CASE("sweep_boundary matches estimate_rd and isolates failures") {
  const Dataset d = sample(make_design(1), 6000, 313);
  SUBCASE("singleton sweep") {
    const auto entries = sweep_boundary(d, {kOrigin});
    REQUIRE(entries.size() == 1);
    REQUIRE(entries[0].ok);
    const RDEstimate direct = estimate_rd(d, kOrigin);
    CHECK(entries[0].estimate.theta == doctest::Approx(direct.theta));
    CHECK(entries[0].estimate.se == doctest::Approx(direct.se));
  }
  SUBCASE("28 frames give 28 records") {
    std::vector<BoundaryFrame> frames;
    for (int k = 0; k < 28; ++k)
      frames.push_back(BoundaryFrame::from_normal(
          {-35.0 + 2.5 * k, 0.0}, {0.0, 1.0}));
    const auto entries = sweep_boundary(d, frames, {});
    CHECK(entries.size() == 28);
    int ok = 0;
    for (const auto& e : entries) ok += e.ok ? 1 : 0;
    CHECK(ok > 20);  // interior points succeed
  }
  SUBCASE("a frame in empty space fails alone") {
    std::vector<BoundaryFrame> frames = {
        kOrigin, BoundaryFrame::from_normal({1e6, 1e6}, {0.0, 1.0})};
    const auto entries = sweep_boundary(d, frames);
    CHECK(entries[0].ok);
    CHECK_FALSE(entries[1].ok);
    CHECK(entries[1].error_kind == "insufficient-local-data");
  }
  CHECK_THROWS_AS(sweep_boundary(d, {}), InvalidArgumentError);
}

TEST_CASE("higher_order_bias closed-form cases") {
  SUBCASE("flat inputs give zero") {
    CHECK(higher_order_bias({}, 0.5, 0.5) == 0.0);
  }
  SUBCASE("pure d11 reduces to the leading term") {
    LocalDerivatives d;
    d.d11 = 2.0;
    const double h1 = 0.37, h2 = 0.81;
    CHECK(higher_order_bias(d, h1, h2) ==
          doctest::Approx(h1 * h1 / 6.0).epsilon(1e-12));
  }
  SUBCASE("pure third derivative in z2") {
    // (1/6) d222 (s1 k2^{(3,1)} + s3 k2^{(4,1)}) h2^3 = -0.1 h2^3 for d222 = 6
    LocalDerivatives d;
    d.d222 = 6.0;
    CHECK(higher_order_bias(d, 0.5, 0.5) ==
          doctest::Approx(-0.1 * 0.125).epsilon(1e-12));
  }
}

TEST_CASE("median estimation error shrinks with the sample size") {
  std::vector<double> med_err;
  for (int n : {5000, 20000, 80000}) {
    const auto res = run_mc(make_design(2), {EstimatorKind::td_diff}, n, 300,
                            6006, 2);
    std::vector<double> th;
    for (const auto& r : res.per_rep[0])
      if (!r.failed) th.push_back(r.theta);
    std::sort(th.begin(), th.end());
    med_err.push_back(std::abs(th[th.size() / 2] - res.true_theta));
  }
  CHECK(med_err[1] < med_err[0]);
  CHECK(med_err[2] < med_err[1]);
}

TEST_CASE("higher_order_bias matches the empirical bias of a cubic surface") {
  // noiseless m = z2^3 on a uniform design: leading term vanishes at the
  // cutoff and the h2^3 term predicts the fit bias
  const double h = 0.4;
  LocalDerivatives derivs;
  derivs.d222 = 6.0;
  const double predicted = higher_order_bias(derivs, h, h);
  double mean = 0.0;
  const int reps = 400, n = 2500;
  for (int r = 0; r < reps; ++r) {
    Rng rng(stream_seed(5432, r));
    Dataset d;
    d.reserve(n);
    for (int i = 0; i < n; ++i) {
      const double z1 = rng.uniform(-1.0, 1.0);
      const double z2 = rng.uniform(0.0, 1.0);
      d.push_back(z2 * z2 * z2, z1, z2, true);
    }
    mean += fit(d, h, h, 1, Side::plus, {}).intercept();
  }
  mean /= reps;
  CHECK(mean == doctest::Approx(predicted).epsilon(0.15));
}
