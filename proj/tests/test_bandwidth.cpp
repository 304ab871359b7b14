#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "mrd/bandwidth.hpp"
#include "mrd/dgp.hpp"
#include "mrd/rng.hpp"

using namespace mrd;

namespace {

const KernelSpec kPT{};
const BoundaryFrame kOrigin = BoundaryFrame::from_normal({0.0, 0.0}, {0.0, 1.0});

Dataset box_with_mean(int n, Rng& rng, double noise,
                      const std::function<double(double, double)>& m) {
  Dataset d;
  d.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double z1 = rng.uniform(-1.0, 1.0);
    const double z2 = rng.uniform(-1.0, 1.0);
    d.push_back(m(z1, z2) + (noise > 0 ? rng.normal(0.0, noise) : 0.0), z1, z2,
                z2 >= 0.0);
  }
  return d;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("estimate_sigma2 is zero for a noiseless linear outcome") {
  Rng rng(5);
  Dataset d = box_with_mean(800, rng, 0.0,
                            [](double a, double b) { return 1.0 + 2.0 * a - b; });
  CHECK(estimate_sigma2(d, kOrigin, Side::plus, 0.6) < 1e-10);
  CHECK(estimate_sigma2(d, kOrigin, Side::minus, 0.6) < 1e-10);
}

TEST_CASE("estimate_sigma2 recovers the simulation noise level") {
  const Dataset d = sample(make_design(2), 100000, 321);
  const auto prelim = preliminary_bandwidth(d, kOrigin, Side::minus);
  const double s2 = estimate_sigma2(d, kOrigin, Side::minus, prelim.b1);
  CHECK(s2 == doctest::Approx(0.1295 * 0.1295).epsilon(0.10));
}

TEST_CASE("estimate_sigma2 scales with the noise variance") {
  auto make = [&](double noise, int seed) {
    Rng rng(seed);
    return box_with_mean(20000, rng, noise, [](double, double) { return 0.0; });
  };
  const Dataset d1 = make(0.2, 9);
  const Dataset d2 = make(0.4, 9);  // same seed, doubled noise
  const double a = estimate_sigma2(d1, kOrigin, Side::plus, 0.5);
  const double b = estimate_sigma2(d2, kOrigin, Side::plus, 0.5);
  CHECK(b / a == doctest::Approx(4.0).epsilon(0.05));
  CHECK_THROWS_AS(estimate_sigma2(d1, kOrigin, Side::plus, -1.0), InvalidArgumentError);
}

TEST_CASE("preliminary bandwidth is finite and positive on a quadratic outcome") {
  Rng rng(13);
  Dataset d = box_with_mean(8000, rng, 0.05,
                            [](double a, double b) { return a * a - 0.5 * b * b; });
  for (Side side : {Side::plus, Side::minus}) {
    const auto pb = preliminary_bandwidth(d, kOrigin, side);
    CHECK(pb.b1 > 0.0);
    CHECK(pb.b2 > 0.0);
    CHECK(std::isfinite(pb.b1));
    CHECK(pb.b1 <= 2.0);  // data range
  }
}

TEST_CASE("preliminary bandwidth falls back to half range on tiny sides") {
  Dataset d;
  Rng rng(17);
  // 10 points above, plenty below
  for (int i = 0; i < 10; ++i)
    d.push_back(rng.normal(), rng.uniform(-1.0, 1.0), rng.uniform(0.0, 0.8), true);
  for (int i = 0; i < 200; ++i)
    d.push_back(rng.normal(), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 0.0), false);
  const auto pb = preliminary_bandwidth(d, kOrigin, Side::plus);
  CHECK(pb.fallback);
  const auto st = detail::side_stats(rotate_to_frame(d, kOrigin), Side::plus);
  CHECK(pb.b1 == doctest::Approx(0.5 * std::max(st.range1, st.range2)));
}

TEST_CASE("pilot bandwidths stay finite on pure noise") {
  Rng rng(23);
  Dataset d = box_with_mean(4000, rng, 1.0, [](double, double) { return 0.0; });
  const auto [bp, bm] = pilot_bandwidths(d, kOrigin);
  CHECK(bp > 0.0);
  CHECK(bm > 0.0);
  CHECK(std::isfinite(bp));
  CHECK(std::isfinite(bm));
}

TEST_CASE("pilot bandwidths are symmetric for a symmetric design") {
  std::vector<double> ratios;
  for (int r = 0; r < 20; ++r) {
    Rng rng(stream_seed(31, r));
    Dataset d = box_with_mean(6000, rng, 0.2, [](double a, double b) {
      return a * a + 1.5 * b * b;
    });
    const auto [bp, bm] = pilot_bandwidths(d, kOrigin);
    ratios.push_back(bp / bm);
  }
  CHECK(median(ratios) == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("pilot bandwidths shrink as n grows") {
  // strong cubic curvature keeps the plug-in active rather than the cap
  auto m = [](double a, double b) { return 2.0 * a * a * a + 1.5 * b * b * b + a * a; };
  std::vector<double> med;
  for (int n : {2000, 8000, 32000}) {
    std::vector<double> bs;
    for (int r = 0; r < 50; ++r) {
      Rng rng(stream_seed(1000 + n, r));
      Dataset d = box_with_mean(n, rng, 0.3, m);
      const auto [bp, bm] = pilot_bandwidths(d, kOrigin);
      bs.push_back(0.5 * (bp + bm));
    }
    med.push_back(median(bs));
  }
  CHECK(med[1] < med[0]);
  CHECK(med[2] < med[1]);
}

TEST_CASE("bias terms recover a known curvature gap") {
  // m+ = z1^2, m- = 0 so d11+ = 2 and B1 -> |2 sTilde11| = 1/3
  Rng rng(41);
  Dataset d = box_with_mean(20000, rng, 0.0, [](double a, double b) {
    return b >= 0.0 ? a * a : 0.0;
  });
  const BiasTerms bt = estimate_bias_terms(d, kOrigin, 0.8, 0.8);
  CHECK(bt.d11_plus == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(std::abs(bt.d11_minus) < 1e-8);
  CHECK(bt.b1_hat == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK(bt.var_b1 >= 0.0);
  CHECK(bt.var_b2 >= 0.0);
  // invariant: the bias terms are exactly the weighted derivative gaps
  const auto& mm = moment_matrices(kPT, 1);
  CHECK(bt.b1_hat == std::abs((bt.d11_plus - bt.d11_minus) * mm.sTilde11));
  CHECK(bt.b2_hat == std::abs((bt.d22_plus - bt.d22_minus) * mm.sTilde22));
}

TEST_CASE("matching curvatures drive the bias terms to zero with n") {
  auto run = [&](int n, int seed) {
    Rng rng(seed);
    Dataset d = box_with_mean(n, rng, 0.1, [](double a, double b) {
      return 0.7 * a * a - 0.4 * b * b + (b >= 0 ? 0.3 : 0.0);
    });
    const BiasTerms bt = estimate_bias_terms(d, kOrigin, 0.7, 0.7);
    return std::hypot(bt.b1_hat, bt.b2_hat);
  };
  std::vector<double> small, big;
  for (int r = 0; r < 12; ++r) {
    small.push_back(run(3000, 100 + r));
    big.push_back(run(48000, 200 + r));
  }
  CHECK(median(big) < median(small));
}

TEST_CASE("select_bandwidths closed-form ratios") {
  BiasTerms bt;
  bt.b1_hat = 2.0;
  bt.b2_hat = 1.0;  // B1^2 = 4 B2^2, no regularization
  const auto sel = select_bandwidths(bt, 1.0, 1.0, 1.0, 1000, kPT,
                                     BandwidthMode::heterogeneous);
  CHECK(sel.h1 / sel.h2 == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-10));
  // h1^6 = (sigma2_sum / 2n) V Q1^{-5/4} Q2^{1/4}
  const auto& mm = moment_matrices(kPT, 1);
  const double A = 2.0 * mm.var_const / 2000.0;
  CHECK(std::pow(sel.h1, 6.0) ==
        doctest::Approx(A * std::pow(4.0, -1.25) * std::pow(1.0, 0.25)).epsilon(1e-10));
}

TEST_CASE("regularization keeps the selection finite when bias terms vanish") {
  BiasTerms bt;
  bt.b1_hat = 0.0;
  bt.b2_hat = 0.0;
  bt.var_b1 = 0.01;
  bt.var_b2 = 0.01;
  const auto sel =
      select_bandwidths(bt, 0.5, 0.5, 1.0, 5000, kPT, BandwidthMode::heterogeneous);
  CHECK(std::isfinite(sel.h1));
  CHECK(sel.h1 > 0.0);
  CHECK(sel.h1 == doctest::Approx(sel.h2));  // symmetric inputs
}

TEST_CASE("fully degenerate inputs are rejected") {
  BiasTerms bt;  // all zeros
  CHECK_THROWS_AS(
      select_bandwidths(bt, 0.0, 0.0, 1.0, 100, kPT, BandwidthMode::heterogeneous),
      DegenerateSelectionError);
  CHECK_THROWS_AS(
      select_bandwidths(bt, 1.0, 1.0, 1.0, 100, kPT, BandwidthMode::heterogeneous),
      DegenerateSelectionError);
  CHECK_THROWS_AS(
      select_bandwidths(bt, 0.0, 0.0, 1.0, 100, kPT, BandwidthMode::common),
      DegenerateSelectionError);
}

TEST_CASE("larger var_b1 shrinks h1 and widens h2") {
  // the regularizer inflates the perceived own-axis bias, so that axis
  // tightens while the other compensates
  BiasTerms a, b;
  a.b1_hat = b.b1_hat = 0.5;
  a.b2_hat = b.b2_hat = 0.5;
  a.var_b1 = 0.01;
  b.var_b1 = 0.05;
  const auto sa = select_bandwidths(a, 1.0, 1.0, 1.0, 2000, kPT,
                                    BandwidthMode::heterogeneous);
  const auto sb = select_bandwidths(b, 1.0, 1.0, 1.0, 2000, kPT,
                                    BandwidthMode::heterogeneous);
  CHECK(sb.h1 < sa.h1);
  CHECK(sb.h2 > sa.h2);
}

TEST_CASE("common mode returns equal bandwidths") {
  BiasTerms bt;
  bt.d11_plus = 2.0;
  bt.d22_plus = 1.0;
  bt.b1_hat = 1.0;
  bt.b2_hat = 0.5;
  const auto sel =
      select_bandwidths(bt, 1.0, 1.0, 1.0, 2000, kPT, BandwidthMode::common);
  CHECK(sel.h1 == sel.h2);
  CHECK(sel.h1 > 0.0);
}

TEST_CASE("selected bandwidths shrink like n^{-1/6}") {
  const DesignSpec d2 = make_design(2);
  std::vector<double> med_h1;
  const std::vector<int> ns = {5000, 20000, 80000};
  for (std::size_t k = 0; k < ns.size(); ++k) {
    std::vector<double> h1s;
    for (int r = 0; r < 40; ++r) {
      const Dataset rot = sample(d2, ns[k], stream_seed(5150 + k, r));
      const auto sel = select_pipeline(rot, kPT, BandwidthMode::heterogeneous);
      h1s.push_back(sel.h1);
    }
    med_h1.push_back(median(h1s));
  }
  const double slope = std::log(med_h1[2] / med_h1[0]) / std::log(80000.0 / 5000.0);
  CHECK(std::abs(slope + 1.0 / 6.0) < 0.03);
}

TEST_CASE("pipeline bandwidths are positive and inside the data range") {
  const Dataset rot = sample(make_design(1), 5000, 99);
  for (auto mode : {BandwidthMode::heterogeneous, BandwidthMode::common}) {
    const auto sel = select_pipeline(rot, kPT, mode);
    CHECK(sel.h1 > 0.0);
    CHECK(sel.h2 > 0.0);
    CHECK(sel.h1 <= 100.0);
    CHECK(sel.h2 <= 60.0);
    if (mode == BandwidthMode::common) CHECK(sel.h1 == sel.h2);
  }
}

TEST_CASE("density-adjusted selection is exactly scale-equivariant") {
  const Dataset rot = sample(make_design(2), 4000, 1234);
  Dataset scaled = rot;
  for (auto& v : scaled.r1) v *= 3.0;
  const auto a = select_pipeline(rot, kPT, BandwidthMode::heterogeneous, true);
  const auto b = select_pipeline(scaled, kPT, BandwidthMode::heterogeneous, true);
  CHECK(b.h1 == doctest::Approx(3.0 * a.h1).epsilon(1e-9));
  CHECK(b.h2 == doctest::Approx(a.h2).epsilon(1e-9));
}
