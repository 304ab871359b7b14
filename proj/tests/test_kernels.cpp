#include <doctest.h>

#include <cmath>

#include "mrd/kernels.hpp"

using namespace mrd;

namespace {
const KernelSpec kPT{KernelFamily::product_triangular, Side::plus};
const KernelSpec kPTm{KernelFamily::product_triangular, Side::minus};
const KernelSpec kEP{KernelFamily::product_epanechnikov, Side::plus};
const KernelSpec kCone{KernelFamily::cone, Side::plus};

const std::array<KernelSpec, 6> all_specs = {
    KernelSpec{KernelFamily::product_triangular, Side::plus},
    KernelSpec{KernelFamily::product_triangular, Side::minus},
    KernelSpec{KernelFamily::product_epanechnikov, Side::plus},
    KernelSpec{KernelFamily::product_epanechnikov, Side::minus},
    KernelSpec{KernelFamily::cone, Side::plus},
    KernelSpec{KernelFamily::cone, Side::minus}};
}  // namespace

TEST_CASE("kernel evaluation closed forms") {
  CHECK(kernel_eval(kCone, 0.0, 0.0) == doctest::Approx(6.0 / M_PI).epsilon(1e-12));
  CHECK(kernel_eval(kPT, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  for (const auto& s : all_specs) CHECK(kernel_eval(s, 1.5, 0.0) == 0.0);
  // sides face opposite half-planes
  CHECK(kernel_eval(kPT, 0.2, -0.3) == 0.0);
  CHECK(kernel_eval(kPTm, 0.2, -0.3) == doctest::Approx(0.8 * 2.0 * 0.7));
  CHECK(kernel_eval(kEP, 0.0, 0.0) == doctest::Approx(0.75 * 2.0));
}

TEST_CASE("product-triangular moment table") {
  CHECK(kernel_moment(kPT, 0, 0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(kernel_moment(kPT, 1, 0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(kernel_moment(kPT, 0, 1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(kernel_moment(kPT, 2, 0, 1) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(kernel_moment(kPT, 0, 3, 1) == doctest::Approx(1.0 / 10.0).epsilon(1e-12));
  CHECK(kernel_moment(kPT, 2, 1, 1) == doctest::Approx(1.0 / 18.0).epsilon(1e-12));
  CHECK(kernel_moment(kPT, 0, 0, 2) == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
  CHECK_THROWS_AS(kernel_moment(kPT, 0, 0, 3), InvalidArgumentError);
  CHECK_THROWS_AS(kernel_moment(kPT, 5, 4, 1), InvalidArgumentError);
}

TEST_CASE("normalization for every family and side") {
  for (const auto& s : all_specs) {
    CHECK(kernel_moment(s, 0, 0, 1) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(kernel_moment_quadrature(s, 0, 0, 1) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("closed-form moments match adaptive quadrature") {
  for (const auto& s : all_specs)
    for (int v : {1, 2})
      for (int a1 = 0; a1 <= 5; ++a1)
        for (int a2 = 0; a1 + a2 <= 5; ++a2) {
          const double cf = kernel_moment(s, a1, a2, v);
          const double q = kernel_moment_quadrature(s, a1, a2, v);
          CHECK(std::abs(cf - q) < 1e-8);
        }
}

TEST_CASE("moment matrices at p=1 for the product-triangular kernel") {
  const auto& mm = moment_matrices(kPT, 1);
  Eigen::Matrix3d S_expect;
  S_expect << 1.0, 0.0, 1.0 / 3.0, 0.0, 1.0 / 6.0, 0.0, 1.0 / 3.0, 0.0, 1.0 / 6.0;
  CHECK((mm.S - S_expect).norm() < 1e-12);
  CHECK(mm.sTilde(0) == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(mm.sTilde(1) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(mm.sTilde(2) == doctest::Approx(-6.0).epsilon(1e-10));
  CHECK(mm.sTilde11 == doctest::Approx(1.0 / 6.0).epsilon(1e-10));
  CHECK(mm.sTilde22 == doctest::Approx(-1.0 / 10.0).epsilon(1e-10));
  CHECK(mm.var_const == doctest::Approx(3.2).epsilon(1e-10));

  // S sTilde = e1
  Eigen::Vector3d e1(1.0, 0.0, 0.0);
  CHECK((mm.S * mm.sTilde - e1).norm() < 1e-10);
}

TEST_CASE("moment matrix invariants for all p and kernels") {
  for (const auto& s : all_specs)
    for (int p : {1, 2, 3}) {
      const auto& mm = moment_matrices(s, p);
      const int D = static_cast<int>(mm.S.rows());
      CHECK((mm.S - mm.S.transpose()).norm() < 1e-12);
      Eigen::VectorXd e1 = Eigen::VectorXd::Zero(D);
      e1(0) = 1.0;
      CHECK((mm.S * mm.sTilde - e1).norm() < 1e-10);
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mm.Kcal);
      CHECK(es.eigenvalues().minCoeff() > -1e-12);
      CHECK(mm.B.rows() == D);
      CHECK(mm.B.cols() == p + 2);
    }
}

TEST_CASE("minus-side relations") {
  const auto& mp = moment_matrices(kPT, 1);
  const auto& mn = moment_matrices(kPTm, 1);
  CHECK(mn.sTilde(0) == doctest::Approx(mp.sTilde(0)).epsilon(1e-10));
  CHECK(mn.sTilde(1) == doctest::Approx(mp.sTilde(1)).epsilon(1e-10));
  CHECK(mn.sTilde(2) == doctest::Approx(-mp.sTilde(2)).epsilon(1e-10));
  CHECK(kernel_moment(kPTm, 2, 1, 1) ==
        doctest::Approx(-kernel_moment(kPT, 2, 1, 1)).epsilon(1e-12));
  CHECK(kernel_moment(kPTm, 0, 3, 1) ==
        doctest::Approx(-kernel_moment(kPT, 0, 3, 1)).epsilon(1e-12));
  CHECK(mn.var_const == doctest::Approx(mp.var_const).epsilon(1e-9));
  // the scalar bandwidth constants are side-invariant
  CHECK(mn.sTilde11 == doctest::Approx(mp.sTilde11).epsilon(1e-10));
  CHECK(mn.sTilde22 == doctest::Approx(mp.sTilde22).epsilon(1e-10));
}

TEST_CASE("kernel restriction holds for the admissible kernels") {
  for (const auto& s : all_specs) {
    const auto rep = check_restriction(s);
    CHECK(rep.satisfied);
    for (double k : rep.kappa) CHECK(std::abs(k) < 1e-9);
  }
}

TEST_CASE("kernel restriction fails for a shifted triangular") {
  // K1 supported on [0,1] only: first z1 moment is strictly positive
  auto shifted = [](double z1, double z2) {
    const double k1 = (z1 >= 0.0 && z1 <= 1.0) ? 2.0 * (1.0 - z1) : 0.0;
    const double k2 = (z2 >= 0.0 && z2 <= 1.0) ? 2.0 * (1.0 - z2) : 0.0;
    return k1 * k2;
  };
  const auto rep = check_restriction(shifted, true);
  CHECK_FALSE(rep.satisfied);
  CHECK(rep.kappa[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("singular moment matrix is rejected") {
  // a p=1 request on a degenerate kernel is caught via compute path
  CHECK_NOTHROW(moment_matrices(kCone, 3));
}
