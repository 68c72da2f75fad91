#include <algorithm>
#include <cmath>

#include "catch2/catch_amalgamated.hpp"
#include "rmi/lower_bound.hpp"
#include "rmi/oracle.hpp"
#include "rmi/rng.hpp"
#include "test_support.hpp"

using namespace rmi;
using testsupport::random_distribution;

namespace {
constexpr double kXi = 1e-6;
const double kFloor = -0.5 * std::log(kXi);  // ~6.9078
}  // namespace

TEST_CASE("estimate_stats of constant points has zero covariance") {
  RegionDistribution dist;
  dist.dim = 2;
  dist.count = 5;
  dist.points_y = DenseTensor({2, 5}, 1.0);
  dist.points_p = DenseTensor({2, 5}, 0.25);
  CovarianceStats s = estimate_stats(dist);
  CHECK(s.mean_y[0] == 1.0);
  CHECK(s.mean_p[1] == 0.25);
  for (double v : s.sigma_y.values()) CHECK(v == 0.0);
  for (double v : s.sigma_p.values()) CHECK(v == 0.0);
  for (double v : s.cov_yp.values()) CHECK(v == 0.0);
}

TEST_CASE("estimate_stats Bernoulli(1/2) variance is 0.25") {
  RegionDistribution dist;
  dist.dim = 1;
  dist.count = 2;
  dist.points_y = DenseTensor::from_data({1, 2}, {0.0, 1.0});
  dist.points_p = DenseTensor::from_data({1, 2}, {0.0, 1.0});
  CovarianceStats s = estimate_stats(dist);
  CHECK(s.sigma_p.at(0, 0) == 0.25);
}

TEST_CASE("estimate_stats rejects single samples") {
  RegionDistribution dist;
  dist.dim = 1;
  dist.count = 1;
  dist.points_y = DenseTensor({1, 1});
  dist.points_p = DenseTensor({1, 1});
  CHECK_THROWS_AS(estimate_stats(dist), TooFewSamples);
}

TEST_CASE("estimate_stats matches the two-pass loop oracle") {
  SplitMix64 rng(41);
  for (int rep = 0; rep < 20; ++rep) {
    RegionDistribution dist = random_distribution(rng);
    CovarianceStats s = estimate_stats(dist);
    SymMatrix ref_y = oracle::brute_force_cov(dist.points_y);
    SymMatrix ref_p = oracle::brute_force_cov(dist.points_p);
    for (std::size_t i = 0; i < s.dim * s.dim; ++i) {
      CHECK_THAT(s.sigma_y.values()[i],
                 Catch::Matchers::WithinAbs(ref_y.values()[i], 1e-12));
      CHECK_THAT(s.sigma_p.values()[i],
                 Catch::Matchers::WithinAbs(ref_p.values()[i], 1e-12));
    }
  }
}

TEST_CASE("cross-covariance transposes when clouds swap") {
  SplitMix64 rng(43);
  RegionDistribution dist = random_distribution(rng);
  RegionDistribution swapped = dist;
  std::swap(swapped.points_y, swapped.points_p);
  CovarianceStats a = estimate_stats(dist);
  CovarianceStats b = estimate_stats(swapped);
  for (std::size_t i = 0; i < a.dim; ++i) {
    for (std::size_t j = 0; j < a.dim; ++j) {
      CHECK(a.cov_yp(i, j) == b.cov_yp(j, i));
    }
  }
}

TEST_CASE("independent clouds give M = Sigma_Y + xi I") {
  RegionDistribution dist;
  dist.dim = 2;
  dist.count = 4;
  dist.points_y =
      DenseTensor::from_data({2, 4}, {0, 1, 0, 1, 1, 1, 0, 0});
  dist.points_p = DenseTensor({2, 4}, 0.5);  // constant => Cov(Y,P) = 0
  CovarianceStats s = estimate_stats(dist);
  ConditionalCov cc = conditional_cov(s, kXi);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      const double expect = s.sigma_y.at(i, j) + (i == j ? kXi : 0.0);
      CHECK_THAT(cc.m.at(i, j), Catch::Matchers::WithinAbs(expect, 1e-15));
    }
  }
}

TEST_CASE("perfect prediction collapses M to the xi scale") {
  SplitMix64 rng(47);
  RegionDistribution dist = random_distribution(rng);
  dist.points_p = dist.points_y;
  CovarianceStats s = estimate_stats(dist);
  ConditionalCov cc = conditional_cov(s, kXi);
  // Schur complement vanishes up to the xi in the solve: every
  // eigenvalue of M lies in [xi, 2 xi].
  for (double ev : oracle::jacobi_eigenvalues(cc.m)) {
    CHECK(ev >= kXi - 1e-18);
    CHECK(ev <= 2.0 * kXi + 1e-12);
  }
  CHECK(rmi_lower_bound(cc) <= kFloor + 1e-9);
}

TEST_CASE("conditional covariance matches the Gaussian closed form") {
  const std::size_t d = 3;
  SplitMix64 rng(53);
  oracle::GaussianJoint joint = oracle::GaussianJoint::per_coordinate(d, 0.6);
  // make the blocks less trivial with some extra structure
  joint.cov.at(0, 1) = joint.cov.at(1, 0) = 0.3;
  joint.cov.at(d + 0, d + 1) = joint.cov.at(d + 1, d + 0) = 0.2;
  RegionDistribution dist = oracle::sample_joint(joint, 100000, 99);
  CovarianceStats s = estimate_stats(dist);
  ConditionalCov cc = conditional_cov(s, kXi);

  SymMatrix sy = joint.block_yy();
  SymMatrix sp = joint.block_pp();
  DenseTensor k = joint.block_yp();
  std::vector<double> w =
      solve_spd_raw(cholesky(sp), transpose(k.values(), d, d), d);
  std::vector<double> kw = matmul(k.values(), w, d, d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double exact = sy.at(i, j) - kw[i * d + j];
      CHECK_THAT(cc.m.at(i, j), Catch::Matchers::WithinAbs(exact, 0.02));
    }
  }
}

TEST_CASE("rmi_lower_bound closed-form cases") {
  ConditionalCov cc = conditional_cov(
      [] {
        // constant y, any p: Sigma_Y = 0 and Cov = 0 exactly
        RegionDistribution dist;
        dist.dim = 3;
        dist.count = 8;
        dist.points_y = DenseTensor({3, 8}, 1.0);
        dist.points_p = DenseTensor({3, 8});
        SplitMix64 rng(61);
        for (double& v : dist.points_p.values()) v = rng.uniform();
        return estimate_stats(dist);
      }(),
      kXi);
  // M == xi I exactly, so the bound hits the floor for any d
  CHECK_THAT(rmi_lower_bound(cc), Catch::Matchers::WithinAbs(kFloor, 1e-9));

  ConditionalCov unit;
  unit.m = SymMatrix::identity(4);
  unit.xi = kXi;
  unit.factor = cholesky(unit.m);
  CHECK(rmi_lower_bound(unit) == 0.0);

  ConditionalCov diag;
  diag.m = SymMatrix(2);
  diag.m.at(0, 0) = 2.0;
  diag.m.at(1, 1) = 3.0;
  diag.xi = kXi;
  diag.factor = cholesky(diag.m);
  CHECK_THAT(rmi_lower_bound(diag),
             Catch::Matchers::WithinAbs(-0.25 * std::log(6.0), 1e-12));
}

TEST_CASE("full_lower_bound is zero for independent clouds") {
  RegionDistribution dist;
  dist.dim = 1;
  dist.count = 4;
  dist.points_y = DenseTensor::from_data({1, 4}, {0, 1, 0, 1});
  dist.points_p = DenseTensor({1, 4}, 0.5);
  CovarianceStats s = estimate_stats(dist);
  ConditionalCov cc = conditional_cov(s, kXi);
  CHECK_THAT(full_lower_bound(s, cc), Catch::Matchers::WithinAbs(0.0, 1e-9));
}

TEST_CASE("full_lower_bound approaches the Gaussian MI") {
  oracle::GaussianJoint joint = oracle::GaussianJoint::per_coordinate(2, 0.5);
  RegionDistribution dist = oracle::sample_joint(joint, 100000, 7);
  CovarianceStats s = estimate_stats(dist);
  ConditionalCov cc = conditional_cov(s, kXi);
  CHECK_THAT(full_lower_bound(s, cc),
             Catch::Matchers::WithinAbs(-std::log(0.75), 0.05));
}

TEST_CASE("perfect linear dependence drives the bound to the xi ceiling") {
  oracle::GaussianJoint joint = oracle::GaussianJoint::per_coordinate(2, 0.0);
  RegionDistribution dist = oracle::sample_joint(joint, 5000, 8);
  dist.points_p = dist.points_y;  // Y == P
  CovarianceStats s = estimate_stats(dist);
  ConditionalCov cc = conditional_cov(s, kXi);
  CHECK(full_lower_bound(s, cc) > 5.0);  // ~ -logdet of the xi floor
}

TEST_CASE("floor property holds on random inputs") {
  SplitMix64 rng(71);
  for (int rep = 0; rep < 100; ++rep) {
    RegionDistribution dist = random_distribution(rng, 3, rep % 2 == 1);
    ConditionalCov cc = conditional_cov(estimate_stats(dist), kXi);
    CHECK(rmi_lower_bound(cc) <= kFloor + 1e-9);
  }
}

TEST_CASE("column permutation leaves the bound nearly unchanged") {
  SplitMix64 rng(73);
  RegionDistribution dist = random_distribution(rng);
  RegionDistribution shuffled = dist;
  const std::size_t n = dist.count;
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < n; ++j) perm[j] = j;
  for (std::size_t i = n; i-- > 1;) {
    std::swap(perm[i], perm[rng.next_below(i + 1)]);
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < dist.dim; ++i) {
      shuffled.points_y(i, j) = dist.points_y(i, perm[j]);
      shuffled.points_p(i, j) = dist.points_p(i, perm[j]);
    }
  }
  const double a = rmi_lower_bound(conditional_cov(estimate_stats(dist), kXi));
  const double b =
      rmi_lower_bound(conditional_cov(estimate_stats(shuffled), kXi));
  CHECK_THAT(a, Catch::Matchers::WithinAbs(b, 1e-10));
}

TEST_CASE("trace-log identity against the eigenvalue oracle") {
  SplitMix64 rng(79);
  for (int rep = 0; rep < 20; ++rep) {
    RegionDistribution dist = random_distribution(rng, 2);
    ConditionalCov cc = conditional_cov(estimate_stats(dist), kXi);
    double tr_log = 0.0;
    for (double ev : oracle::jacobi_eigenvalues(cc.m)) tr_log += std::log(ev);
    const double via_chol =
        -tr_log / (2.0 * static_cast<double>(cc.m.dim()));
    CHECK_THAT(rmi_lower_bound(cc),
               Catch::Matchers::WithinAbs(via_chol, 1e-10));
  }
}

TEST_CASE("Schur complement of estimated stats is PSD") {
  SplitMix64 rng(83);
  for (int rep = 0; rep < 50; ++rep) {
    RegionDistribution dist = random_distribution(rng, 2);
    ConditionalCov cc = conditional_cov(estimate_stats(dist), kXi);
    SymMatrix schur = cc.m;
    schur.add_diagonal(-kXi);
    for (double ev : oracle::jacobi_eigenvalues(schur)) {
      CHECK(ev >= -1e-8);
    }
  }
}

TEST_CASE("stronger correlation raises the estimated bound") {
  double prev = -1.0;
  for (double rho : {0.0, 0.3, 0.6, 0.9}) {
    oracle::GaussianJoint joint =
        oracle::GaussianJoint::per_coordinate(2, rho);
    RegionDistribution dist = oracle::sample_joint(joint, 100000, 17);
    CovarianceStats s = estimate_stats(dist);
    const double est = full_lower_bound(s, conditional_cov(s, kXi));
    CHECK(est > prev);
    prev = est;
  }
}

TEST_CASE("conditional_cov rejects non-positive xi") {
  SplitMix64 rng(89);
  RegionDistribution dist = random_distribution(rng);
  CHECK_THROWS_AS(conditional_cov(estimate_stats(dist), 0.0), Error);
}
