#include <cmath>

#include "catch2/catch_amalgamated.hpp"
#include "rmi/oracle.hpp"
#include "rmi/rng.hpp"

using namespace rmi;
using namespace rmi::oracle;

TEST_CASE("gaussian_entropy closed-form values") {
  CHECK_THAT(gaussian_entropy(SymMatrix::identity(1)),
             Catch::Matchers::WithinAbs(0.5 * std::log(kTwoPiE), 1e-12));
  CHECK_THAT(gaussian_entropy(SymMatrix::identity(3)),
             Catch::Matchers::WithinAbs(1.5 * std::log(kTwoPiE), 1e-12));
  SymMatrix diag(2);
  diag.at(0, 0) = 2.0;
  diag.at(1, 1) = 3.0;
  CHECK_THAT(gaussian_entropy(diag),
             Catch::Matchers::WithinAbs(
                 0.5 * std::log(kTwoPiE * kTwoPiE * 6.0), 1e-12));
}

TEST_CASE("gaussian_entropy rejects indefinite input") {
  SymMatrix m(1);
  m.at(0, 0) = -1.0;
  CHECK_THROWS_AS(gaussian_entropy(m), NotPositiveDefinite);
}

TEST_CASE("gaussian_mi closed-form values") {
  CHECK_THAT(gaussian_mi(GaussianJoint::per_coordinate(3, 0.0)),
             Catch::Matchers::WithinAbs(0.0, 1e-14));
  const double rho = 0.5;
  const double scalar = -0.5 * std::log(1.0 - rho * rho);
  CHECK_THAT(gaussian_mi(GaussianJoint::per_coordinate(1, rho)),
             Catch::Matchers::WithinAbs(scalar, 1e-12));
  CHECK_THAT(scalar, Catch::Matchers::WithinAbs(0.14384, 1e-5));
  // independent coordinate pairs add
  CHECK_THAT(gaussian_mi(GaussianJoint::per_coordinate(2, rho)),
             Catch::Matchers::WithinAbs(2.0 * scalar, 1e-12));
}

TEST_CASE("gaussian_mi is invariant under invertible linear maps") {
  SplitMix64 rng(301);
  const std::size_t d = 3;
  GaussianJoint joint = GaussianJoint::per_coordinate(d, 0.4);
  joint.cov.at(0, 1) = joint.cov.at(1, 0) = 0.25;
  const double base = gaussian_mi(joint);
  for (int rep = 0; rep < 5; ++rep) {
    // random maps A (on Y) and B (on P), re-rolled until well conditioned
    std::vector<double> a(d * d), bmat(d * d);
    for (double& v : a) v = rng.normal();
    for (double& v : bmat) v = rng.normal();
    for (std::size_t i = 0; i < d; ++i) {
      a[i * d + i] += 2.0;
      bmat[i * d + i] += 2.0;
    }
    // transformed joint covariance: blockdiag(A, B) Sigma blockdiag(A,B)^T
    const std::size_t full = 2 * d;
    std::vector<double> t(full * full, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        t[i * full + j] = a[i * d + j];
        t[(d + i) * full + (d + j)] = bmat[i * d + j];
      }
    }
    std::vector<double> ts =
        matmul(matmul(t, joint.cov.values(), full, full, full),
               transpose(t, full, full), full, full, full);
    GaussianJoint mapped;
    mapped.dim = d;
    mapped.mean.assign(full, 0.0);
    mapped.cov = SymMatrix::symmetrized(full, ts);
    CHECK_THAT(gaussian_mi(mapped), Catch::Matchers::WithinAbs(base, 1e-9));
  }
}

TEST_CASE("sample_joint is deterministic per seed") {
  GaussianJoint joint = GaussianJoint::per_coordinate(2, 0.3);
  RegionDistribution a = sample_joint(joint, 100, 5);
  RegionDistribution b = sample_joint(joint, 100, 5);
  for (std::size_t i = 0; i < a.points_y.size(); ++i) {
    CHECK(a.points_y[i] == b.points_y[i]);
    CHECK(a.points_p[i] == b.points_p[i]);
  }
  CHECK(a.continuous_y);
}

TEST_CASE("empirical covariance converges to the joint covariance") {
  GaussianJoint joint = GaussianJoint::per_coordinate(2, 0.6);
  joint.cov.at(0, 1) = joint.cov.at(1, 0) = 0.3;
  const std::size_t n = 100000;
  RegionDistribution dist = sample_joint(joint, n, 11);
  // stack y and p back together and compare block by block
  const std::size_t d = 2, full = 4;
  DenseTensor stacked({full, n});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < d; ++i) {
      stacked(i, j) = dist.points_y(i, j);
      stacked(d + i, j) = dist.points_p(i, j);
    }
  }
  SymMatrix emp = brute_force_cov(stacked);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < full * full; ++i) {
    const double diff = emp.values()[i] - joint.cov.values()[i];
    num += diff * diff;
    den += joint.cov.values()[i] * joint.cov.values()[i];
  }
  CHECK(std::sqrt(num / den) <= 0.02);
}

TEST_CASE("uncorrelated blocks show CLT-scale empirical cross-covariance") {
  GaussianJoint joint = GaussianJoint::per_coordinate(2, 0.0);
  const std::size_t n = 100000;
  RegionDistribution dist = sample_joint(joint, n, 13);
  const double band = 3.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      double mi = 0.0, mk = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        mi += dist.points_y(i, j);
        mk += dist.points_p(k, j);
      }
      mi /= n;
      mk /= n;
      double c = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        c += (dist.points_y(i, j) - mi) * (dist.points_p(k, j) - mk);
      }
      CHECK(std::abs(c / n) <= band);
    }
  }
}

TEST_CASE("brute_force_det base cases") {
  CHECK(brute_force_det({7.0}, 1) == 7.0);
  CHECK(brute_force_det({1.0, 2.0, 3.0, 4.0}, 2) == -2.0);
  CHECK_THROWS_AS(brute_force_det(std::vector<double>(25, 1.0), 5),
                  DimTooLarge);
}

TEST_CASE("brute_force_det agrees with the Cholesky determinant") {
  SplitMix64 rng(303);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t d = 1 + rng.next_below(4);
    std::vector<double> a(d * d);
    for (double& v : a) v = rng.normal();
    SymMatrix m =
        SymMatrix::symmetrized(d, matmul(a, transpose(a, d, d), d, d, d));
    m.add_diagonal(1.0);
    const double via_chol = std::exp(logdet(cholesky(m)));
    CHECK_THAT(brute_force_det(m),
               Catch::Matchers::WithinRel(via_chol, 1e-9));
  }
}

TEST_CASE("brute_force_cov base cases") {
  DenseTensor constant({3, 4}, 2.5);
  const SymMatrix cov = brute_force_cov(constant);
  for (double v : cov.values()) CHECK(v == 0.0);
  DenseTensor pm = DenseTensor::from_data({1, 2}, {-1.0, 1.0});
  CHECK(brute_force_cov(pm).at(0, 0) == 1.0);
  CHECK_THROWS_AS(brute_force_cov(DenseTensor({2, 1})), TooFewSamples);
}

TEST_CASE("SplitMix64 reference stream") {
  // First outputs for seed 1234567, as produced by the published
  // reference implementation.
  SplitMix64 rng(1234567);
  CHECK(rng.next_u64() == 6457827717110365317ULL);
  CHECK(rng.next_u64() == 3203168211198807973ULL);
}
