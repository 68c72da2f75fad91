#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "rmi/errors.hpp"
#include "rmi/lower_bound.hpp"
#include "rmi/region.hpp"
#include "rmi/rng.hpp"
#include "rmi/tensor.hpp"

namespace rmi::oracle {

inline constexpr double kTwoPiE = 2.0 * 3.14159265358979323846 * 2.718281828459045235;

/// Joint Gaussian over stacked (Y, P) blocks of equal dimension d.
struct GaussianJoint {
  std::size_t dim = 0;        // d per block
  std::vector<double> mean;   // 2d
  SymMatrix cov;              // 2d x 2d, PD

  SymMatrix block_yy() const { return block(0, 0); }
  SymMatrix block_pp() const { return block(1, 1); }
  DenseTensor block_yp() const {
    DenseTensor k({dim, dim});
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        k(i, j) = cov.at(i, dim + j);
      }
    }
    return k;
  }

  /// Joint with Sigma_Y = Sigma_P = I and Sigma_YP = rho I: each y
  /// coordinate correlates with its p partner and nothing else.
  static GaussianJoint per_coordinate(std::size_t d, double rho) {
    GaussianJoint j;
    j.dim = d;
    j.mean.assign(2 * d, 0.0);
    j.cov = SymMatrix(2 * d);
    for (std::size_t i = 0; i < 2 * d; ++i) j.cov.at(i, i) = 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      j.cov.at(i, d + i) = rho;
      j.cov.at(d + i, i) = rho;
    }
    return j;
  }

 private:
  SymMatrix block(std::size_t bi, std::size_t bj) const {
    SymMatrix b(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        b.at(i, j) = cov.at(bi * dim + i, bj * dim + j);
      }
    }
    return b;
  }
};

/// Differential entropy of N(mu, cov): 1/2 log((2 pi e)^d det(cov)).
inline double gaussian_entropy(const SymMatrix& cov) {
  const double d = static_cast<double>(cov.dim());
  return 0.5 * (d * std::log(kTwoPiE) + logdet(cholesky(cov)));
}

/// Exact mutual information of the joint:
/// 1/2 (logdet Sigma_Y - logdet(Sigma_Y - Sigma_YP Sigma_P^{-1} Sigma_YP^T)).
inline double gaussian_mi(const GaussianJoint& joint) {
  const std::size_t d = joint.dim;
  SymMatrix sy = joint.block_yy();
  SymMatrix sp = joint.block_pp();
  DenseTensor k = joint.block_yp();
  CholeskyFactor fp = cholesky(sp);
  std::vector<double> w = solve_spd_raw(fp, transpose(k.values(), d, d), d);
  std::vector<double> kw = matmul(k.values(), w, d, d, d);
  std::vector<double> cond(d * d);
  for (std::size_t i = 0; i < d * d; ++i) {
    cond[i] = sy.values()[i] - kw[i];
  }
  return 0.5 * (logdet(cholesky(sy)) -
                logdet(cholesky(SymMatrix::symmetrized(d, cond))));
}

/// Draws n i.i.d. samples via x = mean + L z with L the Cholesky factor
/// of the joint covariance and z standard normal. The first d
/// coordinates land in points_y (continuous; the binary invariant is
/// waived and flagged), the last d in points_p.
inline RegionDistribution sample_joint(const GaussianJoint& joint,
                                       std::size_t n, std::uint64_t seed) {
  if (n < 2) throw TooFewSamples("sample_joint: need n >= 2");
  const std::size_t d = joint.dim, full = 2 * d;
  CholeskyFactor l = cholesky(joint.cov);
  RegionDistribution dist;
  dist.dim = d;
  dist.count = n;
  dist.continuous_y = true;
  dist.points_y = DenseTensor({d, n});
  dist.points_p = DenseTensor({d, n});
  SplitMix64 rng(seed);
  std::vector<double> z(full), x(full);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < full; ++i) z[i] = rng.normal();
    for (std::size_t i = 0; i < full; ++i) {
      double s = joint.mean[i];
      for (std::size_t k = 0; k <= i; ++k) s += l.at(i, k) * z[k];
      x[i] = s;
    }
    for (std::size_t i = 0; i < d; ++i) {
      dist.points_y(i, j) = x[i];
      dist.points_p(i, j) = x[d + i];
    }
  }
  return dist;
}

/// Cofactor-expansion determinant, d <= 4. Independent of the Cholesky
/// path; expansion always along the first row.
inline double brute_force_det(const std::vector<double>& m, std::size_t d) {
  if (d > 4) throw DimTooLarge("brute_force_det: d must be <= 4");
  if (d == 0) throw ShapeMismatch("brute_force_det: empty matrix");
  if (d == 1) return m[0];
  double det = 0.0;
  double sign = 1.0;
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> minor((d - 1) * (d - 1));
    for (std::size_t r = 1; r < d; ++r) {
      std::size_t cc = 0;
      for (std::size_t c = 0; c < d; ++c) {
        if (c == j) continue;
        minor[(r - 1) * (d - 1) + cc++] = m[r * d + c];
      }
    }
    det += sign * m[j] * brute_force_det(minor, d - 1);
    sign = -sign;
  }
  return det;
}

inline double brute_force_det(const SymMatrix& m) {
  return brute_force_det(m.values(), m.dim());
}

/// Two-pass loop covariance of one point cloud; deliberately a separate
/// code path from estimate_stats.
inline SymMatrix brute_force_cov(const DenseTensor& points) {
  if (points.rank() != 2) throw ShapeMismatch("brute_force_cov: expected dxN");
  const std::size_t d = points.dim(0), n = points.dim(1);
  if (n < 2) throw TooFewSamples("brute_force_cov: need N >= 2");
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) mean[i] += points(i, j);
    mean[i] /= static_cast<double>(n);
  }
  SymMatrix cov(d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        s += (points(i, j) - mean[i]) * (points(k, j) - mean[k]);
      }
      cov.at(i, k) = s / static_cast<double>(n);
    }
  }
  return cov;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
/// Test-support oracle; fine for the small dimensions used here.
inline std::vector<double> jacobi_eigenvalues(SymMatrix a) {
  const std::size_t d = a.dim();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i + 1; j < d; ++j) off += a.at(i, j) * a.at(i, j);
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(d);
  for (std::size_t i = 0; i < d; ++i) eig[i] = a.at(i, i);
  return eig;
}

}  // namespace rmi::oracle
