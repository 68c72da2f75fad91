#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rmi/errors.hpp"
#include "rmi/region.hpp"
#include "rmi/tensor.hpp"

namespace rmi {

/// First and second moments of one paired region point cloud:
/// mean_y, mean_p, Sigma_Y, Sigma_P and the cross-covariance
/// Cov(Y, P). Population (1/N) normalization throughout.
struct CovarianceStats {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<double> mean_y;
  std::vector<double> mean_p;
  SymMatrix sigma_y;
  SymMatrix sigma_p;
  DenseTensor cov_yp;  // d x d, rows index Y, columns index P
};

inline CovarianceStats estimate_stats(const RegionDistribution& dist) {
  const std::size_t d = dist.dim, n = dist.count;
  if (n < 2) {
    throw TooFewSamples("estimate_stats: need N >= 2, got " +
                        std::to_string(n));
  }
  CovarianceStats s;
  s.dim = d;
  s.count = n;
  s.mean_y.assign(d, 0.0);
  s.mean_p.assign(d, 0.0);
  const double* y = dist.points_y.data();
  const double* p = dist.points_p.data();
  for (std::size_t i = 0; i < d; ++i) {
    double sy = 0.0, sp = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sy += y[i * n + j];
      sp += p[i * n + j];
    }
    s.mean_y[i] = sy / static_cast<double>(n);
    s.mean_p[i] = sp / static_cast<double>(n);
  }
  std::vector<double> syy(d * d, 0.0), spp(d * d, 0.0), syp(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      double ayy = 0.0, app = 0.0, ayp = 0.0;
      const double myi = s.mean_y[i], mpi = s.mean_p[i];
      const double myk = s.mean_y[k], mpk = s.mean_p[k];
      for (std::size_t j = 0; j < n; ++j) {
        const double cyi = y[i * n + j] - myi;
        const double cyk = y[k * n + j] - myk;
        const double cpi = p[i * n + j] - mpi;
        const double cpk = p[k * n + j] - mpk;
        ayy += cyi * cyk;
        app += cpi * cpk;
        ayp += cyi * cpk;
      }
      const double inv_n = 1.0 / static_cast<double>(n);
      syy[i * d + k] = ayy * inv_n;
      spp[i * d + k] = app * inv_n;
      syp[i * d + k] = ayp * inv_n;
    }
  }
  s.sigma_y = SymMatrix::symmetrized(d, syy);
  s.sigma_p = SymMatrix::symmetrized(d, spp);
  s.cov_yp = DenseTensor::from_data({d, d}, std::move(syp));
  return s;
}

/// Regularized approximation of the posterior covariance of Y given P:
/// M = Sigma_Y - Cov(Y,P) (Sigma_P + xi I)^{-1} Cov(Y,P)^T + xi I.
/// The inverse is never formed; the middle product goes through a
/// Cholesky solve. Keeps the solve output for the backward pass.
struct ConditionalCov {
  SymMatrix m;
  double xi = 0.0;
  CholeskyFactor factor{0, {}};           // Cholesky of m
  std::vector<double> regression_solve;   // (Sigma_P + xi I)^{-1} Cov(Y,P)^T
};

inline ConditionalCov conditional_cov(const CovarianceStats& stats,
                                      double xi) {
  if (!(xi > 0.0)) throw Error("conditional_cov: xi must be > 0");
  const std::size_t d = stats.dim;
  SymMatrix s_reg = stats.sigma_p;
  s_reg.add_diagonal(xi);
  CholeskyFactor fs = cholesky(s_reg);
  // W = (Sigma_P + xi I)^{-1} Cov(Y,P)^T, d x d
  std::vector<double> w =
      solve_spd_raw(fs, transpose(stats.cov_yp.values(), d, d), d);
  std::vector<double> kw = matmul(stats.cov_yp.values(), w, d, d, d);
  std::vector<double> m_raw(d * d);
  for (std::size_t i = 0; i < d * d; ++i) {
    m_raw[i] = stats.sigma_y.values()[i] - kw[i];
  }
  ConditionalCov cc;
  cc.m = SymMatrix::symmetrized(d, m_raw);
  cc.m.add_diagonal(xi);
  cc.xi = xi;
  cc.regression_solve = std::move(w);
  cc.factor = cholesky(cc.m);  // throws NotPositiveDefinite on corruption
  return cc;
}

/// Normalized lower bound I_l = -(1/(2d)) * logdet(M). Since M >= xi I,
/// the value never exceeds -(1/2) log(xi).
inline double rmi_lower_bound(const ConditionalCov& cc) {
  return -logdet(cc.factor) / (2.0 * static_cast<double>(cc.m.dim()));
}

/// Lower-bound estimate of I(Y; P) in nats with the dropped constants
/// reinstated: 1/2 (logdet(Sigma_Y + xi I) - logdet(M)). For a Gaussian
/// joint this converges to the exact mutual information.
inline double full_lower_bound(const CovarianceStats& stats,
                               const ConditionalCov& cc) {
  SymMatrix sy = stats.sigma_y;
  sy.add_diagonal(cc.xi);
  return 0.5 * (logdet(cholesky(sy)) - logdet(cc.factor));
}

}  // namespace rmi
