#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "rmi/errors.hpp"

namespace rmi {

/// Dense row-major tensor of doubles. The whole library runs in double
/// precision; there is no single-precision path.
class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1},
                              std::multiplies<>()),
              fill) {}

  static DenseTensor from_data(std::vector<std::size_t> shape,
                               std::vector<double> data) {
    DenseTensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    const std::size_t expect =
        std::accumulate(t.shape_.begin(), t.shape_.end(), std::size_t{1},
                        std::multiplies<>());
    if (expect != t.data_.size()) {
      throw ShapeMismatch("tensor data length does not match shape");
    }
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  template <typename... Ix>
  double& operator()(Ix... ix) {
    return data_[offset(ix...)];
  }
  template <typename... Ix>
  double operator()(Ix... ix) const {
    return data_[offset(ix...)];
  }

  template <typename... Ix>
  std::size_t offset(Ix... ix) const {
    const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
    std::size_t flat = 0;
    for (std::size_t k = 0; k < sizeof...(Ix); ++k) {
      flat = flat * shape_[k] + idx[k];
    }
    return flat;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Symmetric d x d matrix. Construction symmetrizes as (A + A^T)/2 so
/// the stored entries are exactly symmetric.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(std::size_t dim, double fill = 0.0)
      : dim_(dim), data_(dim * dim, fill) {}

  // Takes arbitrary row-major d x d data and symmetrizes it.
  static SymMatrix symmetrized(std::size_t dim, const std::vector<double>& a) {
    if (a.size() != dim * dim) {
      throw ShapeMismatch("SymMatrix: data length != dim^2");
    }
    SymMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        m.data_[i * dim + j] = 0.5 * (a[i * dim + j] + a[j * dim + i]);
      }
    }
    return m;
  }

  static SymMatrix identity(std::size_t dim, double scale = 1.0) {
    SymMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) m.data_[i * dim + i] = scale;
    return m;
  }

  std::size_t dim() const { return dim_; }
  double& at(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }
  const std::vector<double>& values() const { return data_; }
  std::vector<double>& values() { return data_; }

  void add_diagonal(double v) {
    for (std::size_t i = 0; i < dim_; ++i) data_[i * dim_ + i] += v;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

/// Lower-triangular Cholesky factor L with M = L L^T and strictly
/// positive diagonal.
class CholeskyFactor {
 public:
  CholeskyFactor(std::size_t dim, std::vector<double> lower)
      : dim_(dim), lower_(std::move(lower)) {}

  std::size_t dim() const { return dim_; }
  double at(std::size_t i, std::size_t j) const { return lower_[i * dim_ + j]; }
  const std::vector<double>& values() const { return lower_; }

 private:
  std::size_t dim_;
  std::vector<double> lower_;
};

inline CholeskyFactor cholesky(const SymMatrix& m) {
  const std::size_t d = m.dim();
  if (d < 1) throw ShapeMismatch("cholesky: dim must be >= 1");
  std::vector<double> l(d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double diag = m.at(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l[j * d + k] * l[j * d + k];
    if (!(diag > 0.0)) {
      throw NotPositiveDefinite("cholesky: matrix is not positive definite");
    }
    const double ljj = std::sqrt(diag);
    l[j * d + j] = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = m.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
      l[i * d + j] = s / ljj;
    }
  }
  return CholeskyFactor(d, std::move(l));
}

/// log(det(M)) of the factored matrix as 2 * sum_i log(L_ii). Equal to
/// Tr(log(M)), which avoids under/overflow of the raw determinant.
inline double logdet(const CholeskyFactor& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.dim(); ++i) s += std::log(f.at(i, i));
  return 2.0 * s;
}

/// Solves M X = B via the factor (forward then backward substitution).
/// B is d x k row-major; X overwrites a copy of B.
inline std::vector<double> solve_spd_raw(const CholeskyFactor& f,
                                         std::vector<double> b,
                                         std::size_t ncols) {
  const std::size_t d = f.dim();
  if (b.size() != d * ncols) {
    throw ShapeMismatch("solve_spd: rhs rows != factor dim");
  }
  // L z = b
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = f.at(i, k);
      for (std::size_t c = 0; c < ncols; ++c) {
        b[i * ncols + c] -= lik * b[k * ncols + c];
      }
    }
    const double inv = 1.0 / f.at(i, i);
    for (std::size_t c = 0; c < ncols; ++c) b[i * ncols + c] *= inv;
  }
  // L^T x = z
  for (std::size_t ii = d; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < d; ++k) {
      const double lki = f.at(k, ii);
      for (std::size_t c = 0; c < ncols; ++c) {
        b[ii * ncols + c] -= lki * b[k * ncols + c];
      }
    }
    const double inv = 1.0 / f.at(ii, ii);
    for (std::size_t c = 0; c < ncols; ++c) b[ii * ncols + c] *= inv;
  }
  return b;
}

inline DenseTensor solve_spd(const CholeskyFactor& f, const DenseTensor& b) {
  const std::size_t d = f.dim();
  if (b.rank() < 1 || b.dim(0) != d) {
    throw ShapeMismatch("solve_spd: rhs must have d rows");
  }
  const std::size_t ncols = b.size() / d;
  return DenseTensor::from_data(b.shape(),
                                solve_spd_raw(f, b.values(), ncols));
}

/// M^{-1} via d triangular solves against the identity, symmetrized.
inline SymMatrix spd_inverse(const CholeskyFactor& f) {
  const std::size_t d = f.dim();
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  return SymMatrix::symmetrized(d, solve_spd_raw(f, std::move(eye), d));
}

// Small dense helpers for d x d products (row-major flat storage).
inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, std::size_t n,
                                  std::size_t m, std::size_t k) {
  std::vector<double> c(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double aij = a[i * m + j];
      for (std::size_t l = 0; l < k; ++l) {
        c[i * k + l] += aij * b[j * k + l];
      }
    }
  }
  return c;
}

inline std::vector<double> transpose(const std::vector<double>& a,
                                     std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  }
  return t;
}

}  // namespace rmi
