#pragma once

// Dense symmetric positive-definite kernels for the bandit statistics:
// Cholesky factorization with rank-1 updates, solves, log-determinants,
// Mahalanobis norms and a cyclic Jacobi eigensolver for small matrices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedcascade {

using Vector = std::vector<double>;

class NotPositiveDefinite : public std::runtime_error {
 public:
  explicit NotPositiveDefinite(const std::string& what)
      : std::runtime_error("not positive definite: " + what) {}
};

class DimensionMismatch : public std::invalid_argument {
 public:
  DimensionMismatch(std::size_t expected, std::size_t got)
      : std::invalid_argument("dimension mismatch: expected " +
                              std::to_string(expected) + ", got " +
                              std::to_string(got)) {}
};

inline void check_dim(std::size_t expected, std::size_t got) {
  if (expected != got) throw DimensionMismatch(expected, got);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  check_dim(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double distance2(std::span<const double> a, std::span<const double> b) {
  check_dim(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_dim(y.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// Square symmetric matrix with full row-major storage. Every mutator writes
// both (i, j) and (j, i), so symmetry holds exactly.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t dim) : dim_(dim), data_(dim * dim, 0.0) {
    if (dim == 0) throw std::invalid_argument("SymMatrix: dim must be >= 1");
  }

  static SymMatrix zero(std::size_t dim) { return SymMatrix(dim); }

  static SymMatrix identity(std::size_t dim, double scale = 1.0) {
    SymMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) m.data_[i * dim + i] = scale;
    return m;
  }

  // Symmetrizes an arbitrary row-major square array as (A + A^T) / 2.
  static SymMatrix from_rows(std::size_t dim, std::span<const double> rows) {
    check_dim(dim * dim, rows.size());
    SymMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = i; j < dim; ++j)
        m.set(i, j, 0.5 * (rows[i * dim + j] + rows[j * dim + i]));
    return m;
  }

  std::size_t dim() const { return dim_; }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * dim_ + j];
  }
  void set(std::size_t i, std::size_t j, double v) {
    data_[i * dim_ + j] = v;
    data_[j * dim_ + i] = v;
  }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<const double> data() const { return data_; }

  double trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) t += data_[i * dim_ + i];
    return t;
  }

  // this += weight * x x^T
  void add_outer(std::span<const double> x, double weight = 1.0) {
    check_dim(dim_, x.size());
    for (std::size_t i = 0; i < dim_; ++i) {
      const double wi = weight * x[i];
      for (std::size_t j = i; j < dim_; ++j) {
        const double v = data_[i * dim_ + j] + wi * x[j];
        data_[i * dim_ + j] = v;
        data_[j * dim_ + i] = v;
      }
    }
  }

  void add_diagonal(double value) {
    for (std::size_t i = 0; i < dim_; ++i) data_[i * dim_ + i] += value;
  }

  SymMatrix& operator+=(const SymMatrix& o) {
    check_dim(dim_, o.dim_);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) {
    a += b;
    return a;
  }

  Vector multiply(std::span<const double> x) const {
    check_dim(dim_, x.size());
    Vector y(dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) y[i] = dot(row(i), x);
    return y;
  }

  bool operator==(const SymMatrix&) const = default;

 private:
  std::size_t dim_ = 0;
  Vector data_;
};

// Lower-triangular Cholesky factor L with M = L L^T and a cached log det M.
class Factorization {
 public:
  Factorization() = default;

  // Factorizes m. A failing pivot triggers one retry with a diagonal jitter
  // of 1e-10 * trace / d; a second failure throws NotPositiveDefinite.
  static Factorization of(const SymMatrix& m) {
    Factorization f;
    if (f.try_factor(m, 0.0)) return f;
    const double jitter = 1e-10 * std::abs(m.trace()) / static_cast<double>(m.dim());
    if (jitter > 0.0 && f.try_factor(m, jitter)) return f;
    throw NotPositiveDefinite("Cholesky pivot <= 0 (dim " +
                              std::to_string(m.dim()) + ")");
  }

  std::size_t dim() const { return dim_; }
  double logdet() const { return logdet_; }
  double lower(std::size_t i, std::size_t j) const { return l_[i * dim_ + j]; }

  // Solves L y = rhs in place.
  void forward_substitute(std::span<double> y) const {
    check_dim(dim_, y.size());
    for (std::size_t i = 0; i < dim_; ++i) {
      double s = y[i];
      const double* li = l_.data() + i * dim_;
      for (std::size_t k = 0; k < i; ++k) s -= li[k] * y[k];
      y[i] = s / li[i];
    }
  }

  // Solves L^T y = rhs in place.
  void backward_substitute(std::span<double> y) const {
    check_dim(dim_, y.size());
    for (std::size_t ii = dim_; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < dim_; ++k) s -= l_[k * dim_ + ii] * y[k];
      y[ii] = s / l_[ii * dim_ + ii];
    }
  }

  Vector solve(std::span<const double> rhs) const {
    Vector y(rhs.begin(), rhs.end());
    check_dim(dim_, y.size());
    forward_substitute(y);
    backward_substitute(y);
    return y;
  }

  // sqrt(x^T M^{-1} x) = ||L^{-1} x||_2
  double mahalanobis_inv(std::span<const double> x) const {
    Vector y(x.begin(), x.end());
    check_dim(dim_, y.size());
    forward_substitute(y);
    return norm2(y);
  }

  // In-place update to the factor of M + weight * x x^T (weight >= 0), O(d^2).
  void rank1_update(std::span<const double> x, double weight = 1.0) {
    check_dim(dim_, x.size());
    if (weight < 0.0) throw std::invalid_argument("rank1_update: negative weight");
    if (weight == 0.0) return;
    const double scale = std::sqrt(weight);
    Vector w(dim_);
    for (std::size_t i = 0; i < dim_; ++i) w[i] = scale * x[i];
    for (std::size_t k = 0; k < dim_; ++k) {
      double& lkk = l_[k * dim_ + k];
      const double r = std::hypot(lkk, w[k]);
      const double c = r / lkk;
      const double s = w[k] / lkk;
      lkk = r;
      for (std::size_t i = k + 1; i < dim_; ++i) {
        double& lik = l_[i * dim_ + k];
        lik = (lik + s * w[i]) / c;
        w[i] = c * w[i] - s * lik;
      }
    }
    refresh_logdet();
  }

  SymMatrix reconstruct() const {
    SymMatrix m(dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k <= j; ++k) s += l_[i * dim_ + k] * l_[j * dim_ + k];
        m.set(i, j, s);
      }
    return m;
  }

 private:
  bool try_factor(const SymMatrix& m, double jitter) {
    dim_ = m.dim();
    l_.assign(dim_ * dim_, 0.0);
    for (std::size_t j = 0; j < dim_; ++j) {
      double diag = m(j, j) + jitter;
      for (std::size_t k = 0; k < j; ++k) diag -= l_[j * dim_ + k] * l_[j * dim_ + k];
      if (!(diag > 0.0) || !std::isfinite(diag)) return false;
      const double ljj = std::sqrt(diag);
      l_[j * dim_ + j] = ljj;
      for (std::size_t i = j + 1; i < dim_; ++i) {
        double s = m(i, j);
        for (std::size_t k = 0; k < j; ++k) s -= l_[i * dim_ + k] * l_[j * dim_ + k];
        l_[i * dim_ + j] = s / ljj;
      }
    }
    refresh_logdet();
    return true;
  }

  void refresh_logdet() {
    double s = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) s += std::log(l_[i * dim_ + i]);
    logdet_ = 2.0 * s;
  }

  std::size_t dim_ = 0;
  Vector l_;
  double logdet_ = 0.0;
};

inline SymMatrix regularized(std::size_t dim, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("regularized: lambda must be > 0");
  return SymMatrix::identity(dim, lambda);
}

inline SymMatrix rank1_add(SymMatrix m, std::span<const double> x, double weight = 1.0) {
  m.add_outer(x, weight);
  return m;
}

inline Vector solve(const Factorization& f, std::span<const double> rhs) {
  return f.solve(rhs);
}

inline double mahalanobis_inv(const Factorization& f, std::span<const double> x) {
  return f.mahalanobis_inv(x);
}

inline double logdet(const SymMatrix& m) { return Factorization::of(m).logdet(); }

// det(current + local) > (1 + alpha_c) det(current), compared in log space.
inline bool det_condition(double logdet_current, double logdet_combined, double alpha_c) {
  return logdet_combined > std::log1p(alpha_c) + logdet_current;
}

inline bool det_condition(const SymMatrix& current, const SymMatrix& local, double alpha_c) {
  if (!(alpha_c > 0.0)) throw std::invalid_argument("det_condition: alpha_c must be > 0");
  return det_condition(logdet(current), logdet(current + local), alpha_c);
}

struct EigenDecomposition {
  Vector values;              // descending
  std::vector<Vector> vectors;  // vectors[k] pairs with values[k]
};

// Cyclic Jacobi rotations; intended for the small (d <= ~50) projected
// problems of the ingest pipeline.
inline EigenDecomposition symmetric_eigen(const SymMatrix& m, double tol = 1e-15,
                                          int max_sweeps = 100) {
  const std::size_t n = m.dim();
  std::vector<double> a(m.data().begin(), m.data().end());
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };

  double total = 0.0;
  for (double x : a) total += x * x;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off <= tol * tol * total) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return at(x, x) > at(y, y); });
  EigenDecomposition out;
  for (std::size_t k : order) {
    out.values.push_back(at(k, k));
    Vector col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = v[i * n + k];
    out.vectors.push_back(std::move(col));
  }
  return out;
}

}  // namespace fedcascade
