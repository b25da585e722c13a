#include "polyrec/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace polyrec {

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(const Vector& d) {
  DenseMatrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

Vector DenseMatrix::column(std::size_t j) const {
  Vector v(rows_);
  for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
  return v;
}

void DenseMatrix::set_column(std::size_t j, const Vector& v) {
  if (v.size() != rows_) throw DimensionError("set_column: length mismatch");
  for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double frobenius_norm(const DenseMatrix& a) { return norm2(a.data()); }

Vector LinearOperator::operator*(const Vector& x) const {
  if (x.size() != dim()) throw DimensionError("operator apply: length mismatch");
  Vector y(dim());
  apply(x, y);
  return y;
}

SparseOperator::SparseOperator(std::size_t n, std::vector<std::size_t> row_ptr,
                               std::vector<std::size_t> col_idx, std::vector<double> values,
                               bool symmetric)
    : n_(n), row_ptr_(std::move(row_ptr)), col_idx_(std::move(col_idx)),
      values_(std::move(values)), symmetric_(symmetric) {
  validate();
}

void SparseOperator::validate() const {
  if (row_ptr_.size() != n_ + 1) throw DimensionError("CSR: row_ptr must have length n+1");
  if (row_ptr_.front() != 0 || row_ptr_.back() != values_.size() || col_idx_.size() != values_.size())
    throw DimensionError("CSR: inconsistent array lengths");
  for (std::size_t i = 0; i < n_; ++i)
    if (row_ptr_[i] > row_ptr_[i + 1]) throw DimensionError("CSR: row_ptr must be nondecreasing");
  for (auto c : col_idx_)
    if (c >= n_) throw DimensionError("CSR: column index out of range");
  if (!all_finite(values_)) throw NumericalError("CSR: non-finite entry");
  if (!symmetric_) return;
  // every (i,j,v) needs a matching (j,i,v), exact comparison
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) {
      std::size_t j = col_idx_[p];
      bool found = false;
      for (std::size_t q = row_ptr_[j]; q < row_ptr_[j + 1]; ++q) {
        if (col_idx_[q] == i && values_[q] == values_[p]) {
          found = true;
          break;
        }
      }
      if (!found)
        throw NumericalError("CSR: symmetric flag set but entry (" + std::to_string(i) + "," +
                             std::to_string(j) + ") has no mirror");
    }
  }
}

SparseOperator SparseOperator::from_triplets(std::size_t n, const std::vector<std::size_t>& rows,
                                             const std::vector<std::size_t>& cols, const Vector& vals,
                                             bool symmetric) {
  if (rows.size() != cols.size() || rows.size() != vals.size())
    throw DimensionError("from_triplets: array lengths differ");
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rows[a] != rows[b] ? rows[a] < rows[b] : cols[a] < cols[b];
  });
  std::vector<std::size_t> row_ptr(n + 1, 0), col_idx;
  Vector values;
  for (std::size_t t = 0; t < order.size(); ++t) {
    std::size_t k = order[t];
    if (rows[k] >= n || cols[k] >= n) throw DimensionError("from_triplets: index out of range");
    if (!col_idx.empty() && t > 0 && rows[order[t - 1]] == rows[k] && cols[order[t - 1]] == cols[k]) {
      values.back() += vals[k];
      continue;
    }
    col_idx.push_back(cols[k]);
    values.push_back(vals[k]);
    row_ptr[rows[k] + 1]++;
  }
  for (std::size_t i = 0; i < n; ++i) row_ptr[i + 1] += row_ptr[i];
  return SparseOperator(n, std::move(row_ptr), std::move(col_idx), std::move(values), symmetric);
}

SparseOperator SparseOperator::from_diagonal(const Vector& d) {
  std::size_t n = d.size();
  std::vector<std::size_t> row_ptr(n + 1), col_idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    row_ptr[i + 1] = i + 1;
    col_idx[i] = i;
  }
  return SparseOperator(n, std::move(row_ptr), std::move(col_idx), d, true);
}

SparseOperator SparseOperator::from_dense(const DenseMatrix& m, bool symmetric) {
  if (m.rows() != m.cols()) throw DimensionError("from_dense: matrix not square");
  std::size_t n = m.rows();
  std::vector<std::size_t> row_ptr(n + 1, 0), col_idx;
  Vector values;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (m(i, j) != 0.0) {
        col_idx.push_back(j);
        values.push_back(m(i, j));
      }
    }
    row_ptr[i + 1] = values.size();
  }
  return SparseOperator(n, std::move(row_ptr), std::move(col_idx), std::move(values), symmetric);
}

void SparseOperator::apply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != n_ || y.size() != n_) throw DimensionError("spmv: dimension mismatch");
  for (std::size_t i = 0; i < n_; ++i) {
    double s = 0.0;
    for (std::size_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) s += values_[p] * x[col_idx_[p]];
    y[i] = s;
  }
}

DenseMatrix SparseOperator::to_dense() const {
  DenseMatrix m(n_, n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) m(i, col_idx_[p]) += values_[p];
  return m;
}

Vector spmv(const SparseOperator& a, const Vector& x) {
  if (x.size() != a.dim()) throw DimensionError("spmv: dimension mismatch");
  Vector y(a.dim());
  a.apply(x, y);
  return y;
}

void DiagonalOperator::apply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != d_.size() || y.size() != d_.size()) throw DimensionError("diag apply: dimension mismatch");
  for (std::size_t i = 0; i < d_.size(); ++i) y[i] = d_[i] * x[i];
}

DenseOperator::DenseOperator(DenseMatrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols()) throw DimensionError("DenseOperator: matrix not square");
}

void DenseOperator::apply(std::span<const double> x, std::span<double> y) const {
  std::size_t n = m_.rows();
  if (x.size() != n || y.size() != n) throw DimensionError("dense apply: dimension mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += m_(i, j) * x[j];
    y[i] = s;
  }
}

void AffineOperator::apply(std::span<const double> x, std::span<double> y) const {
  base_.apply(x, y);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = shift_ * x[i] + scale_ * y[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) {
  // scaled to avoid overflow on large entries
  double m = max_abs(a);
  if (m == 0.0 || !std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : a) s += (v / m) * (v / m);
  return m * std::sqrt(s);
}

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

void scale(double a, std::span<double> x) {
  for (double& v : x) v *= a;
}

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

// Implicit-shift QL on a symmetric tridiagonal matrix. Only the last row of the
// accumulated rotation matrix is kept, which is all residual estimates need.
TridiagEigResult tridiag_eigs(const TridiagonalSym& t, int max_sweeps) {
  const std::size_t m = t.alpha.size();
  if (m == 0) throw DimensionError("tridiag_eigs: empty matrix");
  if (t.beta.size() + 1 != m) throw DimensionError("tridiag_eigs: beta must have length m-1");
  Vector d = t.alpha;
  Vector e(m, 0.0);
  for (std::size_t i = 0; i + 1 < m; ++i) e[i] = t.beta[i];
  Vector z(m, 0.0);
  z[m - 1] = 1.0;
  const double eps = std::numeric_limits<double>::epsilon();

  for (std::size_t l = 0; l < m; ++l) {
    int iter = 0;
    std::size_t mm;
    do {
      for (mm = l; mm + 1 < m; ++mm) {
        double dd = std::abs(d[mm]) + std::abs(d[mm + 1]);
        if (std::abs(e[mm]) <= eps * dd) break;
      }
      if (mm != l) {
        if (iter++ == max_sweeps) throw NumericalError("tridiag_eigs: QL iteration did not converge");
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[mm] - d[l] + e[l] / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        bool underflow = false;
        for (std::size_t ii = mm; ii-- > l;) {
          double f = s * e[ii];
          double b = c * e[ii];
          r = std::hypot(f, g);
          e[ii + 1] = r;
          if (r == 0.0) {
            d[ii + 1] -= p;
            e[mm] = 0.0;
            underflow = true;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[ii + 1] - p;
          r = (d[ii] - g) * s + 2.0 * c * b;
          p = s * r;
          d[ii + 1] = g + p;
          g = c * r - b;
          double zf = z[ii + 1];
          z[ii + 1] = s * z[ii] + c * zf;
          z[ii] = c * z[ii] - s * zf;
        }
        if (underflow) continue;
        d[l] -= p;
        e[l] = g;
        e[mm] = 0.0;
      }
    } while (mm != l);
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] > d[b]; });
  TridiagEigResult out;
  out.values.resize(m);
  out.last_components.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    out.values[i] = d[order[i]];
    out.last_components[i] = z[order[i]];
  }
  return out;
}

// Cyclic Jacobi rotations.
SymEigResult dense_sym_eig(const DenseMatrix& s, std::size_t max_dim) {
  const std::size_t n = s.rows();
  if (s.cols() != n) throw DimensionError("dense_sym_eig: matrix not square");
  if (n > max_dim) throw DimensionError("dense_sym_eig: dimension exceeds configured bound");
  double fro = frobenius_norm(s);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(s(i, j) - s(j, i)) > 1e-12 * std::max(fro, 1e-300))
        throw NumericalError("dense_sym_eig: matrix is not symmetric");

  DenseMatrix a = s;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (s(i, j) + s(j, i));
  DenseMatrix v = DenseMatrix::identity(n);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(off) <= 1e-15 * std::max(fro, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a(p, q);
        if (apq == 0.0) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymEigResult out;
  out.values.resize(n);
  out.vectors = DenseMatrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

Vector dense_sym_eigenvalues(const DenseMatrix& s) {
  const std::size_t n = s.rows();
  if (s.cols() != n) throw DimensionError("dense_sym_eigenvalues: matrix not square");
  if (n == 0) return {};
  DenseMatrix a = s;
  Vector u(n);
  for (std::size_t k = 0; k + 2 < n; ++k) {
    // Householder vector zeroing a(k+2.., k)
    double alpha = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) alpha += a(i, k) * a(i, k);
    alpha = std::sqrt(alpha);
    if (alpha == 0.0) continue;
    if (a(k + 1, k) > 0) alpha = -alpha;
    std::fill(u.begin(), u.end(), 0.0);
    u[k + 1] = a(k + 1, k) - alpha;
    for (std::size_t i = k + 2; i < n; ++i) u[i] = a(i, k);
    double unorm2 = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) unorm2 += u[i] * u[i];
    if (unorm2 == 0.0) continue;
    // A <- H A H with H = I - 2uu^T/|u|^2, via p = A u, K = u^T p / |u|^2
    Vector p(n, 0.0);
    for (std::size_t i = k; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) acc += a(i, j) * u[j];
      p[i] = 2.0 * acc / unorm2;
    }
    double kk = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) kk += u[i] * p[i];
    kk /= unorm2;
    for (std::size_t i = k; i < n; ++i) p[i] -= kk * u[i];
    for (std::size_t i = k; i < n; ++i)
      for (std::size_t j = k; j < n; ++j) a(i, j) -= u[i] * p[j] + p[i] * u[j];
  }
  TridiagonalSym t;
  t.alpha.resize(n);
  t.beta.resize(n - 1);
  for (std::size_t i = 0; i < n; ++i) t.alpha[i] = a(i, i);
  for (std::size_t i = 0; i + 1 < n; ++i) t.beta[i] = 0.5 * (a(i + 1, i) + a(i, i + 1));
  return tridiag_eigs(t, 200).values;
}

std::vector<std::size_t> orthonormalize(std::vector<Vector>& cols, double tol) {
  std::vector<std::size_t> collapsed;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    double before = norm2(cols[j]);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < j; ++i) {
        if (std::find(collapsed.begin(), collapsed.end(), i) != collapsed.end()) continue;
        double h = dot(cols[i], cols[j]);
        axpy(-h, cols[i], cols[j]);
      }
    }
    double after = norm2(cols[j]);
    if (before == 0.0 || after <= tol * before) {
      std::fill(cols[j].begin(), cols[j].end(), 0.0);
      collapsed.push_back(j);
      continue;
    }
    scale(1.0 / after, cols[j]);
  }
  return collapsed;
}

}  // namespace polyrec
