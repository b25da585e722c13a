#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace polyrec {

using Vector = std::vector<double>;

class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// row-major dense matrix
class DenseMatrix {
public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(const Vector& d);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Vector column(std::size_t j) const;
  void set_column(std::size_t j, const Vector& v);

private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);
double frobenius_norm(const DenseMatrix& a);

// Abstract symmetric operator accessed only through its action.
class LinearOperator {
public:
  virtual ~LinearOperator() = default;
  virtual std::size_t dim() const = 0;
  virtual void apply(std::span<const double> x, std::span<double> y) const = 0;

  Vector operator*(const Vector& x) const;
};

class SparseOperator : public LinearOperator {
public:
  SparseOperator() = default;
  SparseOperator(std::size_t n, std::vector<std::size_t> row_ptr, std::vector<std::size_t> col_idx,
                 std::vector<double> values, bool symmetric);

  // (row, col, value) triplets; duplicates are summed
  static SparseOperator from_triplets(std::size_t n, const std::vector<std::size_t>& rows,
                                      const std::vector<std::size_t>& cols, const Vector& vals,
                                      bool symmetric);
  static SparseOperator from_diagonal(const Vector& d);
  static SparseOperator from_dense(const DenseMatrix& m, bool symmetric);

  std::size_t dim() const override { return n_; }
  void apply(std::span<const double> x, std::span<double> y) const override;

  std::size_t nnz() const { return values_.size(); }
  bool symmetric() const { return symmetric_; }
  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }

  DenseMatrix to_dense() const;

private:
  void validate() const;

  std::size_t n_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
  bool symmetric_ = false;
};

Vector spmv(const SparseOperator& a, const Vector& x);

class DiagonalOperator : public LinearOperator {
public:
  explicit DiagonalOperator(Vector d) : d_(std::move(d)) {}
  std::size_t dim() const override { return d_.size(); }
  void apply(std::span<const double> x, std::span<double> y) const override;
  const Vector& diagonal() const { return d_; }

private:
  Vector d_;
};

class DenseOperator : public LinearOperator {
public:
  explicit DenseOperator(DenseMatrix m);
  std::size_t dim() const override { return m_.rows(); }
  void apply(std::span<const double> x, std::span<double> y) const override;
  const DenseMatrix& matrix() const { return m_; }

private:
  DenseMatrix m_;
};

// y = shift*x + scale*(X x)
class AffineOperator : public LinearOperator {
public:
  AffineOperator(const LinearOperator& base, double shift, double scale)
      : base_(base), shift_(shift), scale_(scale) {}
  std::size_t dim() const override { return base_.dim(); }
  void apply(std::span<const double> x, std::span<double> y) const override;

private:
  const LinearOperator& base_;
  double shift_, scale_;
};

class FunctionOperator : public LinearOperator {
public:
  using Fn = std::function<void(std::span<const double>, std::span<double>)>;
  FunctionOperator(std::size_t n, Fn fn) : n_(n), fn_(std::move(fn)) {}
  std::size_t dim() const override { return n_; }
  void apply(std::span<const double> x, std::span<double> y) const override { fn_(x, y); }

private:
  std::size_t n_;
  Fn fn_;
};

// Instrumented wrapper that counts applications.
class CountingOperator : public LinearOperator {
public:
  explicit CountingOperator(const LinearOperator& base) : base_(base) {}
  std::size_t dim() const override { return base_.dim(); }
  void apply(std::span<const double> x, std::span<double> y) const override {
    ++count_;
    base_.apply(x, y);
  }
  std::size_t count() const { return count_.load(); }
  void reset() { count_ = 0; }

private:
  const LinearOperator& base_;
  mutable std::atomic<std::size_t> count_{0};
};

// vector helpers
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double max_abs(std::span<const double> a);
void axpy(double a, std::span<const double> x, std::span<double> y);
void scale(double a, std::span<double> x);
bool all_finite(std::span<const double> a);

struct TridiagonalSym {
  Vector alpha;
  Vector beta;  // length m-1
};

struct TridiagEigResult {
  Vector values;           // descending
  Vector last_components;  // last entry of each unit eigenvector
};

TridiagEigResult tridiag_eigs(const TridiagonalSym& t, int max_sweeps = 60);

struct SymEigResult {
  Vector values;        // descending
  DenseMatrix vectors;  // columns are eigenvectors
};

SymEigResult dense_sym_eig(const DenseMatrix& s, std::size_t max_dim = 512);

// Eigenvalues only, Householder tridiagonalization followed by tridiag_eigs.
// Used for reference spectra of larger matrices.
Vector dense_sym_eigenvalues(const DenseMatrix& s);

// Orthonormalize columns in place (modified Gram-Schmidt, two passes).
// Returns indices of columns that collapsed.
std::vector<std::size_t> orthonormalize(std::vector<Vector>& cols, double tol = 1e-12);

}  // namespace polyrec
