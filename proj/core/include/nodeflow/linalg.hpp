#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nodeflow {

using Vector = std::vector<double>;

// Dense real matrix, row-major.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diag(std::span<const double> d);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool square() const noexcept { return rows_ == cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix transposed() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s) noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);
Matrix operator*(const Matrix& a, const Matrix& b);
Vector operator*(const Matrix& a, std::span<const double> x);

// y = A^T x
Vector transpose_times(const Matrix& a, std::span<const double> x);

// D*A where D = diag(d)
Matrix scale_rows(std::span<const double> d, const Matrix& a);

double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> x);
double frobenius_norm(const Matrix& a);

Vector add(std::span<const double> x, std::span<const double> y);
Vector subtract(std::span<const double> x, std::span<const double> y);
Vector scaled(double s, std::span<const double> x);

// Tolerances used throughout the spectral machinery.
namespace tol {
// Jacobi stops once every off-diagonal entry is below this times ||S||_F.
inline constexpr double jacobi_offdiag = 1e-14;
// Inputs to eig_sym must be symmetric to this (relative to ||S||_F, absolute for tiny S).
inline constexpr double symmetry = 1e-12;
inline constexpr int jacobi_max_sweeps = 100;
}  // namespace tol

struct EigenResult {
  Vector values;   // ascending
  Matrix vectors;  // column i pairs with values[i]
};

// Symmetric part (A + A^T)/2, exactly symmetric.
Matrix sym(const Matrix& a);

// Cyclic Jacobi eigensolve of a symmetric matrix.
EigenResult eig_sym(const Matrix& s);

// Largest eigenvalue (and its unit eigenvector) of a symmetric matrix.
std::pair<double, Vector> lambda_max(const Matrix& s);

// Logarithmic 2-norm: lambda_max(sym(A)).
double mu2(const Matrix& a);

// (sigma_min, sigma_max) from the extreme eigenvalues of A^T A.
//
// Squaring the matrix loses half the significant digits of the smallest
// singular value; acceptable while condition numbers stay below ~1e6.
std::pair<double, double> sigma_extremes(const Matrix& a);

double spectral_norm(const Matrix& a);

bool all_finite(std::span<const double> x);

// Text format: "rows cols" then one line per row, 17 significant digits.
void write_matrix(std::ostream& os, const Matrix& a);
Matrix read_matrix(std::istream& is);
Matrix load_matrix(const std::string& path);
void save_matrix(const std::string& path, const Matrix& a);

std::string format_double(double v);

}  // namespace nodeflow
