#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace epistemic {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  Matrix transposed() const;
  bool all_finite() const;
  std::string shape() const;

  /// Appends a row; the first appended row fixes the column count of an empty matrix.
  void append_row(std::span<const double> values);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Raised when an iterative eigen-solver exhausts its iteration budget.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_estimate)
      : std::runtime_error(what), last_estimate_(last_estimate) {}
  double last_estimate() const noexcept { return last_estimate_; }

 private:
  double last_estimate_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// m * m^T, computed so that the result is exactly symmetric.
Matrix outer_gram(const Matrix& m);

std::vector<double> vec_mat(std::span<const double> x, const Matrix& m);
std::vector<double> mat_vec(const Matrix& m, std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

inline constexpr std::uint64_t kDefaultEigenSeed = 0x5eed'e16e'0000'0001ULL;

/// Dominant eigenvalue of a symmetric PSD matrix by power iteration from a
/// seeded start vector. Stops when the Rayleigh quotient changes by at most
/// 1e-12 * max(1, |lambda|) between iterations, or throws ConvergenceError
/// after 10 000 iterations.
double largest_eigenvalue(const Matrix& m, std::uint64_t seed = kDefaultEigenSeed);

struct EigenDecomposition {
  std::vector<double> values;  ///< descending, all strictly above the zero cutoff
  Matrix vectors;              ///< n x values.size(); column j pairs with values[j]
};

/// Top eigenpairs of a symmetric PSD matrix (cyclic Jacobi rotations).
/// Eigenvalues at or below 1e-10 * lambda_max count as zero and are dropped,
/// so the result may hold fewer than `rank` pairs.
EigenDecomposition symmetric_eigendecomposition(const Matrix& m, std::size_t rank);

/// Quadratic-form distance matrix D (square, symmetric, PSD).
class WeightedMetric {
 public:
  /// Validates symmetry and positive semi-definiteness (100 seeded probes).
  explicit WeightedMetric(Matrix d);

  const Matrix& matrix() const noexcept { return d_; }
  std::size_t dim() const noexcept { return d_.rows(); }

 private:
  Matrix d_;
};

double euclidean_distance(std::span<const double> a, std::span<const double> b);

/// sqrt((a-b)^T D (a-b)); quadratic forms in [-1e-9, 0) are clamped to zero.
double weighted_distance(std::span<const double> a, std::span<const double> b,
                         const WeightedMetric& metric);

}  // namespace epistemic
