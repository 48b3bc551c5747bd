#include "epistemic/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace epistemic {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("matrix data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  for (const auto& r : rows) {
    std::vector<double> tmp(r);
    append_row(tmp);
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && data_.empty()) {
    cols_ = values.size();
  } else if (values.size() != cols_) {
    throw std::invalid_argument("row of length " + std::to_string(values.size()) +
                                " appended to matrix with " + std::to_string(cols_) + " columns");
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

Matrix outer_gram(const Matrix& m) {
  Matrix out(m.rows(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = i; j < m.rows(); ++j) {
      const double v = dot(m.row(i), m.row(j));
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

std::vector<double> vec_mat(std::span<const double> x, const Matrix& m) {
  if (x.size() != m.rows()) {
    throw std::invalid_argument("vec_mat: vector of length " + std::to_string(x.size()) +
                                " against " + m.shape());
  }
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t k = 0; k < m.rows(); ++k) {
    const double xk = x[k];
    if (xk == 0.0) continue;
    auto src = m.row(k);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += xk * src[j];
  }
  return out;
}

std::vector<double> mat_vec(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) {
    throw std::invalid_argument("mat_vec: " + m.shape() + " against vector of length " +
                                std::to_string(x.size()));
  }
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), x);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

namespace {

void require_square(const Matrix& m, const char* who) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument(std::string(who) + ": expected a square matrix, got " + m.shape());
  }
}

void require_symmetric(const Matrix& m, const char* who) {
  for (std::size_t a = 0; a < m.rows(); ++a) {
    for (std::size_t b = a + 1; b < m.cols(); ++b) {
      const double x = m(a, b);
      const double y = m(b, a);
      if (std::abs(x - y) > 1e-12 * std::max(1.0, std::abs(x))) {
        std::ostringstream os;
        os << who << ": matrix is not symmetric at (" << a << "," << b << "): " << x << " vs " << y;
        throw std::invalid_argument(os.str());
      }
    }
  }
}

std::vector<double> seeded_unit_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  const double nv = norm2(v);
  for (auto& x : v) x /= nv;
  return v;
}

}  // namespace

double largest_eigenvalue(const Matrix& m, std::uint64_t seed) {
  require_square(m, "largest_eigenvalue");
  const std::size_t n = m.rows();
  if (n == 0) return 0.0;

  constexpr int kMaxIterations = 10'000;
  constexpr double kTolerance = 1e-12;

  std::vector<double> v = seeded_unit_vector(n, seed);
  double lambda = 0.0;
  for (int it = 0; it < kMaxIterations; ++it) {
    std::vector<double> w = mat_vec(m, v);
    const double rq = dot(v, w);
    const double nw = norm2(w);
    if (nw == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
    if (it > 0 && std::abs(rq - lambda) <= kTolerance * std::max(1.0, std::abs(rq))) {
      return rq;
    }
    lambda = rq;
  }
  throw ConvergenceError("largest_eigenvalue: power iteration did not converge in 10000 iterations "
                         "(last estimate " + std::to_string(lambda) + ")",
                         lambda);
}

EigenDecomposition symmetric_eigendecomposition(const Matrix& m, std::size_t rank) {
  require_square(m, "symmetric_eigendecomposition");
  require_symmetric(m, "symmetric_eigendecomposition");
  const std::size_t n = m.rows();
  if (rank > n) {
    throw std::invalid_argument("symmetric_eigendecomposition: rank " + std::to_string(rank) +
                                " exceeds matrix side " + std::to_string(n));
  }

  Matrix a = m;
  Matrix v = Matrix::identity(n);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += a(p, q) * a(p, q);
    return std::sqrt(2.0 * s);
  };
  double scale = 0.0;
  for (double x : a.data()) scale += x * x;
  scale = std::sqrt(scale);

  constexpr int kMaxSweeps = 100;
  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    if (off_norm() <= 1e-15 * scale) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (sweep == kMaxSweeps) {
    throw ConvergenceError("symmetric_eigendecomposition: Jacobi sweeps did not converge",
                           off_norm());
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  EigenDecomposition out;
  const double lambda_max = n > 0 ? a(order[0], order[0]) : 0.0;
  const double cutoff = 1e-10 * lambda_max;
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < n && kept.size() < rank; ++j) {
    const double lambda = a(order[j], order[j]);
    if (lambda_max <= 0.0 || lambda <= cutoff) break;
    kept.push_back(order[j]);
    out.values.push_back(lambda);
  }
  out.vectors = Matrix(n, kept.size());
  for (std::size_t j = 0; j < kept.size(); ++j) {
    // Sign convention: largest-magnitude component positive.
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v(k, kept[j])) > std::abs(v(arg, kept[j]))) arg = k;
    const double sign = v(arg, kept[j]) < 0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = sign * v(k, kept[j]);
  }
  return out;
}

WeightedMetric::WeightedMetric(Matrix d) : d_(std::move(d)) {
  require_square(d_, "WeightedMetric");
  if (!d_.all_finite()) throw std::invalid_argument("WeightedMetric: non-finite entries");
  require_symmetric(d_, "WeightedMetric");
  std::mt19937_64 rng(kDefaultEigenSeed);
  std::normal_distribution<double> normal;
  std::vector<double> probe(d_.rows());
  for (int trial = 0; trial < 100; ++trial) {
    for (auto& x : probe) x = normal(rng);
    const double q = dot(probe, mat_vec(d_, probe));
    if (q < -1e-9 * dot(probe, probe)) {
      throw std::invalid_argument("WeightedMetric: matrix is not positive semi-definite");
    }
  }
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("euclidean_distance: dimensions " + std::to_string(a.size()) +
                                " and " + std::to_string(b.size()) + " differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double weighted_distance(std::span<const double> a, std::span<const double> b,
                         const WeightedMetric& metric) {
  const std::size_t n = metric.dim();
  if (a.size() != n || b.size() != n) {
    throw std::invalid_argument("weighted_distance: vectors of length " + std::to_string(a.size()) +
                                " and " + std::to_string(b.size()) + " against a " +
                                std::to_string(n) + "-dimensional metric");
  }
  const Matrix& d = metric.matrix();
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double di = a[i] - b[i];
    if (di == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += d(i, j) * (a[j] - b[j]);
    q += di * row;
  }
  if (q < 0.0) {
    if (q < -1e-9) throw std::domain_error("weighted_distance: negative quadratic form");
    q = 0.0;
  }
  return std::sqrt(q);
}

}  // namespace epistemic
