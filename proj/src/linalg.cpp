#include "tpru/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tpru {

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void shape_error(std::string_view op, int ar, int ac, int br, int bc) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              std::to_string(ar) + "x" + std::to_string(ac) + " and " +
                              std::to_string(br) + "x" + std::to_string(bc));
}

namespace {

// Shared inner kernel: row i of C accumulated in ascending-k order, which
// pins the floating-point result independent of how rows are scheduled.
inline void matmul_row(const Matrix &a, const Matrix &b, Matrix &c, int i) {
  double *crow = c.row(i);
  for (int k = 0; k < a.cols; ++k) {
    const double aik = a(i, k);
    const double *brow = b.row(k);
    for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
  }
}

} // namespace

Matrix matmul_serial(const Matrix &a, const Matrix &b) {
  if (a.cols != b.rows) shape_error("matmul", a.rows, a.cols, b.rows, b.cols);
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) matmul_row(a, b, c, i);
  return c;
}

Matrix matmul(const Matrix &a, const Matrix &b) {
  if (a.cols != b.rows) shape_error("matmul", a.rows, a.cols, b.rows, b.cols);
  Matrix c(a.rows, b.cols);
  const long long work = 1LL * a.rows * a.cols * b.cols;
#ifdef _OPENMP
  if (work >= 1LL << 16) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows; ++i) matmul_row(a, b, c, i);
    return c;
  }
#endif
  (void)work;
  for (int i = 0; i < a.rows; ++i) matmul_row(a, b, c, i);
  return c;
}

Vector matvec(const Matrix &m, const Vector &v) {
  if (m.cols != v.len()) shape_error("matvec", m.rows, m.cols, v.len(), 1);
  Vector out(m.rows);
  for (int i = 0; i < m.rows; ++i) {
    const double *row = m.row(i);
    double acc = 0.0;
    for (int j = 0; j < m.cols; ++j) acc += row[j] * v[j];
    out[i] = acc;
  }
  return out;
}

Vector matvec_transposed(const Matrix &m, const Vector &v) {
  if (m.rows != v.len()) shape_error("matvec_transposed", m.cols, m.rows, v.len(), 1);
  Vector out(m.cols);
  for (int i = 0; i < m.rows; ++i) {
    const double *row = m.row(i);
    const double vi = v[i];
    for (int j = 0; j < m.cols; ++j) out[j] += vi * row[j];
  }
  return out;
}

void add_outer(Matrix &m, const Vector &u, const Vector &v, double scale) {
  if (m.rows != u.len() || m.cols != v.len())
    shape_error("add_outer", m.rows, m.cols, u.len(), v.len());
  for (int i = 0; i < m.rows; ++i) {
    const double ui = scale * u[i];
    double *row = m.row(i);
    for (int j = 0; j < m.cols; ++j) row[j] += ui * v[j];
  }
}

void axpy(Vector &y, double a, const Vector &x) {
  if (y.len() != x.len()) shape_error("axpy", y.len(), 1, x.len(), 1);
  for (int i = 0; i < y.len(); ++i) y[i] += a * x[i];
}

double dot(const Vector &a, const Vector &b) {
  if (a.len() != b.len()) shape_error("dot", a.len(), 1, b.len(), 1);
  double acc = 0.0;
  for (int i = 0; i < a.len(); ++i) acc += a[i] * b[i];
  return acc;
}

// --- sampling --------------------------------------------------------------

std::uint64_t mix64(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + (index + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform01(std::uint64_t seed, std::uint64_t index) {
  return static_cast<double>(mix64(seed, index) >> 11) * 0x1.0p-53;
}

double normal01(std::uint64_t seed, std::uint64_t index) {
  // u1 in (0,1] so the log is finite.
  const double u1 = 1.0 - uniform01(seed, 2 * index);
  const double u2 = uniform01(seed, 2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL; // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(root, h);
}

Matrix sample_normal(std::uint64_t seed, int rows, int cols, double std_dev) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("sample_normal: dims must be >= 1");
  if (!(std_dev > 0.0)) throw std::invalid_argument("sample_normal: std must be > 0");
  Matrix m(rows, cols);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = std_dev * normal01(seed, i);
  return m;
}

Vector sample_normal_vector(std::uint64_t seed, int len, double std_dev) {
  Matrix m = sample_normal(seed, len, 1, std_dev);
  Vector v(len);
  v.data = std::move(m.data);
  return v;
}

// --- clipping ---------------------------------------------------------------

double global_norm(std::span<const std::span<double>> grads) {
  double sq = 0.0;
  for (const auto &block : grads)
    for (double x : block) sq += x * x;
  return std::sqrt(sq);
}

double clip_global_norm(std::span<std::span<double>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  const double norm = global_norm({grads.data(), grads.size()});
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto &block : grads)
      for (double &x : block) x *= scale;
  }
  return norm;
}

// --- eigensolver --------------------------------------------------------------

double symmetry_defect(const Matrix &a) {
  double worst = 0.0;
  for (int i = 0; i < a.rows; ++i)
    for (int j = i + 1; j < a.cols; ++j) worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
  return worst;
}

std::vector<double> symmetric_eigenvalues(const Matrix &input) {
  if (input.rows != input.cols)
    shape_error("symmetric_eigenvalues", input.rows, input.cols, input.rows, input.cols);
  const int n = input.rows;
  Matrix a = input;
  // Cyclic Jacobi rotations; converges quadratically for symmetric input.
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-26) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (int i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

} // namespace tpru
