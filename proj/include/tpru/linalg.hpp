// Dense double-precision matrices/vectors, deterministic seeded sampling,
// gradient clipping, and a small symmetric eigensolver. Everything here is
// value-semantic and re-entrant.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tpru {

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data; // row-major

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double &operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
  const double *row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }
  double *row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
  size_t size() const { return data.size(); }
  std::span<double> span() { return {data.data(), data.size()}; }
  std::span<const double> span() const { return {data.data(), data.size()}; }
  bool same_shape(const Matrix &o) const { return rows == o.rows && cols == o.cols; }

  static Matrix identity(int n);
};

struct Vector {
  std::vector<double> data;

  Vector() = default;
  explicit Vector(int n) : data(static_cast<size_t>(n), 0.0) {}

  int len() const { return static_cast<int>(data.size()); }
  double &operator[](int i) { return data[static_cast<size_t>(i)]; }
  double operator[](int i) const { return data[static_cast<size_t>(i)]; }
  std::span<double> span() { return {data.data(), data.size()}; }
  std::span<const double> span() const { return {data.data(), data.size()}; }
};

[[noreturn]] void shape_error(std::string_view op, int ar, int ac, int br, int bc);

// C = A * B. Parallelized over rows of A for large products; per-element
// summation order is fixed (ascending k), so results are bit-identical to
// matmul_serial regardless of thread count.
Matrix matmul(const Matrix &a, const Matrix &b);
// Plain triple loop, kept as the reference the parallel kernel is tested
// and benchmarked against.
Matrix matmul_serial(const Matrix &a, const Matrix &b);

Vector matvec(const Matrix &m, const Vector &v);            // m * v
Vector matvec_transposed(const Matrix &m, const Vector &v); // m^T * v
void add_outer(Matrix &m, const Vector &u, const Vector &v, double scale = 1.0); // m += scale * u v^T
void axpy(Vector &y, double a, const Vector &x);            // y += a * x
double dot(const Vector &a, const Vector &b);

// --- deterministic counter-based sampling -------------------------------
//
// Stream value i of seed s is splitmix64(s + (i+1) * 0x9E3779B97F4A7C15):
// stateless, so any entry can be drawn independently and the same
// (seed, index) always yields the same bits on every platform.
std::uint64_t mix64(std::uint64_t seed, std::uint64_t index);
double uniform01(std::uint64_t seed, std::uint64_t index); // [0, 1)
// Standard normal via Box-Muller (cosine branch) over two counter draws.
double normal01(std::uint64_t seed, std::uint64_t index);
// Fans a root seed out into an independent named stream (FNV-1a over the tag).
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

// Entries i.i.d. N(0, std^2); bit-reproducible for fixed (seed, rows, cols, std).
Matrix sample_normal(std::uint64_t seed, int rows, int cols, double std_dev);
Vector sample_normal_vector(std::uint64_t seed, int len, double std_dev);

// --- gradient clipping ---------------------------------------------------

// Scales every block by max_norm/g when the global L2 norm g exceeds
// max_norm; returns the original norm.
double clip_global_norm(std::span<std::span<double>> grads, double max_norm);
double global_norm(std::span<const std::span<double>> grads);

// --- symmetric eigensolver ------------------------------------------------

// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
std::vector<double> symmetric_eigenvalues(const Matrix &a);
// max |A_ij - A_ji|
double symmetry_defect(const Matrix &a);

bool all_finite(std::span<const double> xs);

} // namespace tpru
