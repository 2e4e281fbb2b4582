#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace zstal {

// Dense row-major tensor of 64-bit reals. Most of the engine only uses rank 1
// (vectors) and rank 2 (row-per-sample matrices).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);
  Tensor(std::vector<std::size_t> dims, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor vector(std::vector<double> values);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  // Rank-2 views. A rank-1 tensor is treated as a single row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> values_;
};

// Stacks rank-1 tensors (or rank-2 single rows) into an n x d matrix.
Tensor stack_rows(std::span<const Tensor* const> rows);

// A (n x k) * B (k x m).
Tensor matmul(const Tensor& a, const Tensor& b);
// A (n x k) * B^T where B is (m x k).
Tensor matmul_bt(const Tensor& a, const Tensor& b);
// A^T * B where A is (k x n) and B is (k x m).
Tensor matmul_at(const Tensor& a, const Tensor& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace zstal
