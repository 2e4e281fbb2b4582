#include "zstal/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "zstal/error.hpp"

namespace zstal {

namespace {

std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kUnsupportedDtype: return "unsupported-dtype";
    case ErrorCode::kMissingFile: return "missing-file";
    case ErrorCode::kMalformedManifest: return "malformed-manifest";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kDanglingReference: return "dangling-reference";
    case ErrorCode::kInvariant: return "invariant";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kNumerical: return "numerical";
  }
  return "unknown";
}

Tensor::Tensor(std::vector<std::size_t> dims)
    : dims_(std::move(dims)), values_(product(dims_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
  if (product(dims_) != values_.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "tensor dims imply " + std::to_string(product(dims_)) +
                    " values, got " + std::to_string(values_.size()));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  Tensor t({rows, cols});
  std::fill(t.values_.begin(), t.values_.end(), fill);
  return t;
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const noexcept {
  if (dims_.empty()) return 0;
  return dims_.size() == 1 ? 1 : dims_[0];
}

std::size_t Tensor::cols() const noexcept {
  if (dims_.empty()) return 0;
  return dims_.size() == 1 ? dims_[0] : values_.size() / std::max<std::size_t>(dims_[0], 1);
}

std::span<double> Tensor::row(std::size_t r) {
  return {values_.data() + r * cols(), cols()};
}

std::span<const double> Tensor::row(std::size_t r) const {
  return {values_.data() + r * cols(), cols()};
}

bool Tensor::all_finite() const noexcept {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor stack_rows(std::span<const Tensor* const> rows) {
  if (rows.empty()) return Tensor::matrix(0, 0);
  const std::size_t d = rows.front()->size();
  Tensor out = Tensor::matrix(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->size() != d) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "stack_rows: row " + std::to_string(i) + " has width " +
                      std::to_string(rows[i]->size()) + ", expected " +
                      std::to_string(d));
    }
    std::copy(rows[i]->values().begin(), rows[i]->values().end(),
              out.row(i).begin());
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "matmul: inner dimensions differ");
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out.at(i, j) += av * b.at(p, j);
    }
  }
  return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "matmul_bt: widths differ");
  }
  const std::size_t n = a.rows(), m = b.rows();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "matmul_at: heights differ");
  }
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      const double av = a.at(p, i);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out.at(i, j) += av * b.at(p, j);
    }
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace zstal
