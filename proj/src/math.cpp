#include "zstal/math.hpp"

#include <cmath>
#include <string>

#include "zstal/error.hpp"

namespace zstal {

Tensor l2_normalize_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = out.row(i);
    const double n = norm2(row);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw Error(ErrorCode::kNumerical,
                  "l2_normalize_rows: row " + std::to_string(i) +
                      " has zero or non-finite norm");
    }
    for (double& v : row) v /= n;
  }
  return out;
}

Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& y,
                                  const Tensor& dy) {
  Tensor dx = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double n = norm2(x.row(i));
    const double proj = dot(y.row(i), dy.row(i));
    for (std::size_t j = 0; j < x.cols(); ++j) {
      dx.at(i, j) = (dy.at(i, j) - y.at(i, j) * proj) / n;
    }
  }
  return dx;
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "cosine_matrix: widths differ");
  }
  return matmul_bt(l2_normalize_rows(a), l2_normalize_rows(b));
}

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double pi_align(std::span<const double> e_x, std::span<const double> e_t,
                double logit_scale, double logit_bias) {
  return logistic(logit_scale * dot(e_x, e_t) + logit_bias);
}

std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::vector<double> params, double h) {
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    const double hi = saved + h;
    const double lo = saved - h;
    params[i] = hi;
    const double up = f(params);
    params[i] = lo;
    const double down = f(params);
    params[i] = saved;
    // Divide by the representable step, not 2h.
    grad[i] = (up - down) / (hi - lo);
  }
  return grad;
}

}  // namespace zstal
