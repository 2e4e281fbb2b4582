#pragma once

#include <functional>
#include <span>
#include <vector>

#include "zstal/tensor.hpp"

namespace zstal {

// Row-wise unit normalization. Throws kNumerical on a zero-norm row.
Tensor l2_normalize_rows(const Tensor& x);

// Reverse pass of l2_normalize_rows: given x, its normalized rows y and dL/dy,
// returns dL/dx = (dy - y (y . dy)) / ||x||.
Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& y,
                                  const Tensor& dy);

// n x m matrix of cosines between the rows of a (n x d) and b (m x d).
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

double logistic(double z);

// Alignment probability between two unit embeddings: logistic(scale*cos + bias).
double pi_align(std::span<const double> e_x, std::span<const double> e_t,
                double logit_scale, double logit_bias);

// Central-difference gradient of f at params; perturbs each coordinate in
// place and restores it. Test and self-check use only.
std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::vector<double> params, double h = 1e-6);

}  // namespace zstal
