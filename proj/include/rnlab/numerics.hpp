#pragma once

#include <functional>
#include <string>
#include <utility>

#include "rnlab/tensor.hpp"

namespace rnlab {

/// Per-channel mean and biased variance over every axis except axis 1.
std::pair<Tensor, Tensor> channel_moments(const Tensor& x);

/// Row-wise softmax of a matrix, stabilized by subtracting each row's max.
Tensor softmax_rows(const Tensor& m);

Tensor matvec(const Tensor& m, const Tensor& v);

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-6);

/// Worst coordinate of an analytic-vs-numeric gradient comparison.
struct GradDiscrepancy {
    double error = 0.0;  // |a - n| / max(|a|, |n|, floor)
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Relative error with a denominator floor, so that `error <= tol` reads
/// |a - n| <= max(tol * max(|a|, |n|), tol * floor).
inline constexpr double kRelErrorFloor = 1e-3;

GradDiscrepancy compare_gradients(const Tensor& analytic, const Tensor& numeric, double floor = kRelErrorFloor);

}  // namespace rnlab
