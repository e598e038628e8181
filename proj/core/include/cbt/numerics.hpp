#pragma once

#include "cbt/parameters.hpp"
#include "cbt/tape.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

/// Subtracts the per-column mean of a [B.D] matrix. B >= 1.
Tensor mean_center(const Tensor& z);

/// Centers each column and divides by (population std + eps). B >= 2.
Tensor standardize_columns(const Tensor& z, double eps);

/// Central-difference gradient estimate, one coordinate at a time:
/// (f(p + h e_i) - f(p - h e_i)) / 2h. Test oracle for value_and_grad.
ParameterVector finite_diff_grad(const ScalarLossFn& fn, const ParameterVector& params, double h);

/// Largest relative error between an analytic and a reference gradient,
/// with |reference| and an absolute floor in the denominator.
double max_relative_error(const ParameterVector& got, const ParameterVector& want, double floor = 1e-6);

}  // namespace cbt
