#include "cbt/numerics.hpp"

#include <cmath>

#include "cbt/error.hpp"

namespace cbt {

Tensor mean_center(const Tensor& z) {
    if (z.rank() != 2) throw ConfigError("mean_center: expected rank-2 tensor, got " + shape_to_string(z.shape()));
    z.check_finite("mean_center input");
    const int b = z.dim(0), d = z.dim(1);
    Tensor out(z.shape());
    for (int j = 0; j < d; ++j) {
        double m = 0.0;
        for (int i = 0; i < b; ++i) m += z.at(i, j);
        m /= b;
        for (int i = 0; i < b; ++i) out.at(i, j) = z.at(i, j) - m;
    }
    return out;
}

Tensor standardize_columns(const Tensor& z, double eps) {
    if (z.rank() != 2) {
        throw ConfigError("standardize_columns: expected rank-2 tensor, got " + shape_to_string(z.shape()));
    }
    if (z.dim(0) < 2) {
        throw ConfigError("standardize_columns: needs at least 2 rows, got " + std::to_string(z.dim(0)));
    }
    if (eps <= 0.0) throw ConfigError("standardize_columns: eps must be positive");
    z.check_finite("standardize_columns input");
    const int b = z.dim(0), d = z.dim(1);
    Tensor out(z.shape());
    for (int j = 0; j < d; ++j) {
        double m = 0.0;
        for (int i = 0; i < b; ++i) m += z.at(i, j);
        m /= b;
        double var = 0.0;
        for (int i = 0; i < b; ++i) {
            const double c = z.at(i, j) - m;
            var += c * c;
        }
        const double denom = std::sqrt(var / b) + eps;
        for (int i = 0; i < b; ++i) out.at(i, j) = (z.at(i, j) - m) / denom;
    }
    return out;
}

ParameterVector finite_diff_grad(const ScalarLossFn& fn, const ParameterVector& params, double h) {
    if (h <= 0.0) throw ConfigError("finite_diff_grad: h must be positive");
    ParameterVector grad = params.zeros_like();
    ParameterVector work = params;
    for (std::int64_t i = 0; i < params.total_len(); ++i) {
        const double orig = work.flat_get(i);
        work.flat_set(i, orig + h);
        const double up = eval_loss(fn, work);
        work.flat_set(i, orig - h);
        const double down = eval_loss(fn, work);
        work.flat_set(i, orig);
        grad.flat_set(i, (up - down) / (2.0 * h));
    }
    return grad;
}

double max_relative_error(const ParameterVector& got, const ParameterVector& want, double floor) {
    got.check_same_layout(want, "max_relative_error");
    double worst = 0.0;
    for (std::int64_t i = 0; i < got.total_len(); ++i) {
        const double g = got.flat_get(i);
        const double w = want.flat_get(i);
        const double err = std::abs(g - w) / std::max(std::abs(w), floor);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace cbt
