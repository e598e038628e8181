#include "cbt/tensor.hpp"

#include <cmath>
#include <sstream>

#include "cbt/error.hpp"

namespace cbt {

std::string shape_to_string(const Shape& s) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out << 'x';
        out << s[i];
    }
    out << ']';
    return out.str();
}

std::int64_t shape_product(const Shape& s) {
    std::int64_t p = 1;
    for (int d : s) {
        if (d <= 0) throw ConfigError("tensor dimension must be positive, got shape " + shape_to_string(s));
        p *= d;
    }
    return p;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = v;
    return t;
}

double Tensor::scalar_value() const {
    if (size() != 1) throw NumericError("expected scalar tensor, got shape " + shape_to_string(shape_));
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::check_finite(const char* what) const {
    if (!all_finite()) {
        throw NumericError(std::string("non-finite value in ") + what);
    }
}

}  // namespace cbt
