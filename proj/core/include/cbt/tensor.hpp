#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cbt {

using Shape = std::vector<int>;

std::string shape_to_string(const Shape& s);
std::int64_t shape_product(const Shape& s);

/// Dense row-major tensor of doubles. Rank 0 (empty shape) is a scalar.
///
/// Values are stored and accumulated in 64-bit floating point throughout;
/// the finite-difference tolerances used by the test suites depend on it.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Indexed access for the common ranks.
    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
    double& at(int c, int h, int w) {
        return data_[(static_cast<std::size_t>(c) * dim(1) + h) * dim(2) + w];
    }
    double at(int c, int h, int w) const {
        return data_[(static_cast<std::size_t>(c) * dim(1) + h) * dim(2) + w];
    }
    double& at(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    double at(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }

    double scalar_value() const;

    bool all_finite() const;
    /// Throws NumericError naming `what` if any entry is NaN or Inf.
    void check_finite(const char* what) const;

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Integer class-id grid, the label carrier for segmentation masks.
struct LabelMask {
    int height = 0;
    int width = 0;
    std::vector<std::int32_t> ids;

    LabelMask() = default;
    LabelMask(int h, int w) : height(h), width(w), ids(static_cast<std::size_t>(h) * w, 0) {}

    std::int32_t& at(int y, int x) { return ids[static_cast<std::size_t>(y) * width + x]; }
    std::int32_t at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }
    std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }

    bool operator==(const LabelMask& o) const {
        return height == o.height && width == o.width && ids == o.ids;
    }
};

}  // namespace cbt
