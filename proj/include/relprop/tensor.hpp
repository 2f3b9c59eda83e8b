#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "relprop/errors.hpp"

namespace relprop {

/// Dense n-dimensional array of 64-bit floats, row-major (last axis fastest).
/// The shape is fixed at construction; element values may be filled in by the
/// producing operation, after which a tensor is treated as an immutable value
/// and may be shared freely across threads.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given extents. Extents must be positive.
    explicit Tensor(std::vector<std::size_t> shape);

    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    const double& operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    // (c,y,x) accessors for channels-first rank-3 tensors.
    const double& at3(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double& at3(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double sum() const;
    double max_abs() const;

    /// Throws Errc::non_finite_value naming `what` if any element is NaN/Inf.
    void require_finite(const char* what) const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Sign with the zero convention sign(0) = +1, so an epsilon shift
/// `z + eps * stabilized_sign(z)` can never produce a zero denominator.
inline double stabilized_sign(double v) { return v >= 0.0 ? 1.0 : -1.0; }

/// numerator / denominator with the convention that a zero denominator
/// contributes nothing: an aggregate of exactly zero carried no signal.
inline double safe_fraction(double numerator, double denominator) {
    return denominator == 0.0 ? 0.0 : numerator / denominator;
}

std::size_t shape_volume(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

} // namespace relprop
