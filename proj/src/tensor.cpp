#include "relprop/tensor.hpp"

#include <cmath>
#include <sstream>

namespace relprop {

std::size_t shape_volume(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream out;
    out << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ",";
        out << shape[i];
    }
    out << ")";
    return out.str();
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
        if (e == 0) fail(Errc::shape_mismatch, "tensor extent must be positive, got shape " + shape_to_string(shape_));
    }
    data_.assign(shape_volume(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t e : shape_) {
        if (e == 0) fail(Errc::shape_mismatch, "tensor extent must be positive, got shape " + shape_to_string(shape_));
    }
    if (data_.size() != shape_volume(shape_)) {
        fail(Errc::shape_mismatch, "data length " + std::to_string(data_.size()) + " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = value;
    return t;
}

double Tensor::sum() const {
    double acc = 0.0;
    for (double v : data_) acc += v;
    return acc;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

void Tensor::require_finite(const char* what) const {
    for (double v : data_) {
        if (!std::isfinite(v)) fail(Errc::non_finite_value, std::string(what) + " contains a non-finite value");
    }
}

} // namespace relprop
