#pragma once

#include "relprop/tensor.hpp"

namespace relprop {

/// Signed 2D relevance projection, (H,W).
struct Heatmap2D {
    Tensor values;

    std::size_t height() const { return values.extent(0); }
    std::size_t width() const { return values.extent(1); }
    double at(std::size_t y, std::size_t x) const { return values[y * width() + x]; }
};

} // namespace relprop
