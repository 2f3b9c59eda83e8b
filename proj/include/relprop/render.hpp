#pragma once

#include <filesystem>

#include "relprop/heatmap.hpp"
#include "relprop/image_io.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

/// Diverging red/white/blue mapping of signed relevance to an RGB image in
/// [0,1], shape (3,H,W). Values are scaled by the max absolute value (or by
/// the given percentile of |values| when clip_percentile < 100, clamping the
/// tail); an all-zero heatmap renders white. colorize(-h) is colorize(h) with
/// red and blue swapped, bitwise.
Tensor colorize(const Heatmap2D& heatmap, double clip_percentile = 100.0);

/// Quantizes a (3,H,W) or (1,H,W) tensor in [0,1] to 8-bit and writes a PNG.
/// Out-of-range values are clamped with a warning on stderr.
void write_image(const Tensor& rgb, const std::filesystem::path& path);

ImageU8 quantize_image(const Tensor& rgb);

/// Side-by-side composition (equal heights) for qualitative review.
Tensor montage(const Tensor& left, const Tensor& right);

} // namespace relprop
