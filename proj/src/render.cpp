#include "relprop/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "relprop/errors.hpp"

namespace relprop {

Tensor colorize(const Heatmap2D& heatmap, double clip_percentile) {
    if (heatmap.values.rank() != 2 || heatmap.values.size() == 0) {
        fail(Errc::shape_mismatch, "colorize expects a non-empty (H,W) heatmap");
    }
    if (!(clip_percentile > 0.0) || clip_percentile > 100.0) {
        fail(Errc::invalid_config, "clip percentile must be in (0, 100]");
    }
    heatmap.values.require_finite("heatmap");
    const std::size_t H = heatmap.height(), W = heatmap.width();
    const std::size_t n = H * W;

    double m = 0.0;
    if (clip_percentile >= 100.0) {
        m = heatmap.values.max_abs();
    } else {
        // nearest-rank percentile of |values|
        std::vector<double> mags(n);
        for (std::size_t i = 0; i < n; ++i) mags[i] = std::fabs(heatmap.values[i]);
        std::sort(mags.begin(), mags.end());
        const std::size_t rank = static_cast<std::size_t>(std::ceil(clip_percentile / 100.0 * static_cast<double>(n)));
        m = mags[std::clamp<std::size_t>(rank, 1, n) - 1];
    }

    Tensor rgb({3, H, W});
    if (m == 0.0) {
        std::fill(rgb.data(), rgb.data() + rgb.size(), 1.0);
        return rgb;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double v = heatmap.values[i];
        const double t = std::min(std::fabs(v) / m, 1.0);
        // +m -> (1,0,0), 0 -> (1,1,1), -m -> (0,0,1); linear in between
        rgb[i] = v >= 0.0 ? 1.0 : 1.0 - t;            // R
        rgb[n + i] = 1.0 - t;                          // G
        rgb[2 * n + i] = v >= 0.0 ? 1.0 - t : 1.0;     // B
    }
    return rgb;
}

ImageU8 quantize_image(const Tensor& rgb) {
    if (rgb.rank() != 3 || (rgb.extent(0) != 3 && rgb.extent(0) != 1)) {
        fail(Errc::shape_mismatch, "image tensor must be (3,H,W) or (1,H,W), got " + shape_to_string(rgb.shape()));
    }
    const std::size_t C = rgb.extent(0), H = rgb.extent(1), W = rgb.extent(2);
    ImageU8 out;
    out.height = H;
    out.width = W;
    out.channels = C;
    out.pixels.resize(C * H * W);
    bool clamped = false;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            for (std::size_t c = 0; c < C; ++c) {
                double v = rgb.at3(c, y, x);
                if (v < 0.0 || v > 1.0) {
                    clamped = true;
                    v = std::clamp(v, 0.0, 1.0);
                }
                out.pixels[(y * W + x) * C + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    if (clamped) {
        std::fprintf(stderr, "warning: image values outside [0,1] were clamped before quantization\n");
    }
    return out;
}

void write_image(const Tensor& rgb, const std::filesystem::path& path) { write_png(path, quantize_image(rgb)); }

Tensor montage(const Tensor& left, const Tensor& right) {
    if (left.rank() != 3 || right.rank() != 3 || left.extent(0) != right.extent(0) || left.extent(1) != right.extent(1)) {
        fail(Errc::dimension_mismatch, "montage needs equal channel count and height: " + shape_to_string(left.shape()) +
                                           " vs " + shape_to_string(right.shape()));
    }
    const std::size_t C = left.extent(0), H = left.extent(1);
    const std::size_t WL = left.extent(2), WR = right.extent(2);
    Tensor out({C, H, WL + WR});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            std::copy(&left.at3(c, y, 0), &left.at3(c, y, 0) + WL, &out.at3(c, y, 0));
            std::copy(&right.at3(c, y, 0), &right.at3(c, y, 0) + WR, &out.at3(c, y, WL));
        }
    }
    return out;
}

} // namespace relprop
