#include <cmath>
#include <vector>

#include "relprop/image_io.hpp"
#include "relprop/render.hpp"
#include "support/test_util.hpp"

using namespace relprop;
using testutil::Rng;
using testutil::TempDir;

namespace {

Heatmap2D heat(std::vector<std::size_t> shape, std::vector<double> values) {
    Heatmap2D h;
    h.values = Tensor(std::move(shape), std::move(values));
    return h;
}

void diverging_endpoints() {
    const Tensor rgb = colorize(heat({1, 4}, {-2.0, 0.0, 1.0, 2.0}));
    CHECK(rgb.shape() == std::vector<std::size_t>({3, 1, 4}));
    // -m is pure blue
    CHECK(rgb.at3(0, 0, 0) == 0.0);
    CHECK(rgb.at3(1, 0, 0) == 0.0);
    CHECK(rgb.at3(2, 0, 0) == 1.0);
    // zero is white
    CHECK(rgb.at3(0, 0, 1) == 1.0);
    CHECK(rgb.at3(1, 0, 1) == 1.0);
    CHECK(rgb.at3(2, 0, 1) == 1.0);
    // halfway to +m fades green/blue symmetrically
    CHECK(rgb.at3(0, 0, 2) == 1.0);
    CHECK_NEAR(rgb.at3(1, 0, 2), 0.5, 1e-15);
    CHECK_NEAR(rgb.at3(2, 0, 2), 0.5, 1e-15);
    // +m is pure red
    CHECK(rgb.at3(0, 0, 3) == 1.0);
    CHECK(rgb.at3(1, 0, 3) == 0.0);
    CHECK(rgb.at3(2, 0, 3) == 0.0);

    // an all-zero map renders white, not black
    const Tensor blank = colorize(heat({2, 2}, {0.0, 0.0, 0.0, 0.0}));
    for (std::size_t i = 0; i < blank.size(); ++i) CHECK(blank[i] == 1.0);

    CHECK_THROWS(colorize(Heatmap2D{Tensor({4})}), Errc::shape_mismatch);
    CHECK_THROWS(colorize(Heatmap2D{Tensor({0, 3})}), Errc::shape_mismatch);
    CHECK_THROWS(colorize(heat({1, 2}, {1.0, std::nan("")})), Errc::non_finite_value);
    CHECK_THROWS(colorize(heat({1, 1}, {1.0}), 0.0), Errc::invalid_config);
    CHECK_THROWS(colorize(heat({1, 1}, {1.0}), -5.0), Errc::invalid_config);
    CHECK_THROWS(colorize(heat({1, 1}, {1.0}), 100.5), Errc::invalid_config);
}

void negation_swaps_red_and_blue() {
    Rng rng(19);
    for (int round = 0; round < 10; ++round) {
        const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        Tensor values({h, w});
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = rng.range(-3.0, 3.0);
        Tensor negated = values;
        for (std::size_t i = 0; i < negated.size(); ++i) negated[i] = -negated[i];

        const Tensor a = colorize(Heatmap2D{values});
        const Tensor b = colorize(Heatmap2D{negated});
        const std::size_t n = h * w;
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(a[i] == b[2 * n + i]);         // R <-> B
            CHECK(a[n + i] == b[n + i]);         // G fixed
            CHECK(a[2 * n + i] == b[i]);
        }
    }
}

void positive_scaling_invariance() {
    Rng rng(23);
    Tensor values({5, 5});
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = rng.range(-1.0, 1.0);
    Tensor scaled = values;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 4.0; // exact in binary fp

    const Tensor a = colorize(Heatmap2D{values});
    const Tensor b = colorize(Heatmap2D{scaled});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

void percentile_clipping() {
    // 10x10 ramp 1..100: the 90th percentile of magnitudes is 90
    std::vector<double> ramp(100);
    for (int i = 0; i < 100; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<double>(i + 1);
    const Heatmap2D h = heat({10, 10}, std::move(ramp));

    const Tensor clipped = colorize(h, 90.0);
    const std::size_t n = 100;
    // value 90 sits exactly at the scale: green hits zero
    CHECK(clipped[n + 89] == 0.0);
    // everything above clamps to the same full saturation
    CHECK(clipped[n + 99] == 0.0);
    CHECK(clipped[2 * n + 99] == 0.0);
    // value 45 maps to t = 0.5
    CHECK_NEAR(clipped[n + 44], 0.5, 1e-15);

    // percentile 100 is identical to the default max-abs scaling
    const Tensor full = colorize(h, 100.0);
    const Tensor dflt = colorize(h);
    for (std::size_t i = 0; i < full.size(); ++i) CHECK(full[i] == dflt[i]);

    // with a single pixel any percentile picks that pixel
    const Tensor one = colorize(heat({1, 1}, {7.0}), 1.0);
    CHECK(one[0] == 1.0);
    CHECK(one[1] == 0.0);
}

void quantization() {
    Tensor rgb({3, 1, 2});
    rgb.at3(0, 0, 0) = 1.0;
    rgb.at3(1, 0, 0) = 0.5;
    rgb.at3(2, 0, 0) = 0.0;
    rgb.at3(0, 0, 1) = 1.5;  // out of range, clamps with a warning
    rgb.at3(1, 0, 1) = -0.2;
    rgb.at3(2, 0, 1) = 0.25;

    const ImageU8 img = quantize_image(rgb);
    CHECK(img.height == 1);
    CHECK(img.width == 2);
    CHECK(img.channels == 3);
    CHECK(img.at(0, 0, 0) == 255);
    CHECK(img.at(0, 0, 1) == 128); // lround(127.5)
    CHECK(img.at(0, 0, 2) == 0);
    CHECK(img.at(0, 1, 0) == 255);
    CHECK(img.at(0, 1, 1) == 0);
    CHECK(img.at(0, 1, 2) == 64);

    // grayscale plane
    Tensor gray({1, 2, 2}, {0.0, 1.0, 0.2, 0.8});
    const ImageU8 g = quantize_image(gray);
    CHECK(g.channels == 1);
    CHECK(g.pixels == std::vector<std::uint8_t>({0, 255, 51, 204}));

    CHECK_THROWS(quantize_image(Tensor({2, 2})), Errc::shape_mismatch);
    CHECK_THROWS(quantize_image(Tensor({2, 2, 2})), Errc::shape_mismatch);
}

void write_and_read_back() {
    TempDir tmp("render");
    // zero heatmap -> white image end to end
    const Tensor white = colorize(heat({2, 3}, std::vector<double>(6, 0.0)));
    write_image(white, tmp.path / "white.png");
    const ImageU8 back = read_image(tmp.path / "white.png");
    CHECK(back.height == 2);
    CHECK(back.width == 3);
    for (std::uint8_t p : back.pixels) CHECK(p == 255);

    // quantized bytes survive the PNG round trip untouched
    Rng rng(29);
    Tensor values({7, 5});
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = rng.range(-1.0, 1.0);
    const Tensor rgb = colorize(Heatmap2D{values});
    const ImageU8 quantized = quantize_image(rgb);
    write_image(rgb, tmp.path / "map.png");
    const ImageU8 reread = read_image(tmp.path / "map.png");
    CHECK(reread.pixels == quantized.pixels);
}

void montage_composition() {
    Tensor left({3, 2, 2});
    Tensor right({3, 2, 3});
    for (std::size_t i = 0; i < left.size(); ++i) left[i] = static_cast<double>(i);
    for (std::size_t i = 0; i < right.size(); ++i) right[i] = 100.0 + static_cast<double>(i);

    const Tensor joined = montage(left, right);
    CHECK(joined.shape() == std::vector<std::size_t>({3, 2, 5}));
    CHECK(joined.at3(0, 0, 0) == left.at3(0, 0, 0));
    CHECK(joined.at3(0, 0, 1) == left.at3(0, 0, 1));
    CHECK(joined.at3(0, 0, 2) == right.at3(0, 0, 0));
    CHECK(joined.at3(2, 1, 4) == right.at3(2, 1, 2));

    CHECK_THROWS(montage(Tensor({3, 2, 2}), Tensor({3, 3, 2})), Errc::dimension_mismatch);
    CHECK_THROWS(montage(Tensor({3, 2, 2}), Tensor({1, 2, 2})), Errc::dimension_mismatch);
    CHECK_THROWS(montage(Tensor({2, 2}), Tensor({3, 2, 2})), Errc::dimension_mismatch);
}

void determinism() {
    Rng rng(31);
    Tensor values({8, 8});
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = rng.range(-2.0, 2.0);
    const Tensor a = colorize(Heatmap2D{values}, 95.0);
    const Tensor b = colorize(Heatmap2D{values}, 95.0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

} // namespace

int main() {
    diverging_endpoints();
    negation_swaps_red_and_blue();
    positive_scaling_invariance();
    percentile_clipping();
    quantization();
    write_and_read_back();
    montage_composition();
    determinism();
    return testutil::summary("test_render");
}
