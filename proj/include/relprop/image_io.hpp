#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace relprop {

/// Decoded 8-bit image, interleaved row-major. channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
};

/// Dispatches on magic bytes: PNG signature or binary PPM ("P6").
ImageU8 read_image(const std::filesystem::path& path);

ImageU8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& origin);
ImageU8 decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& origin);

void write_png(const std::filesystem::path& path, const ImageU8& image);
std::vector<std::uint8_t> encode_ppm(const ImageU8& image);
void write_ppm(const std::filesystem::path& path, const ImageU8& image);

} // namespace relprop
