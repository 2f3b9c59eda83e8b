#include "relprop/image_io.hpp"

#include <cstring>
#include <string>

#include <png.h>

#include "relprop/errors.hpp"
#include "relprop/io_util.hpp"

namespace relprop {

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

struct PngByteReader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t offset;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t count) {
    auto* reader = static_cast<PngByteReader*>(png_get_io_ptr(png));
    if (reader->offset + count > reader->size) {
        png_error(png, "read past end of buffer");
    }
    std::memcpy(out, reader->data + reader->offset, count);
    reader->offset += count;
}

} // namespace

ImageU8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0) {
        fail(Errc::malformed_document, origin + ": not a PNG stream");
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(Errc::io_failure, origin + ": cannot allocate PNG reader");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(Errc::io_failure, origin + ": cannot allocate PNG info");
    }

    ImageU8 image;
    std::vector<png_bytep> rows;
    PngByteReader reader{bytes.data(), bytes.size(), 0};

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(Errc::malformed_document, origin + ": corrupt PNG stream");
    }

    png_set_read_fn(png, &reader, png_read_from_memory);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);

    // Normalize everything to 8-bit gray or RGB.
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const std::size_t channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(Errc::malformed_document, origin + ": unsupported channel count " + std::to_string(channels));
    }

    image.height = height;
    image.width = width;
    image.channels = channels;
    image.pixels.resize(static_cast<std::size_t>(height) * width * channels);
    rows.resize(height);
    for (std::size_t y = 0; y < height; ++y) {
        rows[y] = image.pixels.data() + y * width * channels;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

namespace {

/// Skips PPM whitespace and `#` comment lines, then parses a decimal token.
std::size_t ppm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos, const std::string& origin) {
    while (pos < bytes.size()) {
        const char ch = static_cast<char>(bytes[pos]);
        if (ch == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') {
        fail(Errc::malformed_document, origin + ": expected a decimal value in PPM header");
    }
    std::size_t value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
        value = value * 10 + (bytes[pos] - '0');
        if (value > 1000000000) fail(Errc::malformed_document, origin + ": absurd PPM header value");
        ++pos;
    }
    return value;
}

} // namespace

ImageU8 decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        fail(Errc::malformed_document, origin + ": not a binary PPM (P6) stream");
    }
    std::size_t pos = 2;
    const std::size_t width = ppm_token(bytes, pos, origin);
    const std::size_t height = ppm_token(bytes, pos, origin);
    const std::size_t maxval = ppm_token(bytes, pos, origin);
    if (width == 0 || height == 0) fail(Errc::malformed_document, origin + ": zero PPM dimension");
    if (maxval != 255) fail(Errc::malformed_document, origin + ": only maxval 255 PPMs are supported");
    if (pos >= bytes.size() || (bytes[pos] != '\n' && bytes[pos] != ' ' && bytes[pos] != '\t' && bytes[pos] != '\r')) {
        fail(Errc::malformed_document, origin + ": missing separator after PPM header");
    }
    ++pos; // exactly one whitespace byte separates header and raster

    ImageU8 image;
    image.height = height;
    image.width = width;
    image.channels = 3;
    const std::size_t raster = height * width * 3;
    if (bytes.size() - pos < raster) {
        fail(Errc::malformed_document, origin + ": PPM raster truncated (" + std::to_string(bytes.size() - pos) + " of " +
                                           std::to_string(raster) + " bytes)");
    }
    image.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                        bytes.begin() + static_cast<std::ptrdiff_t>(pos + raster));
    return image;
}

ImageU8 read_image(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_binary_file(path);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
        return decode_png(bytes, path.string());
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
        return decode_ppm(bytes, path.string());
    }
    fail(Errc::malformed_document, path.string() + ": unrecognized image format (PNG and binary PPM are supported)");
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
    if (image.channels != 1 && image.channels != 3) {
        fail(Errc::shape_mismatch, "PNG writer expects 1 or 3 channels, got " + std::to_string(image.channels));
    }
    if (image.pixels.size() != image.height * image.width * image.channels) {
        fail(Errc::shape_mismatch, "image buffer does not match its declared dimensions");
    }

    FILE* file = std::fopen(path.string().c_str(), "wb");
    if (!file) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        std::fclose(file);
        fail(Errc::io_failure, "cannot allocate PNG writer");
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        std::fclose(file);
        fail(Errc::io_failure, "cannot allocate PNG info");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(file);
        fail(Errc::io_failure, "PNG encoding failed for " + path.string());
    }

    png_init_io(png, file);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(file) != 0) fail(Errc::io_failure, "cannot finish writing " + path.string());
}

std::vector<std::uint8_t> encode_ppm(const ImageU8& image) {
    if (image.channels != 3) fail(Errc::shape_mismatch, "PPM is RGB only, got " + std::to_string(image.channels) + " channels");
    if (image.pixels.size() != image.height * image.width * 3) {
        fail(Errc::shape_mismatch, "image buffer does not match its declared dimensions");
    }
    const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

void write_ppm(const std::filesystem::path& path, const ImageU8& image) { write_binary_file(path, encode_ppm(image)); }

} // namespace relprop
