#include "relprop/io_util.hpp"

#include <fstream>

#include "relprop/errors.hpp"

namespace relprop {

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::missing_file, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(Errc::io_failure, "read error on " + path.string());
    return bytes;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::missing_file, "cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(Errc::io_failure, "read error on " + path.string());
    return text;
}

void write_binary_file(const std::filesystem::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) fail(Errc::io_failure, "write error on " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_binary_file(path, text.data(), text.size());
}

} // namespace relprop
