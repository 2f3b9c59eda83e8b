#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace relprop {

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, const void* data, std::size_t size);
inline void write_binary_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    write_binary_file(path, bytes.data(), bytes.size());
}
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace relprop
