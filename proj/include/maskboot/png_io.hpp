#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maskboot/image.hpp"

namespace maskboot {

void write_png(const std::filesystem::path& path, const RgbImage& image);
// Single-channel 8-bit; label values are stored verbatim.
void write_png(const std::filesystem::path& path, const LabelGrid& labels);

RgbImage read_png_rgb(const std::filesystem::path& path);
LabelGrid read_png_gray(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace maskboot
