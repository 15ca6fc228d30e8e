#include "maskboot/png_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <png.h>
#include <zlib.h>

#include "maskboot/errors.hpp"

namespace maskboot {
namespace {

void write_raw(const std::filesystem::path& path, int height, int width, png_uint_32 format,
               const std::uint8_t* pixels) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = format;
    if (!png_image_write_to_file(&img, path.c_str(), 0, pixels, 0, nullptr)) {
        std::string msg = "cannot write PNG " + path.string() + ": " + img.message;
        png_image_free(&img);
        throw IoError(msg);
    }
}

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, png_uint_32 format, int& height, int& width) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    img.format = format;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = "cannot decode PNG " + path.string() + ": " + img.message;
        png_image_free(&img);
        throw IoError(msg);
    }
    height = static_cast<int>(img.height);
    width = static_cast<int>(img.width);
    return buf;
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    write_raw(path, image.height, image.width, PNG_FORMAT_RGB, image.rgb.data());
}

void write_png(const std::filesystem::path& path, const LabelGrid& labels) {
    write_raw(path, labels.height, labels.width, PNG_FORMAT_GRAY, labels.values.data());
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
    RgbImage out;
    out.rgb = read_raw(path, PNG_FORMAT_RGB, out.height, out.width);
    return out;
}

LabelGrid read_png_gray(const std::filesystem::path& path) {
    LabelGrid out;
    out.values = read_raw(path, PNG_FORMAT_GRAY, out.height, out.width);
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace maskboot
