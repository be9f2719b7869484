#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace skipdet {

// 8-bit grayscale raster, row-major
struct Image {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> pix;

    Image() = default;
    Image(int height, int width, std::uint8_t fill = 0)
        : h(height), w(width), pix(std::size_t(height) * std::size_t(width), fill) {}

    std::uint8_t& at(int y, int x) { return pix[std::size_t(y) * std::size_t(w) + std::size_t(x)]; }
    std::uint8_t at(int y, int x) const {
        return pix[std::size_t(y) * std::size_t(w) + std::size_t(x)];
    }
};

void write_png_gray(const std::filesystem::path& path, const Image& img);
Image read_png_gray(const std::filesystem::path& path);

}  // namespace skipdet
