#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace xdepict {

// 8-bit grayscale image, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Floating-point plane used during rendering, row-major.
struct FloatImage {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    FloatImage() = default;
    FloatImage(int w, int h, float fill = 0.0f)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Binary PGM ("P5", maxval 255).
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

// 8-bit grayscale PNG. Color or 16-bit PNGs are converted to 8-bit gray on decode.
std::vector<std::uint8_t> encode_png(const GrayImage& image);
GrayImage decode_png(std::span<const std::uint8_t> bytes);

// Decodes PGM or PNG, chosen by signature.
GrayImage decode_image(std::span<const std::uint8_t> bytes);

// Separable Gaussian blur with clamp-to-edge borders; sigma <= 0 is a copy.
FloatImage gaussian_blur(const FloatImage& image, double sigma);

// Area-averaging resample: each output pixel is the overlap-weighted mean of
// the source pixels its footprint covers.
FloatImage area_resize(const FloatImage& image, int width, int height);

// Clamps to [0,1] and rounds to 8 bits.
GrayImage quantize(const FloatImage& image);

}  // namespace xdepict
