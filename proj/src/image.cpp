#include "xdepict/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "xdepict/container.hpp"
#include "xdepict/error.hpp"

namespace xdepict {

namespace {

FormatError image_error(const std::string& message) {
    return FormatError(FormatError::Kind::bad_header, "", message);
}

void check_dims(const GrayImage& image) {
    if (image.width <= 0 || image.height <= 0 ||
        image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
        throw Error("image has inconsistent dimensions " + std::to_string(image.width) + "x" +
                    std::to_string(image.height) + " for " + std::to_string(image.pixels.size()) + " pixels");
    }
}

// Reads one whitespace-delimited unsigned integer from a PGM header,
// skipping '#' comments.
int pgm_field(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    for (;;) {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw image_error("PGM header is malformed");
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        value = value * 10 + (bytes[pos] - '0');
        if (value > 1 << 20) throw image_error("PGM header value out of range");
        ++pos;
    }
    return static_cast<int>(value);
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += k[static_cast<std::size_t>(i + radius)];
    }
    for (auto& v : k) v /= total;
    return k;
}

// Overlap weights of destination cells [i*r, (i+1)*r) against unit source cells.
std::vector<std::vector<std::pair<int, double>>> area_weights(int src, int dst) {
    std::vector<std::vector<std::pair<int, double>>> weights(static_cast<std::size_t>(dst));
    const double ratio = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        const double lo = i * ratio, hi = (i + 1) * ratio;
        for (int s = static_cast<int>(std::floor(lo)); s < std::min(src, static_cast<int>(std::ceil(hi))); ++s) {
            const double overlap = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
            if (overlap > 0.0) weights[static_cast<std::size_t>(i)].push_back({s, overlap / ratio});
        }
    }
    return weights;
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
    check_dims(image);
    const std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        throw FormatError(FormatError::Kind::bad_magic, "", "not a binary PGM (expected 'P5')");
    }
    std::size_t pos = 2;
    GrayImage image;
    image.width = pgm_field(bytes, pos);
    image.height = pgm_field(bytes, pos);
    const int maxval = pgm_field(bytes, pos);
    if (image.width <= 0 || image.height <= 0) throw image_error("PGM has zero width or height");
    if (maxval != 255) throw image_error("PGM maxval " + std::to_string(maxval) + " is not supported (need 255)");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw image_error("PGM header is malformed");
    ++pos;
    const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
    if (bytes.size() - pos < count) {
        throw FormatError(FormatError::Kind::truncated, "",
                          "truncated PGM: expected " + std::to_string(count) + " pixel bytes, found " +
                              std::to_string(bytes.size() - pos));
    }
    image.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                        bytes.begin() + static_cast<std::ptrdiff_t>(pos + count));
    return image;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) { write_file(path, encode_pgm(image)); }

GrayImage read_pgm(const std::filesystem::path& path) {
    try {
        return decode_pgm(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(e.kind(), e.tensor(), path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
    check_dims(image);
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
        throw Error(std::string("PNG encode failed: ") + png.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
        throw Error(std::string("PNG encode failed: ") + png.message);
    }
    out.resize(size);
    return out;
}

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
        throw image_error(std::string("PNG decode failed: ") + png.message);
    }
    png.format = PNG_FORMAT_GRAY;
    GrayImage image;
    image.width = static_cast<int>(png.width);
    image.height = static_cast<int>(png.height);
    image.pixels.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
        png_image_free(&png);
        throw image_error(std::string("PNG decode failed: ") + png.message);
    }
    return image;
}

GrayImage decode_image(std::span<const std::uint8_t> bytes) {
    static constexpr std::uint8_t png_signature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::equal(png_signature, png_signature + 8, bytes.begin())) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
    throw FormatError(FormatError::Kind::bad_magic, "", "unsupported image format (expected PGM P5 or PNG)");
}

FloatImage gaussian_blur(const FloatImage& image, double sigma) {
    if (sigma <= 0.0) return image;
    const auto k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    FloatImage tmp(image.width, image.height), out(image.width, image.height);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int sx = std::clamp(x + i, 0, image.width - 1);
                acc += k[static_cast<std::size_t>(i + radius)] * image.at(sx, y);
            }
            tmp.at(x, y) = static_cast<float>(acc);
        }
    }
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int sy = std::clamp(y + i, 0, image.height - 1);
                acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(x, sy);
            }
            out.at(x, y) = static_cast<float>(acc);
        }
    }
    return out;
}

FloatImage area_resize(const FloatImage& image, int width, int height) {
    if (width <= 0 || height <= 0) throw Error("area_resize: target size must be positive");
    if (width == image.width && height == image.height) return image;
    const auto wx = area_weights(image.width, width);
    const auto wy = area_weights(image.height, height);
    FloatImage rows(width, image.height);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (const auto& [s, w] : wx[static_cast<std::size_t>(x)]) acc += w * image.at(s, y);
            rows.at(x, y) = static_cast<float>(acc);
        }
    }
    FloatImage out(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (const auto& [s, w] : wy[static_cast<std::size_t>(y)]) acc += w * rows.at(x, s);
            out.at(x, y) = static_cast<float>(acc);
        }
    }
    return out;
}

GrayImage quantize(const FloatImage& image) {
    GrayImage out;
    out.width = image.width;
    out.height = image.height;
    out.pixels.resize(image.values.size());
    for (std::size_t i = 0; i < image.values.size(); ++i) {
        const double v = std::clamp(static_cast<double>(image.values[i]), 0.0, 1.0);
        out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

}  // namespace xdepict
