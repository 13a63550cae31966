#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Binary container shared by checkpoints and embedding indexes:
//   magic (6 bytes, e.g. "XDPT1\n")
//   u64 little-endian header length L
//   L bytes of UTF-8 JSON header
//   payload of little-endian f32 values
namespace xdepict {

struct Container {
    std::string header;
    std::vector<float> payload;
};

std::vector<std::uint8_t> encode_container(std::string_view magic, std::string_view header,
                                           std::span<const float> payload);

// Throws FormatError (bad_magic / truncated) on malformed input. The payload
// must be a whole number of floats.
Container decode_container(std::span<const std::uint8_t> bytes, std::string_view magic);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);

}  // namespace xdepict
