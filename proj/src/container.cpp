#include "xdepict/container.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

#include "xdepict/error.hpp"

namespace xdepict {

std::vector<std::uint8_t> encode_container(std::string_view magic, std::string_view header,
                                           std::span<const float> payload) {
    std::vector<std::uint8_t> out;
    out.reserve(magic.size() + 8 + header.size() + payload.size() * 4);
    out.insert(out.end(), magic.begin(), magic.end());
    const std::uint64_t length = header.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(length >> (8 * i)));
    out.insert(out.end(), header.begin(), header.end());
    for (float v : payload) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    return out;
}

Container decode_container(std::span<const std::uint8_t> bytes, std::string_view magic) {
    using Kind = FormatError::Kind;
    if (bytes.size() < magic.size() ||
        std::string_view(reinterpret_cast<const char*>(bytes.data()), magic.size()) != magic) {
        throw FormatError(Kind::bad_magic, "", "bad magic: expected container starting with '" +
                                                   std::string(magic.substr(0, magic.size() - 1)) + "'");
    }
    std::size_t pos = magic.size();
    if (bytes.size() < pos + 8) throw FormatError(Kind::truncated, "", "truncated: missing header length");
    std::uint64_t length = 0;
    for (int i = 0; i < 8; ++i) length |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    if (length > bytes.size() - pos) {
        throw FormatError(Kind::truncated, "", "truncated: header declares " + std::to_string(length) +
                                                   " bytes, file has " + std::to_string(bytes.size() - pos));
    }
    Container c;
    c.header.assign(reinterpret_cast<const char*>(bytes.data() + pos), length);
    pos += length;
    const std::size_t rest = bytes.size() - pos;
    if (rest % 4 != 0) throw FormatError(Kind::truncated, "", "truncated: payload is not a whole number of floats");
    c.payload.resize(rest / 4);
    for (std::size_t i = 0; i < c.payload.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[pos + 4 * i + b]) << (8 * b);
        c.payload[i] = std::bit_cast<float>(bits);
    }
    return c;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in || std::filesystem::is_directory(path)) throw FormatError(FormatError::Kind::io, "", "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::io, "", "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatError::Kind::io, "", "write failed for " + path.string());
}

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace xdepict
