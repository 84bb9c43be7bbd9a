#include "canvas_search/io.hpp"

#include "canvas_search/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace canvas_search {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts need byte swapping");

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw_data("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw_data("cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw_data("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw_data("cannot rename into " + path.string());
    }
}

std::uint32_t crc32(std::string_view bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in pieces.
    const char* p = bytes.data();
    std::size_t left = bytes.size();
    while (left > 0) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        crc = ::crc32(crc, reinterpret_cast<const Bytef*>(p), n);
        p += n;
        left -= n;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace {

template <typename T>
void put_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get_le(std::string_view in, std::size_t at) {
    T v;
    std::memcpy(&v, in.data() + at, sizeof(T));
    return v;
}

} // namespace

std::string encode_container(const Container& c) {
    if (c.magic.size() != 8) {
        throw_internal("container magic must be 8 bytes");
    }
    std::string out;
    out.reserve(8 + 8 + c.header.size() + c.payload.size() + 4);
    out += c.magic;
    put_le<std::uint64_t>(out, c.header.size());
    out += c.header;
    out += c.payload;
    put_le<std::uint32_t>(out, crc32(out));
    return out;
}

Container decode_container(std::string_view bytes, std::string_view family, int version) {
    if (bytes.size() < 8 + 8 + 4) {
        throw_data("file truncated: " + std::to_string(bytes.size()) + " bytes");
    }
    const std::string_view magic = bytes.substr(0, 8);
    if (magic.substr(0, 4) != family) {
        throw_data("bad magic: expected " + std::string(family) + "xxxx");
    }
    int found = 0;
    for (char ch : magic.substr(4)) {
        if (ch < '0' || ch > '9') {
            throw_data("bad magic: malformed version tag");
        }
        found = found * 10 + (ch - '0');
    }
    if (found > version) {
        throw_data("unsupported version " + std::to_string(found) + " (this build reads " +
                   std::to_string(version) + ")");
    }
    if (found != version) {
        throw_data("unsupported version " + std::to_string(found));
    }

    const std::uint32_t stored = get_le<std::uint32_t>(bytes, bytes.size() - 4);
    if (crc32(bytes.substr(0, bytes.size() - 4)) != stored) {
        throw_data("CRC mismatch: file is corrupted or truncated");
    }
    const auto header_len = get_le<std::uint64_t>(bytes, 8);
    if (header_len > bytes.size() - 20) {
        throw_data("header length exceeds file size");
    }
    Container c;
    c.magic = std::string(magic);
    c.header = std::string(bytes.substr(16, header_len));
    c.payload = std::string(bytes.substr(16 + header_len, bytes.size() - 20 - header_len));
    return c;
}

std::uint64_t append_floats(std::string& payload, std::span<const float> values) {
    const std::uint64_t offset = payload.size();
    payload.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
    return offset;
}

std::vector<float> read_floats(std::string_view payload, std::uint64_t offset, std::uint64_t count) {
    if (offset > payload.size() || count > (payload.size() - offset) / sizeof(float)) {
        throw_data("blob out of range: offset " + std::to_string(offset) + ", " +
                   std::to_string(count) + " floats");
    }
    std::vector<float> out(count);
    std::memcpy(out.data(), payload.data() + offset, count * sizeof(float));
    return out;
}

} // namespace canvas_search
