#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace canvas_search {

/// Reads a whole file. Throws Error(Data) when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames it over `path`, so readers never
/// observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::uint32_t crc32(std::string_view bytes);

/// Binary container shared by the weights, index and embedding files:
///
///   magic      8 bytes, 4-char family tag followed by a 4-digit version
///   u64 LE     header length in bytes
///   header     UTF-8 JSON
///   payload    raw little-endian blobs, offsets described by the header
///   u32 LE     CRC-32 of every preceding byte
struct Container {
    std::string magic;
    std::string header;
    std::string payload;
};

std::string encode_container(const Container& c);

/// Parses and verifies a container. `family` is the 4-char tag; any version
/// other than `version` is rejected, newer ones with an explicit
/// unsupported-version message.
Container decode_container(std::string_view bytes, std::string_view family, int version);

/// Appends raw float bytes to a payload, returning the byte offset they start at.
std::uint64_t append_floats(std::string& payload, std::span<const float> values);

/// Copies `count` floats starting at `offset`; bounds-checked.
std::vector<float> read_floats(std::string_view payload, std::uint64_t offset, std::uint64_t count);

} // namespace canvas_search
