#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pad/core.hpp"

namespace pad {

/// Decodes any 8/16-bit PNG to 8-bit RGB (alpha dropped, gray expanded).
/// Throws Error(DecodeError) on malformed input, Error(Io) if unreadable.
Raster read_png(const std::filesystem::path& path);
Raster decode_png(std::span<const std::uint8_t> bytes);

/// Encodes 8-bit RGB without ancillary chunks, so output bytes depend only
/// on the pixels.
std::vector<std::uint8_t> encode_png(const Raster& img);
void write_png(const std::filesystem::path& path, const Raster& img);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pad
