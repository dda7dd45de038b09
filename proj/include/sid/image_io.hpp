#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sid/image.hpp"

namespace sid {

/// Decode a PNG or JPEG file (sniffed by magic bytes) into 8-bit RGB.
/// Gray inputs are expanded, alpha is dropped.
Image8 read_image(const std::filesystem::path& path);
Image8 decode_image(const std::vector<unsigned char>& bytes);

/// Write an 8-bit gray or RGB PNG. Output bytes depend only on pixel data.
void write_png(const std::filesystem::path& path, const Image8& image);
std::vector<unsigned char> encode_png(const Image8& image);

/// Masks are stored as 1-bit grayscale PNG (white = subject).
void write_mask_png(const std::filesystem::path& path, const MaskGrid& mask);
MaskGrid read_mask_png(const std::filesystem::path& path);

bool is_image_file(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace sid
