#pragma once

#include <filesystem>
#include <iosfwd>
#include <variant>

#include "otopipe/imaging.hpp"

namespace otopipe::pnm {

// Binary PGM (P5) and PPM (P6) with maxval <= 255. Header comments are
// accepted. Malformed or truncated input throws DataError.
std::variant<GrayImage, RgbImage> read(std::istream& in);
std::variant<GrayImage, RgbImage> read(const std::filesystem::path& path);

// Reads either format; colour images go through to_grayscale().
GrayImage read_gray(const std::filesystem::path& path);

void write(std::ostream& out, const GrayImage& img);
void write(std::ostream& out, const RgbImage& img);
void write(const std::filesystem::path& path, const GrayImage& img);
void write(const std::filesystem::path& path, const RgbImage& img);

}  // namespace otopipe::pnm
