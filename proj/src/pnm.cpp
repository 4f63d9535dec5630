#include "otopipe/pnm.hpp"

#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <fmt/core.h>

#include "otopipe/error.hpp"

namespace otopipe::pnm {

namespace {

void skip_space_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

long read_header_int(std::istream& in, const char* what) {
  skip_space_and_comments(in);
  long v = 0;
  int digits = 0;
  while (std::isdigit(in.peek())) {
    v = v * 10 + (in.get() - '0');
    if (++digits > 9) throw DataError(fmt::format("PNM header: {} too large", what));
  }
  if (digits == 0) throw DataError(fmt::format("PNM header: missing {}", what));
  return v;
}

}  // namespace

std::variant<GrayImage, RgbImage> read(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw DataError("not a binary PGM/PPM (expected P5 or P6)");
  const bool color = magic[1] == '6';
  const long width = read_header_int(in, "width");
  const long height = read_header_int(in, "height");
  const long maxval = read_header_int(in, "maxval");
  if (width < 1 || height < 1) throw DataError("PNM header: zero image dimension");
  if (maxval < 1 || maxval > 255) throw DataError(fmt::format("PNM maxval {} unsupported (need 1..255)", maxval));
  if (!std::isspace(in.get())) throw DataError("PNM header: missing separator before raster");

  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * (color ? 3 : 1);
  std::vector<std::uint8_t> data(n);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw DataError(fmt::format("PNM raster truncated: {} of {} bytes", in.gcount(), n));
  if (maxval != 255) {
    for (auto& v : data) v = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
  }
  if (color) return RgbImage{static_cast<int>(width), static_cast<int>(height), std::move(data)};
  return GrayImage(static_cast<int>(width), static_cast<int>(height), std::move(data));
}

std::variant<GrayImage, RgbImage> read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open image '{}'", path.string()));
  try {
    return read(in);
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

GrayImage read_gray(const std::filesystem::path& path) {
  auto img = read(path);
  if (auto* g = std::get_if<GrayImage>(&img)) return std::move(*g);
  return to_grayscale(std::get<RgbImage>(img));
}

void write(std::ostream& out, const GrayImage& img) {
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels().data()), static_cast<std::streamsize>(img.size()));
}

void write(std::ostream& out, const RgbImage& img) {
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
}

namespace {
template <class Image>
void write_file(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write image '{}'", path.string()));
  write(out, img);
  if (!out) throw DataError(fmt::format("write failed for '{}'", path.string()));
}
}  // namespace

void write(const std::filesystem::path& path, const GrayImage& img) { write_file(path, img); }
void write(const std::filesystem::path& path, const RgbImage& img) { write_file(path, img); }

}  // namespace otopipe::pnm
