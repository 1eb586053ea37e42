#include "amnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace amnet {

namespace {

std::string describe(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::string next_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

}  // namespace

FloatImage read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + describe(path));
  const std::string magic = next_token(in);
  FloatImage img;
  if (magic == "Pf") {
    img.channels = 1;
  } else if (magic == "PF") {
    img.channels = 3;
  } else {
    throw IoError("malformed PFM header in " + describe(path) + ": bad magic '" + magic + "'");
  }
  try {
    img.width = std::stoll(next_token(in));
    img.height = std::stoll(next_token(in));
  } catch (const std::exception&) {
    throw IoError("malformed PFM header in " + describe(path) + ": bad dimensions");
  }
  double scale = 0;
  try {
    scale = std::stod(next_token(in));  // consumes exactly one whitespace byte after the token
  } catch (const std::exception&) {
    throw IoError("malformed PFM header in " + describe(path) + ": bad scale");
  }
  if (img.width <= 0 || img.height <= 0 || scale == 0) {
    throw IoError("malformed PFM header in " + describe(path));
  }
  const bool little = scale < 0;
  const std::size_t row = static_cast<std::size_t>(img.width * img.channels);
  img.data.resize(row * static_cast<std::size_t>(img.height));
  std::vector<std::uint32_t> raw(row);
  for (Index y = img.height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(row * 4));
    if (!in) throw IoError("truncated PFM data in " + describe(path));
    const bool swap = little != (std::endian::native == std::endian::little);
    float* dst = img.data.data() + static_cast<std::size_t>(y) * row;
    for (std::size_t i = 0; i < row; ++i) {
      const std::uint32_t bits = swap ? byteswap32(raw[i]) : raw[i];
      std::memcpy(dst + i, &bits, 4);
    }
  }
  return img;
}

void write_pfm(const std::filesystem::path& path, const FloatImage& image) {
  if (image.channels != 1 && image.channels != 3) throw IoError("PFM supports 1 or 3 channels");
  const std::size_t row = static_cast<std::size_t>(image.width * image.channels);
  if (image.data.size() != row * static_cast<std::size_t>(image.height)) throw IoError("PFM image size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + describe(path));
  out << (image.channels == 1 ? "Pf" : "PF") << '\n' << image.width << ' ' << image.height << '\n'
      << (std::endian::native == std::endian::little ? "-1.0" : "1.0") << '\n';
  for (Index y = image.height - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(image.data.data() + static_cast<std::size_t>(y) * row),
              static_cast<std::streamsize>(row * 4));
  }
  if (!out) throw IoError("failed writing " + describe(path));
}

namespace {

struct PngReader {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriter {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

// Reads any PNG into rows of the requested channel count and bit depth.
std::vector<std::uint8_t> read_png_raw(const std::filesystem::path& path, int want_channels, int want_depth,
                                       Index& width, Index& height) {
  PngReader r;
  r.fp = std::fopen(path.string().c_str(), "rb");
  if (!r.fp) throw IoError("cannot open " + describe(path));
  png_byte sig[8];
  if (std::fread(sig, 1, 8, r.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file: " + describe(path));
  }
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw IoError("libpng init failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(r.png))) throw IoError("corrupt PNG: " + describe(path));
  png_init_io(r.png, r.fp);
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(r.png);
  if (want_depth == 8 && depth == 16) png_set_strip_16(r.png);
  if (want_depth == 16 && depth != 16) throw IoError("expected a 16-bit PNG: " + describe(path));
  const bool is_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (want_channels == 3 && is_gray) png_set_gray_to_rgb(r.png);
  if (want_channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
  if (want_depth == 16 && std::endian::native == std::endian::little) png_set_swap(r.png);
  png_read_update_info(r.png, r.info);
  width = png_get_image_width(r.png, r.info);
  height = png_get_image_height(r.png, r.info);
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  const std::size_t expect = static_cast<std::size_t>(width) * want_channels * (want_depth / 8);
  if (rowbytes != expect) throw IoError("unsupported PNG layout: " + describe(path));
  std::vector<std::uint8_t> buf(rowbytes * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (Index y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return buf;
}

void write_png_raw(const std::filesystem::path& path, const std::uint8_t* data, Index width, Index height,
                   int channels, int depth) {
  PngWriter w;
  w.fp = std::fopen(path.string().c_str(), "wb");
  if (!w.fp) throw IoError("cannot write " + describe(path));
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!w.png) throw IoError("libpng init failed");
  w.info = png_create_info_struct(w.png);
  if (!w.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(w.png))) throw IoError("failed writing PNG " + describe(path));
  png_init_io(w.png, w.fp);
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(w.png);
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * (depth / 8);
  for (Index y = 0; y < height; ++y) {
    png_write_row(w.png, const_cast<png_bytep>(data + rowbytes * static_cast<std::size_t>(y)));
  }
  png_write_end(w.png, nullptr);
}

}  // namespace

DisparityPng read_kitti_png(const std::filesystem::path& path) {
  DisparityPng out;
  const auto raw = read_png_raw(path, 1, 16, out.width, out.height);
  const std::size_t n = static_cast<std::size_t>(out.width * out.height);
  out.disparity.resize(n);
  out.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint16_t v;
    std::memcpy(&v, raw.data() + 2 * i, 2);
    out.valid[i] = v != 0;
    out.disparity[i] = static_cast<float>(v) / 256.0f;
  }
  return out;
}

void write_kitti_png(const std::filesystem::path& path, Index width, Index height, std::span<const float> disparity,
                     std::span<const std::uint8_t> valid) {
  const std::size_t n = static_cast<std::size_t>(width * height);
  if (disparity.size() != n || (!valid.empty() && valid.size() != n)) throw IoError("disparity PNG size mismatch");
  std::vector<std::uint16_t> buf(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid.empty() && !valid[i]) continue;
    const float d = disparity[i];
    if (!std::isfinite(d) || d < 0.0f) throw IoError("disparity PNG cannot store value " + std::to_string(d));
    const double stored = std::round(static_cast<double>(d) * 256.0);
    if (stored > 65535.0) throw IoError("disparity " + std::to_string(d) + " overflows 16-bit PNG encoding");
    buf[i] = static_cast<std::uint16_t>(stored);
  }
  write_png_raw(path, reinterpret_cast<const std::uint8_t*>(buf.data()), width, height, 1, 16);
}

Image8 read_png8(const std::filesystem::path& path, Index channels) {
  if (channels != 1 && channels != 3) throw IoError("read_png8 supports 1 or 3 channels");
  Image8 img;
  img.channels = channels;
  img.data = read_png_raw(path, static_cast<int>(channels), 8, img.width, img.height);
  return img;
}

void write_png8(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw IoError("write_png8 supports 1 or 3 channels");
  if (image.data.size() != static_cast<std::size_t>(image.width * image.height * image.channels)) {
    throw IoError("8-bit image size mismatch");
  }
  write_png_raw(path, image.data.data(), image.width, image.height, static_cast<int>(image.channels), 8);
}

Image8 colorize(std::span<const float> values, Index width, Index height, float lo, float hi) {
  Image8 img{width, height, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(width * height * 3), 0)};
  const float range = hi > lo ? hi - lo : 1.0f;
  for (std::size_t i = 0; i < values.size() && i < static_cast<std::size_t>(width * height); ++i) {
    if (!std::isfinite(values[i])) continue;
    const float t = std::clamp((values[i] - lo) / range, 0.0f, 1.0f);
    const auto channel = [t](float center) {
      return static_cast<std::uint8_t>(std::lround(255.0f * std::clamp(1.5f - 4.0f * std::abs(t - center), 0.0f, 1.0f)));
    };
    img.data[3 * i + 0] = channel(0.75f);
    img.data[3 * i + 1] = channel(0.5f);
    img.data[3 * i + 2] = channel(0.25f);
  }
  return img;
}

Image8 to_gray8(std::span<const float> values, Index width, Index height) {
  Image8 img{width, height, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(width * height), 0)};
  float lo = INFINITY, hi = -INFINITY;
  for (float v : values) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi > lo ? hi - lo : 1.0f;
  for (std::size_t i = 0; i < values.size() && i < img.data.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    img.data[i] = static_cast<std::uint8_t>(std::lround(255.0f * (values[i] - lo) / range));
  }
  return img;
}

}  // namespace amnet
