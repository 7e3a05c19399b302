#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "samst/tensor.hpp"

namespace samst {

namespace detail {

struct PngReadBuffer {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->pos + n > buf->size) png_error(png, "truncated PNG stream");
  std::memcpy(out, buf->data + buf->pos, n);
  buf->pos += n;
}

inline void png_write_cb(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + n);
}

inline void png_flush_cb(png_structp) {}

[[noreturn]] inline void png_error_cb(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

inline void png_warning_cb(png_structp, png_const_charp) {}

}  // namespace detail

// Decodes an 8-bit RGB/RGBA PNG (alpha dropped; gray and palette images
// are expanded to RGB) into a 3 x H x W tensor with values byte / 255.
template <std::floating_point T = float>
Tensor<T> decode_image(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG stream", 0);
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_cb, detail::png_warning_cb);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG: cannot allocate decoder");
  }
  detail::PngReadBuffer buf{bytes.data(), bytes.size(), 0};
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int depth = 0;
  // Nothing with a non-trivial destructor may be created between setjmp and
  // the last libpng call.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG: " + (err.empty() ? std::string("corrupt stream") : err), buf.pos);
  }
  png_set_read_fn(png, &buf, detail::png_read_cb);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG: unsupported bit depth 16 (only 8-bit images are accepted)");
  }
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_channels(png, info) != 3 || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG: unsupported pixel layout");
  }
  pixels.resize(static_cast<std::size_t>(width) * height * 3);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<T> img(Shape{3, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<T>(pixels[(y * width + x) * 3 + c]) / static_cast<T>(255);
  return img;
}

inline std::uint8_t quantize_pixel(double v) {
  const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(q);
}

// 8-bit RGB PNG. Output bytes depend only on the pixel values.
template <std::floating_point T>
std::vector<std::uint8_t> encode_image(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("encode_image: expected 3 x H x W, got " + shape_str(img.shape()));
  const std::size_t height = img.dim(1), width = img.dim(2);
  std::vector<std::uint8_t> pixels(height * width * 3);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) pixels[(y * width + x) * 3 + c] = quantize_pixel(img.at(c, y, x));
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = pixels.data() + y * width * 3;

  std::vector<std::uint8_t> out;
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_cb, detail::png_warning_cb);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("PNG: cannot allocate encoder");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("PNG encode failed: " + err);
  }
  png_set_write_fn(png, &out, detail::png_write_cb, detail::png_flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Writes to a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path.string() + "': " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  write_file_atomic(path, bytes.data(), bytes.size());
}

template <std::floating_point T = float>
Tensor<T> load_image(const std::filesystem::path& path) {
  return decode_image<T>(read_file_bytes(path));
}

template <std::floating_point T>
void save_image(const std::filesystem::path& path, const Tensor<T>& img) {
  write_file_atomic(path, encode_image(img));
}

// Sorted list of *.png files in a directory.
inline std::vector<std::filesystem::path> list_png_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <std::floating_point T>
Tensor<T> crop(const Tensor<T>& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (img.rank() != 3 || y0 + h > img.dim(1) || x0 + w > img.dim(2)) {
    throw ShapeError("crop window exceeds image " + shape_str(img.shape()));
  }
  Tensor<T> out(Shape{img.dim(0), h, w});
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

// Bilinear resize with half-pixel centres.
template <std::floating_point T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t h, std::size_t w) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (H == h && W == w) return img;
  Tensor<T> out(Shape{C, h, w});
  const double sy = static_cast<double>(H) / h, sx = static_cast<double>(W) / w;
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, H - 1);
    const double ay = fy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, W - 1);
      const double ax = fx - x0;
      for (std::size_t c = 0; c < C; ++c) {
        const double top = img.at(c, y0, x0) * (1 - ax) + img.at(c, y0, x1) * ax;
        const double bot = img.at(c, y1, x0) * (1 - ax) + img.at(c, y1, x1) * ax;
        out.at(c, y, x) = static_cast<T>(top * (1 - ay) + bot * ay);
      }
    }
  }
  return out;
}

struct PaddedSize {
  std::size_t height, width;  // original size, for cropping back
};

// Reflect-pads bottom/right so both dims are multiples of `multiple`.
template <std::floating_point T>
Tensor<T> pad_reflect_to_multiple(const Tensor<T>& img, std::size_t multiple, PaddedSize* original = nullptr) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const std::size_t Hp = (H + multiple - 1) / multiple * multiple, Wp = (W + multiple - 1) / multiple * multiple;
  if (original) *original = {H, W};
  if (Hp == H && Wp == W) return img;
  auto reflect = [](std::size_t i, std::size_t n) {
    if (n == 1) return std::size_t{0};
    const std::size_t period = 2 * (n - 1);
    std::size_t r = i % period;
    return r < n ? r : period - r;
  };
  Tensor<T> out(Shape{C, Hp, Wp});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < Hp; ++y)
      for (std::size_t x = 0; x < Wp; ++x) out.at(c, y, x) = img.at(c, reflect(y, H), reflect(x, W));
  return out;
}

}  // namespace samst
