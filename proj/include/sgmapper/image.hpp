// sgmapper - minimal image containers and PNG I/O (8-bit RGB color,
// 16-bit single-channel depth), plus the mask/crop operations the
// ingest and captioning stages need.

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgmapper {

/// Interleaved 8-bit RGB image.
struct ImageRgb {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // size = width*height*3

  ImageRgb() = default;
  ImageRgb(int w, int h, std::uint8_t fill = 0) : width(w), height(h), data(std::size_t(w) * h * 3, fill) {}

  std::uint8_t* px(int x, int y) { return data.data() + 3 * (std::size_t(y) * width + x); }
  const std::uint8_t* px(int x, int y) const { return data.data() + 3 * (std::size_t(y) * width + x); }
  bool empty() const { return data.empty(); }
};

/// Single-channel 16-bit image (raw depth units).
struct ImageDepth16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> data;  // size = width*height

  ImageDepth16() = default;
  ImageDepth16(int w, int h, std::uint16_t fill = 0) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  std::uint16_t& at(int x, int y) { return data[std::size_t(y) * width + x]; }
  std::uint16_t at(int x, int y) const { return data[std::size_t(y) * width + x]; }
};

/// Single-channel 8-bit image (mask/id maps).
struct ImageGray8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  ImageGray8() = default;
  ImageGray8(int w, int h, std::uint8_t fill = 0) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return data[std::size_t(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[std::size_t(y) * width + x]; }
};

// ============================================================================
// PNG I/O
// ============================================================================

namespace detail {

struct PngFile {
  std::FILE* fp = nullptr;
  explicit PngFile(const std::string& path, const char* mode) : fp(std::fopen(path.c_str(), mode)) {
    if (!fp) throw std::runtime_error("cannot open png: " + path);
  }
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
  PngFile(const PngFile&) = delete;
  PngFile& operator=(const PngFile&) = delete;
};

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) throw std::runtime_error("libpng init failed");
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) throw std::runtime_error("libpng init failed");
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

}  // namespace detail

inline void write_png(const std::string& path, const ImageRgb& img) {
  detail::PngFile file(path, "wb");
  detail::PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("png write failed: " + path);
  png_init_io(w.png, file.fp);
  png_set_IHDR(w.png, w.info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + std::size_t(y) * img.width * 3);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

inline void write_png(const std::string& path, const ImageDepth16& img) {
  detail::PngFile file(path, "wb");
  detail::PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("png write failed: " + path);
  png_init_io(w.png, file.fp);
  png_set_IHDR(w.png, w.info, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_set_swap(w.png);  // PNG stores 16-bit big-endian
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(img.data.data() + std::size_t(y) * img.width));
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

inline void write_png(const std::string& path, const ImageGray8& img) {
  detail::PngFile file(path, "wb");
  detail::PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("png write failed: " + path);
  png_init_io(w.png, file.fp);
  png_set_IHDR(w.png, w.info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + std::size_t(y) * img.width);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

inline ImageRgb read_png_rgb(const std::string& path) {
  detail::PngFile file(path, "rb");
  detail::PngReader r;
  if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("png read failed: " + path);
  png_init_io(r.png, file.fp);
  png_read_info(r.png, r.info);
  png_set_expand(r.png);
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_set_gray_to_rgb(r.png);
  png_read_update_info(r.png, r.info);
  ImageRgb img(static_cast<int>(png_get_image_width(r.png, r.info)),
               static_cast<int>(png_get_image_height(r.png, r.info)));
  if (png_get_rowbytes(r.png, r.info) != std::size_t(img.width) * 3)
    throw std::runtime_error("unexpected png layout: " + path);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.data.data() + std::size_t(y) * img.width * 3;
  png_read_image(r.png, rows.data());
  return img;
}

inline ImageDepth16 read_png_depth16(const std::string& path) {
  detail::PngFile file(path, "rb");
  detail::PngReader r;
  if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("png read failed: " + path);
  png_init_io(r.png, file.fp);
  png_read_info(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (color != PNG_COLOR_TYPE_GRAY) throw std::runtime_error("depth png must be single channel: " + path);
  if (depth < 16) png_set_expand_16(r.png);
  png_set_swap(r.png);
  png_read_update_info(r.png, r.info);
  ImageDepth16 img(static_cast<int>(png_get_image_width(r.png, r.info)),
                   static_cast<int>(png_get_image_height(r.png, r.info)));
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(img.data.data() + std::size_t(y) * img.width);
  png_read_image(r.png, rows.data());
  return img;
}

inline ImageGray8 read_png_gray8(const std::string& path) {
  detail::PngFile file(path, "rb");
  detail::PngReader r;
  if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("png read failed: " + path);
  png_init_io(r.png, file.fp);
  png_read_info(r.png, r.info);
  png_set_expand(r.png);
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  if (png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY)
    throw std::runtime_error("expected grayscale png: " + path);
  png_read_update_info(r.png, r.info);
  ImageGray8 img(static_cast<int>(png_get_image_width(r.png, r.info)),
                 static_cast<int>(png_get_image_height(r.png, r.info)));
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.data.data() + std::size_t(y) * img.width;
  png_read_image(r.png, rows.data());
  return img;
}

/// PNG-encode to memory (provider wire format and cache keys).
inline std::vector<std::uint8_t> encode_png(const ImageRgb& img) {
  detail::PngWriter w;
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("png encode failed");
  png_set_write_fn(
      w.png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        buf->insert(buf->end(), data, data + len);
      },
      nullptr);
  png_set_IHDR(w.png, w.info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + std::size_t(y) * img.width * 3);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
  return out;
}

// ============================================================================
// Pixel operations
// ============================================================================

/// 4-neighborhood binary erosion; border pixels erode against the outside.
inline std::vector<bool> erode_mask(const std::vector<bool>& mask, int width, int height) {
  std::vector<bool> out(mask.size(), false);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto at = [&](int xx, int yy) {
        return xx >= 0 && xx < width && yy >= 0 && yy < height && mask[std::size_t(yy) * width + xx];
      };
      out[std::size_t(y) * width + x] =
          at(x, y) && at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1);
    }
  return out;
}

inline ImageRgb crop_image(const ImageRgb& img, int x0, int y0, int w, int h) {
  x0 = std::clamp(x0, 0, img.width - 1);
  y0 = std::clamp(y0, 0, img.height - 1);
  w = std::clamp(w, 1, img.width - x0);
  h = std::clamp(h, 1, img.height - y0);
  ImageRgb out(w, h);
  for (int y = 0; y < h; ++y)
    std::copy_n(img.px(x0, y0 + y), std::size_t(w) * 3, out.px(0, y));
  return out;
}

/// Nearest-neighbor resize.
inline ImageRgb resize_image(const ImageRgb& img, int w, int h) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("resize target must be positive");
  ImageRgb out(w, h);
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(img.height - 1, static_cast<int>((y + 0.5) * img.height / h));
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(img.width - 1, static_cast<int>((x + 0.5) * img.width / w));
      std::copy_n(img.px(sx, sy), 3, out.px(x, y));
    }
  }
  return out;
}

/// Horizontal concatenation; right image is scaled to the left image's
/// height preserving aspect ratio.
inline ImageRgb hconcat_scaled(const ImageRgb& left, const ImageRgb& right) {
  if (left.empty()) throw std::invalid_argument("left image is empty");
  if (right.empty()) throw std::invalid_argument("right image is empty");
  ImageRgb scaled = right;
  if (right.height != left.height) {
    const int w = std::max(1, static_cast<int>(std::lround(
                                  double(right.width) * left.height / right.height)));
    scaled = resize_image(right, w, left.height);
  }
  ImageRgb out(left.width + scaled.width, left.height);
  for (int y = 0; y < left.height; ++y) {
    std::copy_n(left.px(0, y), std::size_t(left.width) * 3, out.px(0, y));
    std::copy_n(scaled.px(0, y), std::size_t(scaled.width) * 3, out.px(left.width, y));
  }
  return out;
}

}  // namespace sgmapper
