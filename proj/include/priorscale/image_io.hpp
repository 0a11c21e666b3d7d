#pragma once

// Lossless 8-bit PNG reading and writing. Files are written to a temporary
// sibling and renamed into place, so a failed run never leaves a partial file.

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "priorscale/errors.hpp"
#include "priorscale/tensor.hpp"

namespace priorscale {

class ImageIoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

struct PngReadHandle {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadHandle() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteHandle {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteHandle() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

inline void png_error_fn(png_structp, png_const_charp msg) { throw ImageIoError(msg); }
inline void png_warning_fn(png_structp, png_const_charp) {}

inline std::uint8_t quantize(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline void write_png_stream(png_structp png, png_infop info, const Image& image) {
  const int channels = image.channels();
  if (channels != 1 && channels != 3) {
    throw ImageIoError("PNG output supports 1 or 3 channels, got " + std::to_string(channels));
  }
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()),
               static_cast<png_uint_32>(image.height()), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width()) * channels);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        row[static_cast<std::size_t>(x) * channels + c] = quantize(image(c, y, x));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

}  // namespace detail

// Reads any PNG as 3-channel RGB in [0, 1]; alpha is discarded and 16-bit
// samples are reduced to 8 bits.
inline Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageIoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ImageIoError(path.string() + " is not a PNG file");
  }
  detail::PngReadHandle h;
  h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                 detail::png_warning_fn);
  if (!h.png) throw ImageIoError("png_create_read_struct failed");
  h.info = png_create_info_struct(h.png);
  if (!h.info) throw ImageIoError("png_create_info_struct failed");
  png_init_io(h.png, file.get());
  png_set_sig_bytes(h.png, 8);
  png_read_info(h.png, h.info);
  png_set_strip_16(h.png);
  png_set_strip_alpha(h.png);
  png_set_packing(h.png);
  png_set_palette_to_rgb(h.png);
  png_set_expand_gray_1_2_4_to_8(h.png);
  png_set_gray_to_rgb(h.png);
  png_read_update_info(h.png, h.info);
  const int width = static_cast<int>(png_get_image_width(h.png, h.info));
  const int height = static_cast<int>(png_get_image_height(h.png, h.info));
  const std::size_t rowbytes = png_get_rowbytes(h.png, h.info);
  if (rowbytes != static_cast<std::size_t>(width) * 3) {
    throw ImageIoError("unsupported PNG layout in " + path.string());
  }
  std::vector<std::uint8_t> buffer(rowbytes * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * y;
  png_read_image(h.png, rows.data());
  png_read_end(h.png, nullptr);
  Image img(3, height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        img(c, y, x) = buffer[rowbytes * y + static_cast<std::size_t>(x) * 3 + c] / 255.0f;
      }
    }
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& image) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::unique_ptr<std::FILE, detail::FileCloser> file(std::fopen(tmp.c_str(), "wb"));
    if (!file) throw ImageIoError("cannot create " + tmp.string());
    try {
      detail::PngWriteHandle h;
      h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                      detail::png_warning_fn);
      if (!h.png) throw ImageIoError("png_create_write_struct failed");
      h.info = png_create_info_struct(h.png);
      if (!h.info) throw ImageIoError("png_create_info_struct failed");
      png_init_io(h.png, file.get());
      detail::write_png_stream(h.png, h.info, image);
      if (std::fflush(file.get()) != 0) throw ImageIoError("flush failed for " + tmp.string());
    } catch (...) {
      file.reset();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw;
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw ImageIoError("cannot move output into place at " + path.string());
  }
}

// In-memory PNG encoding, used to ship regional crops to a captioning service.
inline std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> bytes;
  detail::PngWriteHandle h;
  h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                  detail::png_warning_fn);
  if (!h.png) throw ImageIoError("png_create_write_struct failed");
  h.info = png_create_info_struct(h.png);
  if (!h.info) throw ImageIoError("png_create_info_struct failed");
  png_set_write_fn(
      h.png, &bytes,
      [](png_structp p, png_bytep data, png_size_t len) {
        auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        out->insert(out->end(), data, data + len);
      },
      [](png_structp) {});
  detail::write_png_stream(h.png, h.info, image);
  return bytes;
}

}  // namespace priorscale
