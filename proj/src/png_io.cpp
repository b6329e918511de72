#include "monoscene/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "monoscene/errors.hpp"

namespace monoscene {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

void read_gray(const std::filesystem::path& path, int want_depth, int& w, int& h,
               std::vector<std::uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(Errc::MissingFile, path.string());

  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) fail(Errc::IoError, "png_create_read_struct");
  r.info = png_create_info_struct(r.png);
  if (!r.info) fail(Errc::IoError, "png_create_info_struct");
  if (setjmp(png_jmpbuf(r.png))) fail(Errc::IoError, "png read error: " + path.string());

  png_init_io(r.png, fp.get());
  png_read_info(r.png, r.info);

  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (color != PNG_COLOR_TYPE_GRAY)
    fail(Errc::SchemaViolation, path.string() + ": expected single-channel grayscale PNG");
  if (depth != want_depth)
    fail(Errc::SchemaViolation, path.string() + ": expected " + std::to_string(want_depth) +
                                    "-bit PNG, got " + std::to_string(depth));
  if (want_depth == 16) png_set_swap(r.png);  // file is big-endian
  png_read_update_info(r.png, r.info);

  w = static_cast<int>(png_get_image_width(r.png, r.info));
  h = static_cast<int>(png_get_image_height(r.png, r.info));
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  bytes.assign(rowbytes * static_cast<std::size_t>(h), 0);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = bytes.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
}

void write_gray(const std::filesystem::path& path, int depth, int w, int h,
                const std::uint8_t* bytes, std::size_t rowbytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(Errc::IoError, "cannot open for write: " + path.string());

  PngWriter wr;
  wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!wr.png) fail(Errc::IoError, "png_create_write_struct");
  wr.info = png_create_info_struct(wr.png);
  if (!wr.info) fail(Errc::IoError, "png_create_info_struct");
  if (setjmp(png_jmpbuf(wr.png))) fail(Errc::IoError, "png write error: " + path.string());

  png_init_io(wr.png, fp.get());
  png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  if (depth == 16) png_set_swap(wr.png);

  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(bytes + rowbytes * static_cast<std::size_t>(y));
  png_write_image(wr.png, rows.data());
  png_write_end(wr.png, nullptr);
}

}  // namespace

GrayImage8 read_png_gray8(const std::filesystem::path& path) {
  GrayImage8 img;
  std::vector<std::uint8_t> bytes;
  read_gray(path, 8, img.width, img.height, bytes);
  img.pixels = std::move(bytes);
  return img;
}

GrayImage16 read_png_gray16(const std::filesystem::path& path) {
  GrayImage16 img;
  std::vector<std::uint8_t> bytes;
  read_gray(path, 16, img.width, img.height, bytes);
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  std::memcpy(img.pixels.data(), bytes.data(), bytes.size());
  return img;
}

void write_png_gray8(const std::filesystem::path& path, const GrayImage8& img) {
  write_gray(path, 8, img.width, img.height, img.pixels.data(),
             static_cast<std::size_t>(img.width));
}

void write_png_gray16(const std::filesystem::path& path, const GrayImage16& img) {
  write_gray(path, 16, img.width, img.height,
             reinterpret_cast<const std::uint8_t*>(img.pixels.data()),
             static_cast<std::size_t>(img.width) * 2);
}

}  // namespace monoscene
