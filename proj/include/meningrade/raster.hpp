#pragma once

// 8-bit interleaved rasters and PNG codec (libpng).

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "meningrade/core.hpp"

namespace meningrade {

struct Raster {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  Raster() = default;
  Raster(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {}

  bool empty() const { return width == 0 || height == 0; }

  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
           static_cast<std::size_t>(channels);
  }
  std::uint8_t* px(int x, int y) { return data.data() + offset(x, y); }
  const std::uint8_t* px(int x, int y) const { return data.data() + offset(x, y); }

  std::span<std::uint8_t> row(int y) {
    return {data.data() + offset(0, y), static_cast<std::size_t>(width * channels)};
  }
  std::span<const std::uint8_t> row(int y) const {
    return {data.data() + offset(0, y), static_cast<std::size_t>(width * channels)};
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

// Mean over every channel of every pixel.
inline double mean_value(const Raster& r) {
  if (r.data.empty()) return 0.0;
  std::uint64_t sum = 0;
  for (auto v : r.data) sum += v;
  return static_cast<double>(sum) / static_cast<double>(r.data.size());
}

inline Raster crop(const Raster& src, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > src.width || y + h > src.height)
    throw Error(ErrorCode::out_of_range, "crop outside raster");
  Raster out(w, h, src.channels);
  const auto row_bytes = static_cast<std::size_t>(w * src.channels);
  for (int r = 0; r < h; ++r) {
    std::copy_n(src.px(x, y + r), row_bytes, out.px(0, r));
  }
  return out;
}

namespace detail {

struct PngMemoryReader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

inline void png_read_from_memory(png_structp png, png_bytep out, png_size_t count) {
  auto* reader = static_cast<PngMemoryReader*>(png_get_io_ptr(png));
  if (reader->pos + count > reader->bytes.size()) png_error(png, "truncated PNG");
  std::copy_n(reader->bytes.data() + reader->pos, count, out);
  reader->pos += count;
}

inline void png_write_to_vector(png_structp png, png_bytep in, png_size_t count) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + count);
}

inline void png_flush_noop(png_structp) {}

}  // namespace detail

// Decodes a PNG into 8-bit gray (1 channel) or RGB (3 channels). Alpha is
// dropped and palettes are expanded.
inline Raster decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw Error(ErrorCode::unreadable_source, "not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw Error(ErrorCode::unreadable_source, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorCode::unreadable_source, "png_create_info_struct failed");
  }
  Raster out;
  std::vector<png_bytep> rows;
  detail::PngMemoryReader reader{bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::unreadable_source, "corrupt PNG stream");
  }
  png_set_read_fn(png, &reader, detail::png_read_from_memory);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = channels;
  out.data.assign(static_cast<std::size_t>(out.width) * out.height * channels, 0);
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.px(0, y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (out.channels != 1 && out.channels != 3)
    throw Error(ErrorCode::unsupported, "unsupported PNG channel layout");
  return out;
}

// Deterministic encoding: fixed compression level, no timestamps or text chunks.
inline std::vector<std::uint8_t> encode_png(const Raster& r, int compression_level = 1) {
  if (r.empty()) throw Error(ErrorCode::contract, "cannot encode empty raster");
  if (r.channels != 1 && r.channels != 3) throw Error(ErrorCode::unsupported, "PNG needs 1 or 3 channels");
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw Error(ErrorCode::unreadable_source, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::unreadable_source, "png_create_info_struct failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(r.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::unreadable_source, "PNG encode failed");
  }
  png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
  png_set_compression_level(png, compression_level);
  png_set_filter(png, 0, PNG_FILTER_SUB);
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8,
               r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < r.height; ++y) rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(r.px(0, y));
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_file, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::unreadable_source, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Raster read_png(const std::filesystem::path& path) { return decode_png(read_binary_file(path)); }

inline void write_png(const std::filesystem::path& path, const Raster& r, int compression_level = 1) {
  write_binary_file(path, encode_png(r, compression_level));
}

// Reads only the IHDR dimensions.
inline std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_file, "cannot open " + path.string());
  std::array<std::uint8_t, 24> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  if (in.gcount() != static_cast<std::streamsize>(head.size()) || png_sig_cmp(head.data(), 0, 8) != 0)
    throw Error(ErrorCode::unreadable_source, "not a PNG file: " + path.string());
  auto be32 = [&](std::size_t o) {
    return (static_cast<std::uint32_t>(head[o]) << 24) | (static_cast<std::uint32_t>(head[o + 1]) << 16) |
           (static_cast<std::uint32_t>(head[o + 2]) << 8) | static_cast<std::uint32_t>(head[o + 3]);
  };
  return {static_cast<int>(be32(16)), static_cast<int>(be32(20))};
}

}  // namespace meningrade
