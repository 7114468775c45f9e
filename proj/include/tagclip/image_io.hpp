/*
 * Copyright 2026 The tagclip-cpp Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// 8-bit RGB images: PNG (libpng) and JPEG (libjpeg) decoding, PNG writing.

#ifndef TAGCLIP_IMAGE_IO_HPP_
#define TAGCLIP_IMAGE_IO_HPP_

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tagclip/errors.hpp"
#include "tagclip/numeric.hpp"

namespace tagclip {

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<uint8_t> pixels;  // row-major, RGB interleaved

  uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }
  uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
};

// Pixel values as floats in [0, 255].
inline Grid2D to_grid(const RgbImage& img) {
  Grid2D g(img.height, img.width, 3);
  auto d = g.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) d[i] = img.pixels[i];
  return g;
}

namespace detail {

inline RgbImage decode_png(const std::vector<uint8_t>& bytes, const std::string& label) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(ErrorKind::kInput, label + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::kInput, label + ": " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline RgbImage decode_jpeg(const std::vector<uint8_t>& bytes, const std::string& label) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.message[0] = '\0';
  RgbImage out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::kInput, label + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.pixels.resize(out.width * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + cinfo.output_scanline * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace detail

inline RgbImage decode_image(const std::vector<uint8_t>& bytes, const std::string& label) {
  static constexpr uint8_t kPng[] = {0x89, 'P', 'N', 'G'};
  RgbImage img;
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kPng, 4) == 0) {
    img = detail::decode_png(bytes, label);
  } else if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    img = detail::decode_jpeg(bytes, label);
  } else {
    fail(ErrorKind::kInput, label + ": not a PNG or JPEG image");
  }
  if (img.width == 0 || img.height == 0) fail(ErrorKind::kInput, label + ": empty image");
  return img;
}

inline RgbImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return decode_image(bytes, path.string());
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0,
                               nullptr)) {
    fail(ErrorKind::kIo, "cannot write " + path.string() + ": " + image.message);
  }
}

}  // namespace tagclip

#endif  // TAGCLIP_IMAGE_IO_HPP_
