#include "redformer/png_io.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>
#include <string>

namespace redformer::png {

void write(const std::filesystem::path& path, const RgbImage& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw std::runtime_error("png write '" + path.string() + "': bad image dimensions");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.rgb.data(), 0, nullptr))
    throw std::runtime_error("png write '" + path.string() + "': " + img.message);
}

RgbImage read(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw std::runtime_error("png read '" + path.string() + "': " + img.message);
  img.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("png read '" + path.string() + "': " + msg);
  }
  return out;
}

}  // namespace redformer::png
