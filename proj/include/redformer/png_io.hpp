#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace redformer::png {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, interleaved
};

// Throws std::runtime_error naming the path on failure.
void write(const std::filesystem::path& path, const RgbImage& image);
RgbImage read(const std::filesystem::path& path);

}  // namespace redformer::png
