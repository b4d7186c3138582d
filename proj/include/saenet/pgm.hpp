#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace saenet {

// 8-bit grayscale image, row-major.
struct PgmImage {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> pixels;
};

// Binary P5, maxval 255.
void write_pgm(const std::string& path, const PgmImage& img);
PgmImage read_pgm(const std::string& path);

} // namespace saenet
