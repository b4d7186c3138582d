#include "saenet/pgm.hpp"

#include <cctype>
#include <fstream>

#include "saenet/error.hpp"

namespace saenet {

void write_pgm(const std::string& path, const PgmImage& img) {
  if (img.width <= 0 || img.height <= 0)
    throw DimensionError("pgm: image dimensions must be positive, got " +
                         std::to_string(img.width) + "x" + std::to_string(img.height));
  if (static_cast<int64_t>(img.pixels.size()) != img.width * img.height)
    throw DimensionError("pgm: pixel buffer holds " + std::to_string(img.pixels.size()) +
                         " bytes, expected " + std::to_string(img.width * img.height));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("pgm: cannot open " + path + " for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("pgm: short write to " + path);
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

int64_t parse_dim(const std::string& tok, const std::string& what, const std::string& path) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError("pgm: bad " + what + " '" + tok + "' in " + path);
  }
}

} // namespace

PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("pgm: cannot open " + path);
  if (next_token(in) != "P5") throw FormatError("pgm: " + path + " is not binary P5");
  PgmImage img;
  img.width = parse_dim(next_token(in), "width", path);
  img.height = parse_dim(next_token(in), "height", path);
  int64_t maxval = parse_dim(next_token(in), "maxval", path);
  if (maxval != 255)
    throw FormatError("pgm: " + path + " has maxval " + std::to_string(maxval) +
                      ", only 255 is supported");
  img.pixels.resize(static_cast<size_t>(img.width * img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw FormatError("pgm: " + path + " truncated, expected " +
                      std::to_string(img.pixels.size()) + " pixel bytes, got " +
                      std::to_string(in.gcount()));
  return img;
}

} // namespace saenet
