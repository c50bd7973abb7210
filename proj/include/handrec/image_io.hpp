#pragma once

#include <fstream>

#include "handrec/tensor.hpp"

// Minimal binary PPM/PGM readers and writers for the CLI surfaces.
namespace handrec {

// (3,H,W) values in [0,1] -> binary P6
inline void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.shape[0] != 3)
    throw_invalid("write_ppm: expects a (3,H,W) image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("write_ppm: cannot open " + path);
  int H = image.shape[1], W = image.shape[2];
  out << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(size_t(W) * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        Real v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        row[size_t(x) * 3 + size_t(c)] = (unsigned char)(v * 255.0 + 0.5);
      }
    out.write(reinterpret_cast<const char*>(row.data()),
              std::streamsize(row.size()));
  }
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw_data("read_ppm: not a binary P6 file: " + path);
  auto next_int = [&]() {
    int v;
    while (in >> std::ws && in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
    }
    if (!(in >> v)) throw_data("read_ppm: truncated header in " + path);
    return v;
  };
  int W = next_int(), H = next_int(), maxv = next_int();
  in.get();  // single whitespace after header
  if (maxv <= 0 || maxv > 255) throw_data("read_ppm: unsupported depth");
  std::vector<unsigned char> raw(size_t(W) * size_t(H) * 3);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (in.gcount() != std::streamsize(raw.size()))
    throw_data("read_ppm: truncated pixel data in " + path);
  Tensor img({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            Real(raw[(size_t(y) * W + size_t(x)) * 3 + size_t(c)]) / maxv;
  return img;
}

// single channel in [0,1] -> binary P5
inline void write_pgm(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw_invalid("write_pgm: expects (H,W)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("write_pgm: cannot open " + path);
  int H = map.shape[0], W = map.shape[1];
  out << "P5\n" << W << " " << H << "\n255\n";
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      unsigned char v =
          (unsigned char)(std::clamp(map.at(y, x), 0.0, 1.0) * 255.0 + 0.5);
      out.write(reinterpret_cast<const char*>(&v), 1);
    }
}

}  // namespace handrec
