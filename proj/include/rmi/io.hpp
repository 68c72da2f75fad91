#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "rmi/errors.hpp"
#include "rmi/tensor.hpp"

namespace rmi {

// RMT1 tensor file: magic "RMT1", u32 LE rank, rank x u64 LE dims,
// then the row-major payload as f64 LE.

inline void write_rmt1(std::ostream& os, const DenseTensor& t) {
  os.write("RMT1", 4);
  const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), 4);
  for (std::size_t i = 0; i < t.rank(); ++i) {
    const std::uint64_t d = t.dim(i);
    os.write(reinterpret_cast<const char*>(&d), 8);
  }
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw IoError("RMT1: write failed");
}

inline void write_rmt1(const std::string& path, const DenseTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("RMT1: cannot open for writing: " + path);
  write_rmt1(os, t);
}

inline DenseTensor read_rmt1(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RMT1", 4) != 0) {
    throw IoError("RMT1: bad magic");
  }
  std::uint32_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), 4);
  if (!is || rank > 8) throw IoError("RMT1: bad rank");
  std::vector<std::size_t> shape(rank);
  std::size_t total = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint64_t d = 0;
    is.read(reinterpret_cast<char*>(&d), 8);
    if (!is || d == 0 || d > (1ULL << 32)) throw IoError("RMT1: bad dim");
    shape[i] = static_cast<std::size_t>(d);
    total *= shape[i];
  }
  std::vector<double> data(total);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(total * sizeof(double)));
  if (!is) throw IoError("RMT1: truncated payload");
  return DenseTensor::from_data(std::move(shape), std::move(data));
}

inline DenseTensor read_rmt1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("RMT1: cannot open: " + path);
  return read_rmt1(is);
}

namespace detail {
inline int pgm_token(std::istream& is) {
  // Skips whitespace and '#' comments, returns the next integer.
  int c = is.get();
  while (is) {
    if (c == '#') {
      while (is && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  int value = 0;
  bool any = false;
  while (is && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw IoError("PGM: malformed header");
  return value;
}
}  // namespace detail

/// Reads one binary (P5) 8-bit PGM image as an H x W tensor of the raw
/// pixel values. Returns false if the stream is at EOF.
inline bool read_pgm(std::istream& is, DenseTensor& out) {
  int c = is.peek();
  while (is && std::isspace(c)) {
    is.get();
    c = is.peek();
  }
  if (!is || c == std::char_traits<char>::eof()) return false;
  char p, five;
  is.get(p);
  is.get(five);
  if (!is || p != 'P' || five != '5') throw IoError("PGM: expected P5 magic");
  const int w = detail::pgm_token(is);
  const int h = detail::pgm_token(is);
  const int maxval = detail::pgm_token(is);
  if (maxval <= 0 || maxval > 255) throw IoError("PGM: only 8-bit supported");
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (!is) throw IoError("PGM: truncated pixel data");
  std::vector<double> data(raw.begin(), raw.end());
  out = DenseTensor::from_data(
      {static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
      std::move(data));
  return true;
}

/// Reads a stack of concatenated P5 images into a B x H x W tensor.
/// All images must share the same size.
inline DenseTensor read_pgm_stack(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("PGM: cannot open: " + path);
  std::vector<DenseTensor> frames;
  DenseTensor frame;
  while (read_pgm(is, frame)) frames.push_back(frame);
  if (frames.empty()) throw IoError("PGM: no images in " + path);
  const std::size_t h = frames[0].dim(0), w = frames[0].dim(1);
  DenseTensor stack({frames.size(), h, w});
  for (std::size_t b = 0; b < frames.size(); ++b) {
    if (frames[b].dim(0) != h || frames[b].dim(1) != w) {
      throw ShapeMismatch("PGM stack: image sizes differ");
    }
    std::copy(frames[b].data(), frames[b].data() + h * w,
              stack.data() + b * h * w);
  }
  return stack;
}

}  // namespace rmi
