#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "waveopt/tensor.hpp"

namespace waveopt {

// WOT1 tensor container: magic "WOT1", u32le rank, rank * u32le extents,
// row-major f32le payload. Round trips are bit-exact for float tensors.
namespace wot1 {

inline void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

inline std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::vector<std::uint8_t> encode(const Tensorf& t) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * t.rank() + 4 * t.numel());
  out.insert(out.end(), {'W', 'O', 'T', '1'});
  append_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t a = 0; a < t.rank(); ++a)
    append_u32(out, static_cast<std::uint32_t>(t.extent(a)));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    std::uint32_t bits;
    float v = t[i];
    std::memcpy(&bits, &v, 4);
    append_u32(out, bits);
  }
  return out;
}

inline Tensorf decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "WOT1", 4) != 0)
    throw IoError("not a WOT1 blob");
  std::uint32_t rank = read_u32(bytes.data() + 4);
  if (bytes.size() < 8 + 4ull * rank) throw IoError("truncated WOT1 header");
  Shape shape(rank);
  std::size_t off = 8;
  for (std::uint32_t a = 0; a < rank; ++a, off += 4) {
    shape[a] = read_u32(bytes.data() + off);
    if (shape[a] == 0) throw IoError("WOT1 extent is zero");
  }
  std::size_t n = shape_numel(shape);
  if (bytes.size() != off + 4 * n) throw IoError("WOT1 payload size mismatch");
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i, off += 4) {
    std::uint32_t bits = read_u32(bytes.data() + off);
    std::memcpy(&data[i], &bits, 4);
  }
  return Tensorf(std::move(shape), std::move(data));
}

}  // namespace wot1

inline void write_file(const std::filesystem::path& path,
                       const std::vector<std::uint8_t>& bytes) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open: " + path.string());
  auto size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw IoError("read failed: " + path.string());
  return bytes;
}

inline void save_wot1(const std::filesystem::path& path, const Tensorf& t) {
  write_file(path, wot1::encode(t));
}

inline Tensorf load_wot1(const std::filesystem::path& path) {
  return wot1::decode(read_file(path));
}

// 8-bit binary PGM (P5). Loads to [0,1]; stores round(clamp(v)*255).
inline void save_pgm(const std::filesystem::path& path, const Tensorf& img) {
  check_shape(img.rank() == 2, "save_pgm expects a (H,W) tensor");
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f << "P5\n" << img.extent(1) << " " << img.extent(0) << "\n255\n";
  for (std::size_t i = 0; i < img.numel(); ++i) {
    float v = std::min(1.0f, std::max(0.0f, img[i]));
    f.put(static_cast<char>(static_cast<int>(std::lround(v * 255.0f))));
  }
  if (!f) throw IoError("write failed: " + path.string());
}

inline Tensorf load_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5") throw IoError("not a binary PGM (P5): " + path.string());
  auto next_int = [&f, &path]() {
    // skip whitespace and '#' comment lines
    int c = f.get();
    while (c == '#' || std::isspace(c)) {
      if (c == '#')
        while (c != '\n' && c != EOF) c = f.get();
      c = f.get();
    }
    long v = 0;
    bool any = false;
    while (std::isdigit(c)) {
      v = v * 10 + (c - '0');
      any = true;
      c = f.get();
    }
    if (!any) throw IoError("malformed PGM header: " + path.string());
    return v;
  };
  long w = next_int();
  long h = next_int();
  long maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PGM: " + path.string());
  std::vector<float> data(static_cast<std::size_t>(w * h));
  for (auto& v : data) {
    int c = f.get();
    if (c == EOF) throw IoError("truncated PGM: " + path.string());
    v = static_cast<float>(c) / 255.0f;
  }
  return Tensorf({static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
                 std::move(data));
}

}  // namespace waveopt
