#pragma once

// Anomaly map output: grayscale PFM ("Pf", scale -1.0 = little-endian,
// rows stored bottom to top as the format prescribes) and an 8-bit PGM
// preview quantizing [0,1] linearly to [0,255].

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>

#include "anomhead/binary_io.hpp"
#include "anomhead/numerics.hpp"

namespace anomhead {

inline std::vector<std::uint8_t> encode_pfm(const ScoreGrid& map) {
  ByteWriter w;
  w.tag("Pf\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n-1.0\n");
  for (std::size_t r = map.height; r > 0; --r) {
    for (std::size_t c = 0; c < map.width; ++c) w.f32(static_cast<float>(map.at(r - 1, c)));
  }
  return w.buffer();
}

inline ScoreGrid decode_pfm(std::span<const std::uint8_t> bytes, const std::string& source) {
  // Header is three whitespace-terminated tokens after "Pf".
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "Pf") throw FormatError(source + ": not a grayscale PFM at byte 0");
  std::size_t w = 0;
  std::size_t h = 0;
  double scale = 0.0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    scale = std::stod(token());
  } catch (const std::logic_error&) {
    throw FormatError(source + ": malformed PFM header at byte " + std::to_string(pos));
  }
  if (scale >= 0.0) throw FormatError(source + ": only little-endian PFM (negative scale) is supported");
  ++pos;  // single whitespace byte before the raster
  ByteReader r(bytes.subspan(std::min(pos, bytes.size())), source);
  if (w != 0 && h > r.remaining() / 4 / w) throw FormatError(source + ": truncated PFM raster");
  ScoreGrid g(h, w);
  for (std::size_t row = h; row > 0; --row) {
    for (std::size_t c = 0; c < w; ++c) g.at(row - 1, c) = r.f32("pfm raster");
  }
  r.expect_end();
  return g;
}

inline std::vector<std::uint8_t> encode_pgm(const ScoreGrid& map) {
  ByteWriter w;
  w.tag("P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n");
  for (double v : map.values) w.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return w.buffer();
}

inline void write_pfm(const ScoreGrid& map, const std::filesystem::path& path) { write_file_bytes(path, encode_pfm(map)); }
inline ScoreGrid read_pfm(const std::filesystem::path& path) { return decode_pfm(read_file_bytes(path), path.string()); }
inline void write_pgm(const ScoreGrid& map, const std::filesystem::path& path) { write_file_bytes(path, encode_pgm(map)); }

}  // namespace anomhead
