#pragma once

// Mono WAV reading/writing. Writes IEEE float32; reads float32 and PCM16.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "igsed/common.hpp"

namespace igsed::wav {

struct WavData {
  std::vector<double> samples;
  std::uint32_t sample_rate = 0;
};

namespace detail {
inline void put_u32(std::vector<char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::vector<char>& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}
inline void put_tag(std::vector<char>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }
inline std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}
inline std::uint16_t get_u16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                    (static_cast<unsigned char>(p[1]) << 8));
}
}  // namespace detail

inline void write_float32(const std::filesystem::path& path, std::span<const double> samples,
                          std::uint32_t sample_rate) {
  using namespace detail;
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 4);
  std::vector<char> b;
  b.reserve(58 + data_bytes);
  put_tag(b, "RIFF");
  put_u32(b, 50 + data_bytes);
  put_tag(b, "WAVE");
  put_tag(b, "fmt ");
  put_u32(b, 18);
  put_u16(b, 3);  // WAVE_FORMAT_IEEE_FLOAT
  put_u16(b, 1);
  put_u32(b, sample_rate);
  put_u32(b, sample_rate * 4);
  put_u16(b, 4);
  put_u16(b, 32);
  put_u16(b, 0);
  put_tag(b, "fact");
  put_u32(b, 4);
  put_u32(b, static_cast<std::uint32_t>(samples.size()));
  put_tag(b, "data");
  put_u32(b, data_bytes);
  for (double s : samples) {
    float f = static_cast<float>(s);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(b, bits);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline WavData read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) { return IoError(path.string() + ": " + why); };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  WavData out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const char* tag = b.data() + pos;
    std::uint32_t len = detail::get_u32(b.data() + pos + 4);
    std::size_t body = pos + 8;
    if (body + len > b.size()) throw fail("truncated chunk");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (len < 16) throw fail("short fmt chunk");
      format = detail::get_u16(b.data() + body);
      channels = detail::get_u16(b.data() + body + 2);
      out.sample_rate = detail::get_u32(b.data() + body + 4);
      bits = detail::get_u16(b.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (channels != 1) throw fail("only mono audio is supported");
      if (format == 3 && bits == 32) {
        out.samples.resize(len / 4);
        for (std::size_t i = 0; i < out.samples.size(); ++i) {
          std::uint32_t u = detail::get_u32(b.data() + body + 4 * i);
          float f;
          std::memcpy(&f, &u, 4);
          out.samples[i] = f;
        }
      } else if (format == 1 && bits == 16) {
        out.samples.resize(len / 2);
        for (std::size_t i = 0; i < out.samples.size(); ++i)
          out.samples[i] =
              static_cast<std::int16_t>(detail::get_u16(b.data() + body + 2 * i)) / 32768.0;
      } else {
        throw fail("unsupported sample format " + std::to_string(format) + "/" +
                   std::to_string(bits) + " bit");
      }
      return out;
    }
    pos = body + len + (len & 1);
  }
  throw fail("no data chunk");
}

}  // namespace igsed::wav
