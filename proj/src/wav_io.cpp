#include "radioses/wav_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace radioses {

namespace {

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& s, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(s, bits);
}

std::uint16_t get_u16(const std::string& s, std::size_t off) {
  return std::uint16_t(std::uint8_t(s[off])) |
         (std::uint16_t(std::uint8_t(s[off + 1])) << 8);
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 8) | std::uint8_t(s[off + std::size_t(i)]);
  return v;
}

}  // namespace

void write_wav(const std::string& path, const Waveform& w, WavFormat fmt) {
  require(w.sample_rate > 0 && w.sample_rate == std::floor(w.sample_rate),
          "write_wav: sample rate must be a positive integer");
  const bool f32 = fmt == WavFormat::float32;
  const std::uint16_t bytes_per = f32 ? 4 : 2;
  const std::uint32_t data_len =
      std::uint32_t(w.samples.size()) * bytes_per;
  const std::uint32_t rate = std::uint32_t(w.sample_rate);

  std::string s;
  s.reserve(44 + data_len);
  s += "RIFF";
  put_u32(s, 36 + data_len);
  s += "WAVEfmt ";
  put_u32(s, 16);
  put_u16(s, f32 ? 3 : 1);  // IEEE float / PCM
  put_u16(s, 1);            // mono
  put_u32(s, rate);
  put_u32(s, rate * bytes_per);
  put_u16(s, bytes_per);
  put_u16(s, std::uint16_t(8 * bytes_per));
  s += "data";
  put_u32(s, data_len);
  for (double v : w.samples) {
    if (f32) {
      put_f32(s, float(v));
    } else {
      double c = std::clamp(v, -1.0, 1.0);
      auto q = std::int16_t(std::lrint(c * 32767.0));
      put_u16(s, std::uint16_t(q));
    }
  }

  std::ofstream f(path, std::ios::binary);
  require(bool(f), "write_wav: cannot open " + path);
  f.write(s.data(), std::streamsize(s.size()));
  require(bool(f), "write_wav: write failed on " + path);
}

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), "read_wav: cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(f)),
                std::istreambuf_iterator<char>());
  require(s.size() >= 44 && s.compare(0, 4, "RIFF") == 0 &&
              s.compare(8, 4, "WAVE") == 0,
          "read_wav: not a RIFF/WAVE file: " + path);

  std::uint16_t audio_fmt = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  std::size_t off = 12;
  while (off + 8 <= s.size()) {
    std::string id = s.substr(off, 4);
    std::uint32_t len = get_u32(s, off + 4);
    std::size_t body = off + 8;
    require(body + len <= s.size(), "read_wav: truncated chunk in " + path);
    if (id == "fmt ") {
      require(len >= 16, "read_wav: bad fmt chunk");
      audio_fmt = get_u16(s, body);
      channels = get_u16(s, body + 2);
      rate = get_u32(s, body + 4);
      bits = get_u16(s, body + 14);
    } else if (id == "data") {
      data_off = body;
      data_len = len;
    }
    off = body + len + (len & 1);  // chunks are word-aligned
  }
  require(channels == 1, "read_wav: only mono supported: " + path);
  require((audio_fmt == 1 && bits == 16) || (audio_fmt == 3 && bits == 32),
          "read_wav: only PCM16 or float32 supported: " + path);
  require(data_off != 0, "read_wav: missing data chunk: " + path);

  Waveform w;
  w.sample_rate = double(rate);
  if (audio_fmt == 1) {
    w.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      auto q = std::int16_t(get_u16(s, data_off + 2 * i));
      w.samples[i] = double(q) / 32767.0;
    }
  } else {
    w.samples.resize(data_len / 4);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      std::uint32_t bitsv = get_u32(s, data_off + 4 * i);
      float v;
      std::memcpy(&v, &bitsv, 4);
      w.samples[i] = double(v);
    }
  }
  return w;
}

}  // namespace radioses
