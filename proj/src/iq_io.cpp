#include "radioses/iq_io.hpp"

#include <cmath>

#include "radioses/detail/binio.hpp"

namespace radioses {

namespace {
constexpr char kMagic[4] = {'R', 'S', 'I', 'Q'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_iq(const std::string& path, const IqStream& s) {
  require(s.sample_rate > 0 && s.sample_rate == std::floor(s.sample_rate),
          "write_iq: sample rate must be a positive integer");
  std::ofstream f(path, std::ios::binary);
  require(bool(f), "write_iq: cannot open " + path);
  detail::w_magic(f, kMagic);
  detail::w_u32(f, kVersion);
  detail::w_u32(f, std::uint32_t(s.sample_rate));
  detail::w_u64(f, s.samples.size());
  std::vector<float> buf(2 * s.samples.size());
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    buf[2 * i] = float(s.samples[i].real());
    buf[2 * i + 1] = float(s.samples[i].imag());
  }
  detail::w_f32_block(f, buf.data(), buf.size());
  require(bool(f), "write_iq: write failed on " + path);
}

IqStream read_iq(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), "read_iq: cannot open " + path);
  detail::expect_magic(f, kMagic, "RSIQ");
  std::uint32_t version = detail::r_u32(f);
  require(version == kVersion, "read_iq: unsupported version in " + path);
  IqStream s;
  s.sample_rate = double(detail::r_u32(f));
  std::uint64_t n = detail::r_u64(f);
  std::vector<float> buf(2 * n);
  detail::r_f32_block(f, buf.data(), buf.size());
  s.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    s.samples[i] = {double(buf[2 * i]), double(buf[2 * i + 1])};
  return s;
}

}  // namespace radioses
