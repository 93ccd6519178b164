#include "radioses/signal.hpp"

#include <algorithm>
#include <cmath>

namespace radioses {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// ---------------------------------------------------------------------------
// FFT

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_inplace(std::vector<cdouble>& x, bool inverse) {
  const std::size_t n = x.size();
  require(n > 0 && (n & (n - 1)) == 0, "fft: length must be a power of two");
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * kPi / double(len);
    const cdouble wlen = std::polar(1.0, ang);
    for (std::size_t i = 0; i < n; i += len) {
      cdouble w{1.0, 0.0};
      for (std::size_t k = 0; k < len / 2; ++k) {
        cdouble u = x[i + k];
        cdouble v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / double(n);
    for (auto& v : x) v *= inv;
  }
}

std::vector<cdouble> fft(const std::vector<cdouble>& x) {
  std::vector<cdouble> y = x;
  fft_inplace(y, false);
  return y;
}

std::vector<cdouble> ifft(const std::vector<cdouble>& x) {
  std::vector<cdouble> y = x;
  fft_inplace(y, true);
  return y;
}

// ---------------------------------------------------------------------------
// Butterworth design

bool Sos::stable() const {
  for (const auto& s : sections) {
    // Poles of z^2 + a1 z + a2 inside the unit circle.
    if (!(s.a2 < 1.0 && std::abs(s.a1) < 1.0 + s.a2)) return false;
  }
  return true;
}

cdouble Sos::response(double w) const {
  const cdouble z1 = std::polar(1.0, -w);   // z^-1
  const cdouble z2 = z1 * z1;
  cdouble h{1.0, 0.0};
  for (const auto& s : sections)
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

namespace {

// Analog Butterworth prototype poles (unit cutoff, left half plane),
// returned as one representative per conjugate pair. Even orders only.
std::vector<cdouble> proto_pole_pairs(int order) {
  require(order >= 2 && order % 2 == 0, "butterworth: order must be even");
  std::vector<cdouble> pairs;
  for (int k = 0; k < order / 2; ++k) {
    double theta = kPi * (2.0 * k + 1.0) / (2.0 * order) + kPi / 2.0;
    pairs.push_back(std::polar(1.0, theta));  // Im > 0 half of each pair
  }
  return pairs;
}

Sos butter_design(int order, double cutoff_hz, double fs, bool highpass) {
  require(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0,
          "butterworth: cutoff must lie inside (0, fs/2)");
  const double K = 2.0 * fs;
  const double warped = K * std::tan(kPi * cutoff_hz / fs);
  Sos out;
  for (cdouble p : proto_pole_pairs(order)) {
    cdouble pa = highpass ? warped / p : warped * p;   // analog pole
    cdouble zp = (K + pa) / (K - pa);                  // bilinear transform
    double a1 = -2.0 * zp.real();
    double a2 = std::norm(zp);
    // Zeros land at z=-1 (low-pass) or z=+1 (high-pass); normalize each
    // section to unit gain at DC resp. Nyquist.
    double g = highpass ? (1.0 - a1 + a2) / 4.0 : (1.0 + a1 + a2) / 4.0;
    double sgn = highpass ? -1.0 : 1.0;
    out.sections.push_back({g, sgn * 2.0 * g, g, a1, a2});
  }
  require(out.stable(), "butterworth: unstable design");
  return out;
}

}  // namespace

Sos butter_lowpass(int order, double cutoff_hz, double fs) {
  return butter_design(order, cutoff_hz, fs, false);
}

Sos butter_highpass(int order, double cutoff_hz, double fs) {
  return butter_design(order, cutoff_hz, fs, true);
}

// ---------------------------------------------------------------------------
// Filtering

std::vector<double> sosfilt(const Sos& sos, const std::vector<double>& x,
                            std::vector<double>* zi) {
  const std::size_t ns = sos.sections.size();
  std::vector<double> state(2 * ns, 0.0);
  if (zi) {
    require(zi->size() == 2 * ns, "sosfilt: bad zi size");
    state = *zi;
  }
  std::vector<double> y = x;
  for (std::size_t s = 0; s < ns; ++s) {
    const Biquad& q = sos.sections[s];
    double z1 = state[2 * s], z2 = state[2 * s + 1];
    for (double& v : y) {
      double in = v;
      double out = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * out + z2;
      z2 = q.b2 * in - q.a2 * out;
      v = out;
    }
    state[2 * s] = z1;
    state[2 * s + 1] = z2;
  }
  if (zi) *zi = state;
  return y;
}

namespace {

// Steady-state filter state for a constant input of amplitude x0: starting
// from this state, a constant input produces the DC response immediately.
std::vector<double> steady_state_zi(const Sos& sos, double x0) {
  std::vector<double> zi;
  double u = x0;
  for (const auto& q : sos.sections) {
    double hdc = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
    double y = hdc * u;
    zi.push_back(y - q.b0 * u);
    zi.push_back(q.b2 * u - q.a2 * y);
    u = y;
  }
  return zi;
}

std::vector<double> sosfilt_ss(const Sos& sos, const std::vector<double>& x) {
  std::vector<double> zi = steady_state_zi(sos, x.empty() ? 0.0 : x.front());
  return sosfilt(sos, x, &zi);
}

}  // namespace

std::vector<double> filtfilt(const Sos& sos, const std::vector<double>& x) {
  require(!x.empty(), "filtfilt: empty input");
  const std::size_t ns = sos.sections.size();
  std::size_t pad = 6 * ns + 3;
  if (pad >= x.size()) pad = x.size() - 1;

  // Odd extension at both ends to suppress edge transients.
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 2; i <= pad + 1; ++i)
    ext.push_back(2.0 * x.back() - x[x.size() - i]);

  std::vector<double> y = sosfilt_ss(sos, ext);
  std::reverse(y.begin(), y.end());
  y = sosfilt_ss(sos, y);
  std::reverse(y.begin(), y.end());
  return {y.begin() + std::ptrdiff_t(pad),
          y.begin() + std::ptrdiff_t(pad + x.size())};
}

IqStream highpass_90hz(const IqStream& in) {
  require(std::abs(in.sample_rate - 1000.0) < 1e-9,
          "highpass_90hz: stream must be sampled at 1000 Hz");
  const Sos hp = butter_highpass(4, 90.0, 1000.0);
  std::vector<double> re(in.samples.size()), im(in.samples.size());
  for (std::size_t i = 0; i < in.samples.size(); ++i) {
    re[i] = in.samples[i].real();
    im[i] = in.samples[i].imag();
  }
  re = filtfilt(hp, re);
  im = filtfilt(hp, im);
  IqStream out;
  out.sample_rate = in.sample_rate;
  out.samples.resize(in.samples.size());
  for (std::size_t i = 0; i < in.samples.size(); ++i)
    out.samples[i] = {re[i], im[i]};
  return out;
}

Waveform decimate(const Waveform& in, int factor) {
  require(factor >= 1, "decimate: factor must be >= 1");
  if (factor == 1) return in;
  const double new_rate = in.sample_rate / factor;
  const Sos lp = butter_lowpass(8, 0.45 * new_rate / 2.0, in.sample_rate);
  std::vector<double> filtered = filtfilt(lp, in.samples);
  Waveform out;
  out.sample_rate = new_rate;
  out.samples.reserve((filtered.size() + factor - 1) / factor);
  for (std::size_t i = 0; i < filtered.size(); i += std::size_t(factor))
    out.samples.push_back(filtered[i]);
  return out;
}

double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / double(x.size()));
}

std::pair<Waveform, double> loudness_normalize(const Waveform& in,
                                               double target_db) {
  double r = rms(in.samples);
  require(r > 0.0, "loudness_normalize: all-zero signal");
  double gain = std::pow(10.0, target_db / 20.0) / r;
  Waveform out = in;
  for (double& v : out.samples) v *= gain;
  return {out, gain};
}

}  // namespace radioses
