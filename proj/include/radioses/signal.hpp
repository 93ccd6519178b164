#pragma once

#include <complex>
#include <utility>
#include <vector>

#include "radioses/common.hpp"

namespace radioses {

/// Mono audio at a fixed sample rate (samples are nominally in [-1, 1]).
struct Waveform {
  std::vector<double> samples;
  double sample_rate = 8000.0;
};

/// Complex baseband stream (one radar range bin over time).
struct IqStream {
  std::vector<cdouble> samples;
  double sample_rate = 1000.0;
};

// ---------------------------------------------------------------------------
// FFT (radix-2, power-of-two lengths)

std::size_t next_pow2(std::size_t n);
void fft_inplace(std::vector<cdouble>& x, bool inverse);
std::vector<cdouble> fft(const std::vector<cdouble>& x);
std::vector<cdouble> ifft(const std::vector<cdouble>& x);

// ---------------------------------------------------------------------------
// IIR filtering in second-order sections

struct Biquad {
  // y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
  double b0, b1, b2, a1, a2;
};

struct Sos {
  std::vector<Biquad> sections;
  bool stable() const;
  /// Complex response at normalized angular frequency w (rad/sample).
  cdouble response(double w) const;
};

/// Butterworth designs via analog prototype + bilinear transform.
/// Order must be even. cutoff_hz is the -3 dB point.
Sos butter_lowpass(int order, double cutoff_hz, double fs);
Sos butter_highpass(int order, double cutoff_hz, double fs);

/// Single-pass causal filtering through the cascade (direct form II
/// transposed). zi, if given, holds 2 states per section and is updated.
std::vector<double> sosfilt(const Sos& sos, const std::vector<double>& x,
                            std::vector<double>* zi = nullptr);

/// Zero-phase filtering: odd-padded forward-backward pass with per-section
/// steady-state initial conditions, so a constant input maps to the filter's
/// DC response with no start-up transient.
std::vector<double> filtfilt(const Sos& sos, const std::vector<double>& x);

/// 4th-order Butterworth high-pass at 90 Hz, applied zero-phase to the real
/// and imaginary parts independently. Stream must be sampled at 1000 Hz.
IqStream highpass_90hz(const IqStream& in);

/// Anti-aliased integer-factor downsampling: zero-phase 8th-order Butterworth
/// low-pass at 0.45x the new Nyquist frequency, then stride.
Waveform decimate(const Waveform& in, int factor);

double rms(const std::vector<double>& x);

/// Scale so that 20*log10(rms) == target_db. Returns the scaled waveform and
/// the gain applied. Throws on all-zero input.
std::pair<Waveform, double> loudness_normalize(const Waveform& in,
                                               double target_db);

}  // namespace radioses
