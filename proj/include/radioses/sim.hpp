#pragma once

// Synthetic millimeter-wave scene generator. Produces per-antenna channel
// impulse response tensors for point reflectors whose range is modulated by
// micro-motion (vocal vibration, breathing, body sway), so the detection
// front-end and the separation network can be exercised without hardware.

#include <string>
#include <vector>

#include "radioses/signal.hpp"

namespace radioses {

struct RadarConfig {
  int n_antennas = 8;
  int n_range_bins = 64;
  double frame_rate = 1000.0;        // CIR frames per second
  double range_resolution = 0.0426;  // m per range bin
  double wavelength = 3.893e-3;      // m (77 GHz carrier)
  double noise_power = 1e-4;         // E[|n|^2] per cell, linear
  double leakage = 0.15;             // adjacent-bin amplitude fraction

  double antenna_spacing() const { return wavelength / 2.0; }
  double max_range() const { return n_range_bins * range_resolution; }
};

struct TargetSpec {
  double range_m = 0.5;
  double azimuth_deg = 0.0;  // field of view is [-60, 60]
  cdouble reflectivity{1.0, 0.0};
  // Range modulation in meters at the frame rate; empty means static.
  std::vector<double> displacement;
  // Optional range trajectory (meters per frame) for targets that change
  // bins over time; empty means the fixed range_m above.
  std::vector<double> range_trajectory;
  bool is_static = false;
};

/// h[m][r][t]; frame-major so each frame is an (R x M) column-major matrix.
struct CirTensor {
  RadarConfig config;
  int frames = 0;
  std::vector<cdouble> data;

  std::size_t index(int m, int r, int t) const {
    return (std::size_t(t) * std::size_t(config.n_antennas) + std::size_t(m)) *
               std::size_t(config.n_range_bins) +
           std::size_t(r);
  }
  cdouble& at(int m, int r, int t) { return data[index(m, r, t)]; }
  const cdouble& at(int m, int r, int t) const { return data[index(m, r, t)]; }

  /// Complex time series of one antenna/range cell.
  IqStream series(int m, int r) const;
};

// ---------------------------------------------------------------------------
// Displacement builders

/// Band-limit audio below 500 Hz, resample to 1000 Hz, and scale the result
/// so its peak magnitude equals peak_um micrometers. Silence maps to zeros.
std::vector<double> vibration_from_audio(const Waveform& w, double peak_um);

std::vector<double> breathing_trace(int frames, double frame_rate,
                                    double amplitude_m, double freq_hz,
                                    double phase);

/// Low-frequency body sway: stationary first-order autoregressive walk with
/// the given standard deviation and correlation time.
std::vector<double> sway_trace(int frames, double frame_rate, double std_m,
                               double corr_time_s, Rng& rng);

/// vibration + randomized breathing + sway, padded/truncated to `frames`.
std::vector<double> person_displacement(const std::vector<double>& vibration,
                                        int frames, double frame_rate,
                                        Rng& rng);

/// Large fast oscillation + jitter (fan-like moving clutter).
std::vector<double> moving_clutter_trace(int frames, double frame_rate,
                                         Rng& rng);

// ---------------------------------------------------------------------------

/// Point-scatterer simulation. Each target deposits, at its range bin
/// (plus `leakage` into the adjacent bins), the complex amplitude
///   α · sqrt(cos θ)/(1 + range) · e^{-j2π m d sinθ/λ} · e^{-j4π(range + disp(t))/λ}
/// and complex white noise of cfg.noise_power is added everywhere.
/// Deterministic given the seed.
CirTensor simulate_scene(const std::vector<TargetSpec>& targets,
                         const RadarConfig& cfg, double duration_s,
                         std::uint64_t seed);

struct Scene {
  std::vector<TargetSpec> targets;
  RadarConfig config;
  double duration_s = 1.0;
  std::uint64_t seed = 0;
  std::vector<int> person_indices;  // which targets are people (ground truth)
};

/// Reproducible named scenes used by tests, docs, and the CLI.
/// Names: two_speakers_close, three_speakers, speaker_plus_clutter,
/// moving_speaker.
Scene scene_preset(const std::string& name, double duration_s,
                   std::uint64_t seed);

CirTensor simulate_scene(const Scene& scene);

// ---------------------------------------------------------------------------
// On-disk CIR container ("RSC0"): u32 version, u32 M, u32 R, u32 T,
// u32 frame rate, f32 range resolution, f32 wavelength, f32 noise power,
// f32 leakage, then frame-major interleaved float32 re/im. A human-readable
// JSON scene description is written next to it as <path>.json.

void write_cir(const std::string& path, const CirTensor& cir,
               const std::string& sidecar_json);
CirTensor read_cir(const std::string& path);

/// JSON text describing a scene (targets, seed, duration); used as the RSC0
/// sidecar and by the CLI.
std::string scene_to_json(const Scene& scene);

}  // namespace radioses
