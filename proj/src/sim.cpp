#include "radioses/sim.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "radioses/detail/binio.hpp"

namespace radioses {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

IqStream CirTensor::series(int m, int r) const {
  require(m >= 0 && m < config.n_antennas && r >= 0 && r < config.n_range_bins,
          "CirTensor::series: cell out of range");
  IqStream s;
  s.sample_rate = config.frame_rate;
  s.samples.resize(std::size_t(frames));
  for (int t = 0; t < frames; ++t) s.samples[std::size_t(t)] = at(m, r, t);
  return s;
}

// ---------------------------------------------------------------------------
// Displacement builders

std::vector<double> vibration_from_audio(const Waveform& w, double peak_um) {
  require(w.sample_rate >= 1000.0, "vibration_from_audio: rate below 1000 Hz");
  const double ratio = w.sample_rate / 1000.0;
  require(std::abs(ratio - std::round(ratio)) < 1e-9,
          "vibration_from_audio: rate must be an integer multiple of 1000");
  const int factor = int(std::lround(ratio));
  Waveform low = decimate(w, factor);
  double peak = 0.0;
  for (double v : low.samples) peak = std::max(peak, std::abs(v));
  std::vector<double> disp = std::move(low.samples);
  if (peak > 0.0) {
    const double scale = peak_um * 1e-6 / peak;
    for (double& v : disp) v *= scale;
  }  // silence stays all-zero
  return disp;
}

std::vector<double> breathing_trace(int frames, double frame_rate,
                                    double amplitude_m, double freq_hz,
                                    double phase) {
  std::vector<double> out(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t)
    out[std::size_t(t)] =
        amplitude_m * std::sin(2.0 * kPi * freq_hz * t / frame_rate + phase);
  return out;
}

std::vector<double> sway_trace(int frames, double frame_rate, double std_m,
                               double corr_time_s, Rng& rng) {
  // AR(1) with stationary variance std_m^2 and the requested decay time.
  const double rho = std::exp(-1.0 / (corr_time_s * frame_rate));
  const double step = std_m * std::sqrt(1.0 - rho * rho);
  std::vector<double> out(static_cast<std::size_t>(frames));
  double x = std_m * rng.gaussian();  // start in the stationary distribution
  for (int t = 0; t < frames; ++t) {
    out[std::size_t(t)] = x;
    x = rho * x + step * rng.gaussian();
  }
  return out;
}

std::vector<double> person_displacement(const std::vector<double>& vibration,
                                        int frames, double frame_rate,
                                        Rng& rng) {
  const double breath_amp = rng.uniform(1e-3, 3e-3);
  const double breath_freq = rng.uniform(0.2, 0.4);
  const double breath_phase = rng.uniform(0.0, 2.0 * kPi);
  const double sway_std = rng.uniform(0.3e-3, 0.8e-3);
  std::vector<double> out =
      breathing_trace(frames, frame_rate, breath_amp, breath_freq, breath_phase);
  std::vector<double> sway = sway_trace(frames, frame_rate, sway_std, 1.0, rng);
  for (int t = 0; t < frames; ++t) {
    out[std::size_t(t)] += sway[std::size_t(t)];
    if (std::size_t(t) < vibration.size()) out[std::size_t(t)] += vibration[std::size_t(t)];
  }
  return out;
}

std::vector<double> moving_clutter_trace(int frames, double frame_rate,
                                         Rng& rng) {
  const double amp = rng.uniform(5e-3, 10e-3);
  const double freq = rng.uniform(2.0, 4.0);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  std::vector<double> out =
      breathing_trace(frames, frame_rate, amp, freq, phase);
  std::vector<double> jitter = sway_trace(frames, frame_rate, 2e-3, 0.2, rng);
  for (int t = 0; t < frames; ++t) out[std::size_t(t)] += jitter[std::size_t(t)];
  return out;
}

// ---------------------------------------------------------------------------

CirTensor simulate_scene(const std::vector<TargetSpec>& targets,
                         const RadarConfig& cfg, double duration_s,
                         std::uint64_t seed) {
  require(cfg.n_antennas > 0 && cfg.n_range_bins > 0,
          "simulate_scene: bad radar config");
  require(cfg.leakage >= 0.0 && cfg.leakage <= 0.2,
          "simulate_scene: leakage fraction must be in [0, 0.2]");
  require(duration_s > 0.0, "simulate_scene: duration must be positive");
  const int T = int(std::lround(duration_s * cfg.frame_rate));
  const int M = cfg.n_antennas;
  const int R = cfg.n_range_bins;

  CirTensor cir;
  cir.config = cfg;
  cir.frames = T;
  cir.data.assign(std::size_t(M) * std::size_t(R) * std::size_t(T), {0.0, 0.0});

  const double d = cfg.antenna_spacing();
  for (const TargetSpec& tg : targets) {
    require(std::abs(tg.azimuth_deg) <= 60.0,
            "simulate_scene: target outside the +/-60 degree field of view");
    const double sin_th = std::sin(tg.azimuth_deg * kPi / 180.0);
    const double cos_th = std::cos(tg.azimuth_deg * kPi / 180.0);
    const bool moving = !tg.range_trajectory.empty();
    if (moving)
      require(int(tg.range_trajectory.size()) == T,
              "simulate_scene: range trajectory length mismatch");
    if (!tg.is_static)
      require(int(tg.displacement.size()) == T || tg.displacement.empty(),
              "simulate_scene: displacement length mismatch");

    // Per-antenna steering phase, fixed over the scene.
    std::vector<cdouble> steer(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m)
      steer[std::size_t(m)] =
          std::polar(1.0, -2.0 * kPi * m * d * sin_th / cfg.wavelength);

    for (int t = 0; t < T; ++t) {
      const double range =
          moving ? tg.range_trajectory[std::size_t(t)] : tg.range_m;
      require(range > 0.0 && range < cfg.max_range(),
              "simulate_scene: target outside the range field of view");
      const int bin = int(std::lround(range / cfg.range_resolution));
      if (bin < 0 || bin >= R) continue;  // rounding at the far edge
      const double disp =
          tg.displacement.empty() ? 0.0 : tg.displacement[std::size_t(t)];
      const double amp = std::sqrt(std::max(cos_th, 0.0)) / (1.0 + range);
      const cdouble reflect =
          tg.reflectivity * amp *
          std::polar(1.0, -4.0 * kPi * (range + disp) / cfg.wavelength);
      for (int m = 0; m < M; ++m) {
        const cdouble v = reflect * steer[std::size_t(m)];
        cir.at(m, bin, t) += v;
        if (bin > 0) cir.at(m, bin - 1, t) += cfg.leakage * v;
        if (bin + 1 < R) cir.at(m, bin + 1, t) += cfg.leakage * v;
      }
    }
  }

  if (cfg.noise_power > 0.0) {
    Rng rng(mix_seed(seed, 17));
    const double s = std::sqrt(cfg.noise_power);
    for (auto& v : cir.data) v += s * rng.cgaussian();
  }
  return cir;
}

CirTensor simulate_scene(const Scene& scene) {
  return simulate_scene(scene.targets, scene.config, scene.duration_s,
                        scene.seed);
}

// ---------------------------------------------------------------------------
// Presets

namespace {

// Harmonic micro-vibration stand-in for a talking person (fundamental plus
// two harmonics, all below the 500 Hz frame-rate Nyquist).
std::vector<double> preset_vibration(int frames, double frame_rate, Rng& rng,
                                     double peak_um) {
  const double f0 = rng.uniform(100.0, 150.0);
  const double p1 = rng.uniform(0.0, 2.0 * kPi);
  const double p2 = rng.uniform(0.0, 2.0 * kPi);
  const double p3 = rng.uniform(0.0, 2.0 * kPi);
  std::vector<double> v(static_cast<std::size_t>(frames));
  double peak = 0.0;
  for (int t = 0; t < frames; ++t) {
    double x = t / frame_rate;
    double s = std::sin(2.0 * kPi * f0 * x + p1) +
               0.5 * std::sin(2.0 * kPi * 2.0 * f0 * x + p2) +
               0.33 * std::sin(2.0 * kPi * 3.0 * f0 * x + p3);
    v[std::size_t(t)] = s;
    peak = std::max(peak, std::abs(s));
  }
  for (auto& s : v) s *= peak_um * 1e-6 / peak;
  return v;
}

TargetSpec make_person(double range_m, double azimuth_deg, int frames,
                       double frame_rate, Rng& rng) {
  TargetSpec t;
  t.range_m = range_m;
  t.azimuth_deg = azimuth_deg;
  t.reflectivity = std::polar(1.0, rng.uniform(0.0, 2.0 * kPi));
  std::vector<double> vib = preset_vibration(frames, frame_rate, rng, 5.0);
  t.displacement = person_displacement(vib, frames, frame_rate, rng);
  return t;
}

TargetSpec make_static(double range_m, double azimuth_deg, double amp,
                       Rng& rng) {
  TargetSpec t;
  t.range_m = range_m;
  t.azimuth_deg = azimuth_deg;
  t.reflectivity = std::polar(amp, rng.uniform(0.0, 2.0 * kPi));
  t.is_static = true;
  return t;
}

TargetSpec make_moving_clutter(double range_m, double azimuth_deg, double amp,
                               int frames, double frame_rate, Rng& rng) {
  TargetSpec t;
  t.range_m = range_m;
  t.azimuth_deg = azimuth_deg;
  t.reflectivity = std::polar(amp, rng.uniform(0.0, 2.0 * kPi));
  t.displacement = moving_clutter_trace(frames, frame_rate, rng);
  return t;
}

}  // namespace

Scene scene_preset(const std::string& name, double duration_s,
                   std::uint64_t seed) {
  Scene sc;
  sc.config = RadarConfig{};
  sc.duration_s = duration_s;
  sc.seed = seed;
  const int T = int(std::lround(duration_s * sc.config.frame_rate));
  const double fr = sc.config.frame_rate;
  Rng rng(mix_seed(seed, 29));

  if (name == "two_speakers_close") {
    sc.targets.push_back(make_person(0.4, -20.0, T, fr, rng));
    sc.targets.push_back(make_person(0.6, 15.0, T, fr, rng));
    sc.targets.push_back(make_static(1.2, 40.0, 2.0, rng));
    sc.person_indices = {0, 1};
  } else if (name == "three_speakers") {
    sc.targets.push_back(make_person(0.4, -20.0, T, fr, rng));
    sc.targets.push_back(make_person(0.6, 15.0, T, fr, rng));
    sc.targets.push_back(make_person(0.9, -40.0, T, fr, rng));
    sc.targets.push_back(make_static(1.2, 40.0, 2.0, rng));
    sc.person_indices = {0, 1, 2};
  } else if (name == "speaker_plus_clutter") {
    sc.targets.push_back(make_person(0.5, 0.0, T, fr, rng));
    sc.targets.push_back(make_static(0.9, -30.0, 2.0, rng));
    sc.targets.push_back(
        make_moving_clutter(1.5, 25.0, 2.0, T, fr, rng));
    sc.person_indices = {0};
  } else if (name == "moving_speaker") {
    TargetSpec t = make_person(0.4, 10.0, T, fr, rng);
    t.range_trajectory.resize(std::size_t(T));
    for (int i = 0; i < T; ++i)
      t.range_trajectory[std::size_t(i)] =
          0.4 + 0.6 * double(i) / double(std::max(T - 1, 1));
    sc.targets.push_back(std::move(t));
    sc.targets.push_back(make_static(1.2, 40.0, 2.0, rng));
    sc.person_indices = {0};
  } else {
    require(false, "scene_preset: unknown preset '" + name + "'");
  }
  return sc;
}

std::string scene_to_json(const Scene& scene) {
  nlohmann::ordered_json j;
  j["duration_s"] = scene.duration_s;
  j["seed"] = scene.seed;
  j["radar"] = {{"n_antennas", scene.config.n_antennas},
                {"n_range_bins", scene.config.n_range_bins},
                {"frame_rate", scene.config.frame_rate},
                {"range_resolution", scene.config.range_resolution},
                {"wavelength", scene.config.wavelength},
                {"noise_power", scene.config.noise_power},
                {"leakage", scene.config.leakage}};
  j["person_indices"] = scene.person_indices;
  auto& arr = j["targets"] = nlohmann::ordered_json::array();
  for (const auto& t : scene.targets) {
    nlohmann::ordered_json tj;
    tj["range_m"] = t.range_m;
    tj["azimuth_deg"] = t.azimuth_deg;
    tj["reflectivity"] = {t.reflectivity.real(), t.reflectivity.imag()};
    tj["is_static"] = t.is_static;
    tj["moving"] = !t.range_trajectory.empty();
    arr.push_back(std::move(tj));
  }
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// RSC0 container

namespace {
constexpr char kCirMagic[4] = {'R', 'S', 'C', '0'};
constexpr std::uint32_t kCirVersion = 1;
}  // namespace

void write_cir(const std::string& path, const CirTensor& cir,
               const std::string& sidecar_json) {
  std::ofstream f(path, std::ios::binary);
  require(bool(f), "write_cir: cannot open " + path);
  detail::w_magic(f, kCirMagic);
  detail::w_u32(f, kCirVersion);
  detail::w_u32(f, std::uint32_t(cir.config.n_antennas));
  detail::w_u32(f, std::uint32_t(cir.config.n_range_bins));
  detail::w_u32(f, std::uint32_t(cir.frames));
  detail::w_u32(f, std::uint32_t(std::lround(cir.config.frame_rate)));
  detail::w_f32(f, float(cir.config.range_resolution));
  detail::w_f32(f, float(cir.config.wavelength));
  detail::w_f32(f, float(cir.config.noise_power));
  detail::w_f32(f, float(cir.config.leakage));
  std::vector<float> buf(2 * cir.data.size());
  for (std::size_t i = 0; i < cir.data.size(); ++i) {
    buf[2 * i] = float(cir.data[i].real());
    buf[2 * i + 1] = float(cir.data[i].imag());
  }
  detail::w_f32_block(f, buf.data(), buf.size());
  require(bool(f), "write_cir: write failed on " + path);

  if (!sidecar_json.empty()) {
    std::ofstream sj(path + ".json");
    require(bool(sj), "write_cir: cannot open sidecar for " + path);
    sj << sidecar_json << "\n";
  }
}

CirTensor read_cir(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), "read_cir: cannot open " + path);
  detail::expect_magic(f, kCirMagic, "RSC0");
  require(detail::r_u32(f) == kCirVersion,
          "read_cir: unsupported version in " + path);
  CirTensor cir;
  cir.config.n_antennas = int(detail::r_u32(f));
  cir.config.n_range_bins = int(detail::r_u32(f));
  cir.frames = int(detail::r_u32(f));
  cir.config.frame_rate = double(detail::r_u32(f));
  cir.config.range_resolution = double(detail::r_f32(f));
  cir.config.wavelength = double(detail::r_f32(f));
  cir.config.noise_power = double(detail::r_f32(f));
  cir.config.leakage = double(detail::r_f32(f));
  const std::size_t n = std::size_t(cir.config.n_antennas) *
                        std::size_t(cir.config.n_range_bins) *
                        std::size_t(cir.frames);
  std::vector<float> buf(2 * n);
  detail::r_f32_block(f, buf.data(), buf.size());
  cir.data.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    cir.data[i] = {double(buf[2 * i]), double(buf[2 * i + 1])};
  return cir;
}

}  // namespace radioses
