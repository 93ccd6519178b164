#include "radioses/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "radioses/iq_io.hpp"
#include "radioses/wav_io.hpp"

namespace radioses::mixer {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double mean_square(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return x.empty() ? 0.0 : acc / double(x.size());
}
}  // namespace

// ---------------------------------------------------------------------------
// Voice synthesis

std::vector<VoiceIdentity> make_identities(int n, std::uint64_t seed) {
  require(n >= 1 && n <= 40, "make_identities: need 1..40 identities");
  Rng rng(seed);
  // Tile 80..300 Hz into n bands, keep the inner 70% of each band so the
  // identities stay separated even after pitch wander hits the clamp.
  const double width = (300.0 - 80.0) / double(n);
  std::vector<int> band(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) band[std::size_t(i)] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(band[std::size_t(i)],
              band[std::size_t(rng.integer(std::uint64_t(i) + 1))]);
  std::vector<VoiceIdentity> out;
  for (int i = 0; i < n; ++i) {
    VoiceIdentity id;
    id.id = i;
    const double lo = 80.0 + width * band[std::size_t(i)];
    id.pitch_lo = lo + 0.15 * width;
    id.pitch_hi = lo + 0.85 * width;
    id.brightness = rng.uniform(0.55, 0.85);
    out.push_back(id);
  }
  return out;
}

SyntheticVoice design_voice(const VoiceIdentity& who, double duration_s,
                            std::uint64_t seed) {
  require(duration_s > 0.0, "design_voice: duration must be positive");
  require(who.pitch_lo > 0.0 && who.pitch_hi > who.pitch_lo,
          "design_voice: bad pitch band");
  Rng rng(seed);
  SyntheticVoice v;
  v.sample_rate = 8000.0;
  const int n = int(std::llround(duration_s * v.sample_rate));
  v.seed = rng.bits();

  // Pitch: band center plus two slow sinusoids, clamped inside the band.
  const double c = 0.5 * (who.pitch_lo + who.pitch_hi);
  const double half = 0.5 * (who.pitch_hi - who.pitch_lo);
  const double a1 = half * rng.uniform(0.3, 0.7);
  const double f1 = rng.uniform(0.4, 1.5), p1 = rng.uniform(0.0, 2.0 * kPi);
  const double a2 = half * rng.uniform(0.05, 0.25);
  const double f2 = rng.uniform(1.5, 4.0), p2 = rng.uniform(0.0, 2.0 * kPi);
  v.pitch_hz.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = double(i) / v.sample_rate;
    const double f = c + a1 * std::sin(2.0 * kPi * f1 * t + p1) +
                     a2 * std::sin(2.0 * kPi * f2 * t + p2);
    v.pitch_hz[std::size_t(i)] = std::clamp(f, who.pitch_lo, who.pitch_hi);
  }

  // Envelope: syllable-like bursts with raised-cosine edges separated by
  // exact-zero pauses. The first segment is always voiced so no draw can
  // produce a silent utterance.
  v.envelope.assign(static_cast<std::size_t>(n), 0.0);
  int i = 0;
  bool voiced = true;
  while (i < n) {
    if (voiced) {
      const int len =
          std::min(n - i, int(v.sample_rate * rng.uniform(0.12, 0.40)));
      const double level = rng.uniform(0.65, 1.0);
      const int ramp = std::min(len / 4, int(v.sample_rate * 0.016));
      for (int k = 0; k < len; ++k) {
        double w = 1.0;
        if (k < ramp)
          w = 0.5 - 0.5 * std::cos(kPi * (k + 1) / double(ramp + 1));
        else if (k >= len - ramp)
          w = 0.5 - 0.5 * std::cos(kPi * (len - k) / double(ramp + 1));
        v.envelope[std::size_t(i + k)] = level * w;
      }
      i += len;
    } else {
      i += int(v.sample_rate * rng.uniform(0.05, 0.18));
    }
    voiced = !voiced;
  }

  // Harmonic amplitudes roll off like brightness^k with mild jitter; cap the
  // count so the top harmonic stays below 3.2 kHz at the band's high edge.
  const int k_max =
      std::clamp(int(std::floor(3200.0 / who.pitch_hi)), 3, 8);
  for (int k = 0; k < k_max; ++k)
    v.harmonic_amps.push_back(std::pow(who.brightness, double(k)) *
                              rng.uniform(0.8, 1.2));
  return v;
}

Waveform synth_voice(const SyntheticVoice& spec) {
  const std::size_t n = spec.pitch_hz.size();
  require(n > 0 && spec.envelope.size() == n,
          "synth_voice: pitch and envelope lengths differ");
  require(!spec.harmonic_amps.empty(), "synth_voice: no harmonics");
  require(spec.sample_rate > 0.0, "synth_voice: bad sample rate");
  for (std::size_t i = 0; i < n; ++i) {
    require(spec.envelope[i] >= 0.0 && spec.envelope[i] <= 1.0,
            "synth_voice: envelope outside [0, 1]");
    require(spec.envelope[i] == 0.0 || spec.pitch_hz[i] > 0.0,
            "synth_voice: non-positive pitch in a voiced region");
  }
  const std::size_t K = spec.harmonic_amps.size();
  std::vector<double> phase(K);
  Rng rng(spec.seed);
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * kPi);

  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.envelope[i] > 0.0) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        s += spec.harmonic_amps[k] * std::sin(phase[k]);
      out.samples[i] = spec.envelope[i] * s;
    }
    const double dph = 2.0 * kPi * spec.pitch_hz[i] / spec.sample_rate;
    for (std::size_t k = 0; k < K; ++k) {
      phase[k] += dph * double(k + 1);
      if (phase[k] > 2.0 * kPi) phase[k] -= 2.0 * kPi;
    }
  }
  return out;
}

Waveform synth_noise(double duration_s, double sample_rate,
                     std::uint64_t seed) {
  require(duration_s > 0.0 && sample_rate > 0.0, "synth_noise: bad args");
  Rng rng(seed);
  const int n = int(std::llround(duration_s * sample_rate));
  std::vector<double> white(static_cast<std::size_t>(n));
  for (auto& v : white) v = rng.gaussian();
  auto colored = filtfilt(butter_lowpass(4, 0.22 * sample_rate, sample_rate),
                          white);
  // A few tonal interferers on top of the broadband floor.
  const int n_tones = 1 + int(rng.integer(3));
  for (int t = 0; t < n_tones; ++t) {
    const double f = rng.uniform(200.0, 0.4 * sample_rate);
    const double a = rng.uniform(0.05, 0.2);
    const double p = rng.uniform(0.0, 2.0 * kPi);
    for (int i = 0; i < n; ++i)
      colored[std::size_t(i)] +=
          a * std::sin(2.0 * kPi * f * i / sample_rate + p);
  }
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples = std::move(colored);
  const double r = rms(out.samples);
  for (auto& v : out.samples) v *= 0.05 / r;
  return out;
}

// ---------------------------------------------------------------------------
// Mixing

Mixture make_mixture(const std::vector<Waveform>& sources,
                     const Waveform* noise, double snr_db, bool clean,
                     std::uint64_t seed) {
  require(!sources.empty(), "make_mixture: no sources");
  const double fs = sources[0].sample_rate;
  std::size_t n = sources[0].samples.size();
  for (const auto& s : sources) {
    require(s.sample_rate == fs, "make_mixture: sample rates differ");
    n = std::min(n, s.samples.size());
  }
  if (!clean) {
    require(noise != nullptr, "make_mixture: noisy mixture without noise");
    require(noise->sample_rate == fs,
            "make_mixture: noise sample rate differs");
    require(snr_db >= -5.0 && snr_db <= 5.0,
            "make_mixture: SNR outside [-5, 5] dB");
    n = std::min(n, noise->samples.size());
  }
  require(n > 0, "make_mixture: empty after truncation");

  Mixture out;
  out.seed = seed;
  out.clean = clean;
  out.snr_db = clean ? std::numeric_limits<double>::quiet_NaN() : snr_db;

  std::vector<double> speech(n, 0.0);
  for (const auto& s : sources) {
    Waveform trunc;
    trunc.sample_rate = fs;
    trunc.samples.assign(s.samples.begin(),
                         s.samples.begin() + std::ptrdiff_t(n));
    auto [ref, gain] = loudness_normalize(trunc, kSourceLoudnessDb);
    for (std::size_t i = 0; i < n; ++i) speech[i] += ref.samples[i];
    out.refs.push_back(std::move(ref));
    out.gains.push_back(gain);
  }

  out.mixture.sample_rate = fs;
  out.mixture.samples = speech;
  if (!clean) {
    const double p_speech = mean_square(speech);
    std::vector<double> nz(noise->samples.begin(),
                           noise->samples.begin() + std::ptrdiff_t(n));
    const double p_noise = mean_square(nz);
    require(p_noise > 0.0, "make_mixture: noise is silent");
    out.noise_gain =
        std::sqrt(p_speech * std::pow(10.0, -snr_db / 10.0) / p_noise);
    for (std::size_t i = 0; i < n; ++i)
      out.mixture.samples[i] += out.noise_gain * nz[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Radio pairing

namespace {

struct Pairing {
  RangeAzimuthTensor bf;
  Cluster cluster;
  int frames = 0;
};

Pairing run_pairing(const Waveform& source, const RadioPairing& where,
                    std::uint64_t seed) {
  const double fs = source.sample_rate;
  const double fr = where.radar.frame_rate;
  require(!source.samples.empty(), "radio pairing: empty source");
  const double frames_exact = double(source.samples.size()) * fr / fs;
  const int frames = int(std::llround(frames_exact));
  require(std::abs(frames_exact - frames) < 1e-9 && frames > 0,
          "radio pairing: audio length must map to a whole number of frames");
  require(std::abs(where.azimuth_deg) <= 60.0 && where.range_m > 0.0 &&
              where.range_m < where.radar.max_range(),
          "radio pairing: position outside the field of view");

  auto vib = vibration_from_audio(source, where.peak_um);
  Rng rng(mix_seed(seed, 0x70657273ULL));
  TargetSpec person;
  person.range_m = where.range_m;
  person.azimuth_deg = where.azimuth_deg;
  person.displacement = person_displacement(vib, frames, fr, rng);

  const double duration = frames / fr;
  auto cir = simulate_scene({person}, where.radar,  duration,
                            mix_seed(seed, 0x7363656eULL));
  auto bf = beamform(cir, BeamformGrid::standard(where.radar));
  auto windows = detect_people(bf, where.frontend);

  // Expected cell of the person in (range bin, angle index) coordinates.
  const double exp_r = where.range_m / where.radar.range_resolution;
  const double exp_a = (where.azimuth_deg + 60.0) / 2.0;
  const Cluster* best = nullptr;
  double best_d = 6.0;  // beyond this the detection is somebody else
  if (!windows.empty()) {
    for (const auto& c : windows.back().clusters) {
      const double d = std::hypot(c.centroid_range - exp_r,
                                  c.centroid_angle - exp_a);
      if (d < best_d) {
        best_d = d;
        best = &c;
      }
    }
  }
  if (best == nullptr) {
    std::ostringstream msg;
    msg << "radio pairing: front-end lost the person at range "
        << where.range_m << " m, azimuth " << where.azimuth_deg
        << " deg (expected cell " << exp_r << ", " << exp_a << "); clusters:";
    for (const auto& w : windows) {
      msg << " window " << w.window_index << " -> [";
      for (const auto& c : w.clusters)
        msg << " (" << c.centroid_range << ", " << c.centroid_angle << ")";
      msg << " ]";
    }
    throw std::runtime_error(msg.str());
  }
  Pairing out;
  out.bf = std::move(bf);
  out.cluster = *best;
  out.frames = frames;
  return out;
}

}  // namespace

IqStream paired_radio(const Waveform& source, const RadioPairing& where,
                      std::uint64_t seed) {
  auto p = run_pairing(source, where, seed);
  auto streams =
      extract_streams(p.bf, p.cluster.members, p.cluster.centroid_range,
                      p.cluster.centroid_angle, ExtractMode::test, 0,
                      p.frames);
  require(streams.size() == 1, "radio pairing: expected one stream");
  return highpass_90hz(streams[0]);
}

std::vector<IqStream> paired_radio_candidates(const Waveform& source,
                                              const RadioPairing& where,
                                              std::uint64_t seed,
                                              int max_candidates) {
  require(max_candidates >= 1 && max_candidates <= 8,
          "radio pairing: candidate count must be 1..8");
  auto p = run_pairing(source, where, seed);
  auto streams =
      extract_streams(p.bf, p.cluster.members, p.cluster.centroid_range,
                      p.cluster.centroid_angle, ExtractMode::train, 0,
                      p.frames, max_candidates);
  for (auto& s : streams) s = highpass_90hz(s);
  return streams;
}

// ---------------------------------------------------------------------------
// Radio augmentation

nlohmann::json augmentation_to_json(const AugmentationRecord& rec) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& [b, e] : rec.zero_spans) spans.push_back({b, e});
  return {{"rotated", rec.rotated},      {"rotation_rad", rec.rotation_rad},
          {"noised", rec.noised},        {"noise_snr_db", rec.noise_snr_db},
          {"noise_seed", rec.noise_seed}, {"zero_spans", spans},
          {"dropped", rec.dropped}};
}

AugmentationRecord augmentation_from_json(const nlohmann::json& j) {
  AugmentationRecord rec;
  rec.rotated = j.at("rotated").get<bool>();
  rec.rotation_rad = j.at("rotation_rad").get<double>();
  rec.noised = j.at("noised").get<bool>();
  rec.noise_snr_db = j.at("noise_snr_db").get<double>();
  rec.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  for (const auto& s : j.at("zero_spans"))
    rec.zero_spans.emplace_back(s.at(0).get<std::int64_t>(),
                                s.at(1).get<std::int64_t>());
  rec.dropped = j.at("dropped").get<bool>();
  return rec;
}

nlohmann::json policy_to_json(const AugmentPolicy& p) {
  return {{"rotate_prob", p.rotate_prob},
          {"noise_prob", p.noise_prob},
          {"noise_snr_lo_db", p.noise_snr_lo_db},
          {"noise_snr_hi_db", p.noise_snr_hi_db},
          {"zero_prob", p.zero_prob},
          {"zero_frac_lo", p.zero_frac_lo},
          {"zero_frac_hi", p.zero_frac_hi},
          {"drop_prob", p.drop_prob}};
}

AugmentPolicy policy_from_json(const nlohmann::json& j) {
  AugmentPolicy p;
  p.rotate_prob = j.at("rotate_prob").get<double>();
  p.noise_prob = j.at("noise_prob").get<double>();
  p.noise_snr_lo_db = j.at("noise_snr_lo_db").get<double>();
  p.noise_snr_hi_db = j.at("noise_snr_hi_db").get<double>();
  p.zero_prob = j.at("zero_prob").get<double>();
  p.zero_frac_lo = j.at("zero_frac_lo").get<double>();
  p.zero_frac_hi = j.at("zero_frac_hi").get<double>();
  p.drop_prob = j.at("drop_prob").get<double>();
  return p;
}

AugmentationRecord draw_augmentation(const AugmentPolicy& policy,
                                     std::size_t n_samples,
                                     std::uint64_t seed) {
  require(n_samples > 0, "draw_augmentation: empty stream");
  Rng rng(mix_seed(seed, 0x61756731ULL));
  AugmentationRecord rec;
  if (rng.uniform() < policy.rotate_prob) {
    rec.rotated = true;
    rec.rotation_rad = rng.uniform(0.0, 2.0 * kPi);
  }
  if (rng.uniform() < policy.noise_prob) {
    rec.noised = true;
    rec.noise_snr_db =
        rng.uniform(policy.noise_snr_lo_db, policy.noise_snr_hi_db);
    rec.noise_seed = rng.bits();
  }
  if (rng.uniform() < policy.zero_prob) {
    const double frac = rng.uniform(policy.zero_frac_lo, policy.zero_frac_hi);
    const auto len = std::max<std::int64_t>(
        1, std::int64_t(std::llround(frac * double(n_samples))));
    const auto b =
        std::int64_t(rng.integer(std::uint64_t(n_samples) - std::uint64_t(len) + 1));
    rec.zero_spans.emplace_back(b, b + len);
  }
  rec.dropped = rng.uniform() < policy.drop_prob;
  return rec;
}

IqStream replay_augment(const IqStream& in, const AugmentationRecord& rec) {
  IqStream out = in;
  const std::size_t n = out.samples.size();
  if (rec.dropped) {
    std::fill(out.samples.begin(), out.samples.end(), cdouble{0.0, 0.0});
    return out;
  }
  if (rec.rotated) {
    const cdouble r = std::polar(1.0, rec.rotation_rad);
    for (auto& v : out.samples) v *= r;
  }
  if (rec.noised) {
    double p_in = 0.0;
    for (const auto& v : out.samples) p_in += std::norm(v);
    p_in /= double(n);
    if (p_in > 0.0) {
      // Sample-mean-free noise: high-passed streams carry no DC, and the
      // added noise must not reintroduce one.
      Rng nr(rec.noise_seed);
      std::vector<cdouble> nz(n);
      cdouble mean{0.0, 0.0};
      for (auto& v : nz) {
        v = cdouble{nr.gaussian(), nr.gaussian()};
        mean += v;
      }
      mean /= double(n);
      double p_nz = 0.0;
      for (auto& v : nz) {
        v -= mean;
        p_nz += std::norm(v);
      }
      p_nz /= double(n);
      const double g = std::sqrt(
          p_in * std::pow(10.0, -rec.noise_snr_db / 10.0) / p_nz);
      for (std::size_t i = 0; i < n; ++i) out.samples[i] += g * nz[i];
    }
  }
  for (const auto& [b, e] : rec.zero_spans) {
    require(b >= 0 && e > b && std::size_t(e) <= n,
            "replay_augment: zero span outside the stream");
    for (std::int64_t i = b; i < e; ++i)
      out.samples[std::size_t(i)] = cdouble{0.0, 0.0};
  }
  return out;
}

IqStream augment_radio(const IqStream& in, const AugmentPolicy& policy,
                       std::uint64_t seed, AugmentationRecord* rec) {
  auto r = draw_augmentation(policy, in.samples.size(), seed);
  if (rec != nullptr) *rec = r;
  return replay_augment(in, r);
}

// ---------------------------------------------------------------------------
// Corpus build

void CorpusSpec::validate() const {
  require(!out_dir.empty(), "corpus: output directory not set");
  require(n_train >= 0 && n_val >= 0 && n_test >= 0 &&
              n_train + n_val + n_test > 0,
          "corpus: nothing to generate");
  require(n_src >= 1 && n_src <= 4, "corpus: 1..4 sources");
  require(duration_s >= min_duration_s,
          "corpus: utterances shorter than the minimum duration");
  const double samples = duration_s * 8000.0;
  require(std::abs(samples - std::llround(samples)) < 1e-9 &&
              std::llround(samples) % 8 == 0,
          "corpus: duration must map to a whole number of radio frames");
  require(snr_lo_db >= -5.0 && snr_hi_db <= 5.0 && snr_lo_db <= snr_hi_db,
          "corpus: SNR range must sit inside [-5, 5] dB");
  require(clean_fraction >= 0.0 && clean_fraction <= 1.0 &&
              same_identity_fraction >= 0.0 && same_identity_fraction <= 1.0,
          "corpus: fractions must be in [0, 1]");
  require(max_radio_candidates >= 1 && max_radio_candidates <= 8,
          "corpus: at most 8 radio candidates per source");
  require(n_identities >= 1, "corpus: need identities");
}

namespace {

std::vector<std::vector<int>> split_identities(const CorpusSpec& spec) {
  std::vector<std::vector<int>> pools{spec.train_identities,
                                      spec.val_identities,
                                      spec.test_identities};
  if (pools[0].empty() && pools[1].empty() && pools[2].empty()) {
    // Roughly 60/20/20 over identity indices, but never leave val or test
    // with a single identity (different-speaker mixtures need two).
    const int n = spec.n_identities;
    const int n_eval = n >= 6 ? std::max(2, n / 5) : std::max(1, n / 5);
    const int n_tr = std::max(1, n - 2 * n_eval);
    for (int i = 0; i < n; ++i) {
      if (i < n_tr)
        pools[0].push_back(i);
      else if (i < n_tr + n_eval)
        pools[1].push_back(i);
      else
        pools[2].push_back(i);
    }
  }
  std::vector<bool> seen(static_cast<std::size_t>(spec.n_identities), false);
  for (const auto& pool : pools)
    for (int id : pool) {
      require(id >= 0 && id < spec.n_identities,
              "corpus: identity index out of range");
      require(!seen[std::size_t(id)],
              "corpus: identity pools overlap across splits");
      seen[std::size_t(id)] = true;
    }
  const int counts[3] = {spec.n_train, spec.n_val, spec.n_test};
  for (int s = 0; s < 3; ++s) {
    if (counts[s] == 0) continue;
    require(!pools[std::size_t(s)].empty(), "corpus: empty identity pool");
    require(int(pools[std::size_t(s)].size()) >= 2 || spec.n_src == 1 ||
                spec.same_identity_fraction == 1.0,
            "corpus: different-speaker mixtures need >= 2 identities per "
            "split");
  }
  return pools;
}

}  // namespace

std::vector<std::vector<ManifestEntry>> build_corpus(const CorpusSpec& spec) {
  spec.validate();
  auto pools = split_identities(spec);
  auto identities =
      make_identities(spec.n_identities, mix_seed(spec.seed, 0x69646e74ULL));

  namespace fs = std::filesystem;
  const fs::path root(spec.out_dir);
  const char* split_names[3] = {"train", "val", "test"};
  const int counts[3] = {spec.n_train, spec.n_val, spec.n_test};
  for (int s = 0; s < 3; ++s) {
    if (counts[s] == 0) continue;
    fs::create_directories(root / "wav" / split_names[s]);
    if (spec.with_radio) fs::create_directories(root / "iq" / split_names[s]);
  }

  {
    // Identity table sidecar, handy for inspecting what a corpus contains.
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& who : identities)
      ids.push_back({{"id", who.id},
                     {"pitch_lo", who.pitch_lo},
                     {"pitch_hi", who.pitch_hi},
                     {"brightness", who.brightness}});
    std::ofstream f(root / "identities.json");
    f << ids.dump(2) << "\n";
    require(bool(f), "corpus: cannot write identities.json");
  }

  std::vector<std::vector<ManifestEntry>> all(3);
  for (int s = 0; s < 3; ++s) {
    const std::string split = split_names[s];
    const auto& pool = pools[std::size_t(s)];
    for (int u = 0; u < counts[s]; ++u) {
      Rng rng(mix_seed(spec.seed, std::uint64_t(s) * 0x100000ULL +
                                      std::uint64_t(u)));
      char id_buf[32];
      std::snprintf(id_buf, sizeof id_buf, "%s_%06d", split.c_str(), u);
      ManifestEntry e;
      e.id = id_buf;
      e.split = split;
      e.seed = rng.bits();

      // Identities: all-same (one pitch band) or all-distinct.
      const bool same = rng.uniform() < spec.same_identity_fraction;
      std::vector<int> chosen;
      if (same || pool.size() < 2) {
        const int id = pool[std::size_t(rng.integer(pool.size()))];
        chosen.assign(static_cast<std::size_t>(spec.n_src), id);
      } else {
        auto bag = pool;
        for (int k = 0; k < spec.n_src; ++k) {
          const auto pick = rng.integer(bag.size());
          chosen.push_back(bag[std::size_t(pick)]);
          bag.erase(bag.begin() + std::ptrdiff_t(pick));
          if (bag.empty()) bag = pool;  // more sources than identities
        }
      }
      e.identities = chosen;

      std::vector<Waveform> sources;
      for (int k = 0; k < spec.n_src; ++k)
        sources.push_back(synth_voice(design_voice(
            identities[std::size_t(chosen[std::size_t(k)])], spec.duration_s,
            rng.bits())));

      e.clean = rng.uniform() < spec.clean_fraction;
      const double snr =
          e.clean ? 0.0 : rng.uniform(spec.snr_lo_db, spec.snr_hi_db);
      Waveform noise;
      if (!e.clean) noise = synth_noise(spec.duration_s, 8000.0, rng.bits());
      auto mix = make_mixture(sources, e.clean ? nullptr : &noise, snr,
                              e.clean, e.seed);
      e.gains = mix.gains;
      e.noise_gain = mix.noise_gain;
      e.snr_db = mix.snr_db;
      e.n_samples = int(mix.mixture.samples.size());
      e.sample_rate = 8000.0;

      const fs::path wav_dir = fs::path("wav") / split;
      for (int k = 0; k < spec.n_src; ++k) {
        const auto p = wav_dir / (e.id + "_s" + std::to_string(k) + ".wav");
        write_wav((root / p).string(), sources[std::size_t(k)],
                  WavFormat::float32);
        e.sources.push_back(p.string());
      }
      if (!e.clean) {
        const auto p = wav_dir / (e.id + "_noise.wav");
        write_wav((root / p).string(), noise, WavFormat::float32);
        e.noise = p.string();
      }
      {
        const auto p = wav_dir / (e.id + "_mix.wav");
        write_wav((root / p).string(), mix.mixture, WavFormat::float32);
        e.mixture = p.string();
      }

      if (spec.with_radio) {
        const fs::path iq_dir = fs::path("iq") / split;
        const int n_cand = (s == 0) ? spec.max_radio_candidates : 1;
        for (int k = 0; k < spec.n_src; ++k) {
          RadioPairing where;
          where.range_m = rng.uniform(0.45, 1.0);
          where.azimuth_deg = rng.uniform(-40.0, 40.0);
          // A missed detection at an unlucky position/seed should not sink
          // a whole corpus build: redraw a couple of times, then give up.
          std::vector<IqStream> streams;
          for (int attempt = 0;; ++attempt) {
            try {
              const auto pr_seed = rng.bits();
              streams = (n_cand == 1)
                            ? std::vector<IqStream>{paired_radio(
                                  mix.refs[std::size_t(k)], where, pr_seed)}
                            : paired_radio_candidates(
                                  mix.refs[std::size_t(k)], where, pr_seed,
                                  n_cand);
              break;
            } catch (const std::exception&) {
              if (attempt >= 2) throw;
              where.range_m = rng.uniform(0.45, 1.0);
              where.azimuth_deg = rng.uniform(-40.0, 40.0);
            }
          }
          std::vector<std::string> paths;
          for (std::size_t c = 0; c < streams.size(); ++c) {
            const auto p = iq_dir / (e.id + "_s" + std::to_string(k) + "_c" +
                                     std::to_string(c) + ".iq");
            write_iq((root / p).string(), streams[c]);
            paths.push_back(p.string());
          }
          e.radio.push_back(std::move(paths));
        }
        e.radio_sample_rate = 1000.0;
        if (s == 0) {
          e.augment = true;
          e.augment_policy = spec.train_augment;
          e.augment_seed = rng.bits();
        }
      }
      all[std::size_t(s)].push_back(std::move(e));
    }
    if (counts[s] > 0)
      write_manifest((root / (split + ".jsonl")).string(),
                     all[std::size_t(s)]);
  }
  return all;
}

// ---------------------------------------------------------------------------
// Manifests

std::string manifest_to_json(const ManifestEntry& e) {
  nlohmann::json j{
      {"schema", e.schema},
      {"id", e.id},
      {"split", e.split},
      {"sources", e.sources},
      {"gains", e.gains},
      {"noise", e.noise.empty() ? nlohmann::json(nullptr)
                                : nlohmann::json(e.noise)},
      {"noise_gain",
       e.clean ? nlohmann::json(nullptr) : nlohmann::json(e.noise_gain)},
      {"snr_db", e.clean ? nlohmann::json(nullptr) : nlohmann::json(e.snr_db)},
      {"clean", e.clean},
      {"mixture", e.mixture},
      {"n_samples", e.n_samples},
      {"sample_rate", e.sample_rate},
      {"identities", e.identities},
      {"radio", e.radio},
      {"radio_sample_rate", e.radio_sample_rate},
      {"augment", e.augment ? policy_to_json(e.augment_policy)
                            : nlohmann::json(nullptr)},
      {"augment_seed", e.augment_seed},
      {"seed", e.seed}};
  return j.dump();
}

ManifestEntry manifest_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  require(j.at("schema").get<int>() == 1, "manifest: unknown schema version");
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  e.split = j.at("split").get<std::string>();
  e.sources = j.at("sources").get<std::vector<std::string>>();
  e.gains = j.at("gains").get<std::vector<double>>();
  if (!j.at("noise").is_null()) e.noise = j.at("noise").get<std::string>();
  e.clean = j.at("clean").get<bool>();
  e.noise_gain = e.clean ? 0.0 : j.at("noise_gain").get<double>();
  e.snr_db = e.clean ? std::numeric_limits<double>::quiet_NaN()
                     : j.at("snr_db").get<double>();
  e.mixture = j.at("mixture").get<std::string>();
  e.n_samples = j.at("n_samples").get<int>();
  e.sample_rate = j.at("sample_rate").get<double>();
  e.identities = j.at("identities").get<std::vector<int>>();
  e.radio = j.at("radio").get<std::vector<std::vector<std::string>>>();
  e.radio_sample_rate = j.at("radio_sample_rate").get<double>();
  e.augment = !j.at("augment").is_null();
  if (e.augment) e.augment_policy = policy_from_json(j.at("augment"));
  e.augment_seed = j.at("augment_seed").get<std::uint64_t>();
  e.seed = j.at("seed").get<std::uint64_t>();

  require(e.gains.size() == e.sources.size(),
          "manifest: one gain per source required");
  require(e.radio.empty() || e.radio.size() == e.sources.size(),
          "manifest: one radio stream set per source required");
  require(!e.clean ? e.snr_db >= -5.0 && e.snr_db <= 5.0 : true,
          "manifest: noisy SNR outside [-5, 5] dB");
  require(e.n_samples > 0, "manifest: empty utterance");
  return e;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::binary);
  require(bool(f), "manifest: cannot open " + path);
  for (const auto& e : entries) f << manifest_to_json(e) << "\n";
  require(bool(f), "manifest: write failed on " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), "manifest: cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(manifest_from_json(line));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loading

std::vector<float> flatten_iq(const IqStream& s) {
  std::vector<float> out;
  out.reserve(2 * s.samples.size());
  for (const auto& v : s.samples) out.push_back(float(v.real()));
  for (const auto& v : s.samples) out.push_back(float(v.imag()));
  return out;
}

nn::Utterance load_utterance(const std::string& root, const ManifestEntry& e,
                             int epoch, std::uint64_t seed) {
  namespace fs = std::filesystem;
  const fs::path base(root);
  nn::Utterance u;
  const auto mix = read_wav((base / e.mixture).string());
  const std::size_t n = std::size_t(e.n_samples);
  require(mix.samples.size() >= n, "load: mixture shorter than manifest");
  u.mix.assign(mix.samples.begin(), mix.samples.begin() + std::ptrdiff_t(n));

  for (std::size_t k = 0; k < e.sources.size(); ++k) {
    const auto src = read_wav((base / e.sources[k]).string());
    require(src.samples.size() >= n, "load: source shorter than manifest");
    std::vector<float> ref(n);
    for (std::size_t i = 0; i < n; ++i)
      ref[i] = float(e.gains[k] * src.samples[i]);
    u.refs.push_back(std::move(ref));
  }

  for (std::size_t k = 0; k < e.radio.size(); ++k) {
    const auto& cands = e.radio[k];
    require(!cands.empty(), "load: source without radio candidates");
    const auto key =
        fnv1a(e.id) ^ (std::uint64_t(epoch) * 1315423911ULL + k);
    const auto pick = mix_seed(seed, key) % cands.size();
    auto stream = read_iq((base / cands[pick]).string());
    if (e.augment) {
      const auto rec = draw_augmentation(
          e.augment_policy, stream.samples.size(),
          mix_seed(e.augment_seed, std::uint64_t(epoch) * 8191ULL + k));
      stream = replay_augment(stream, rec);
    }
    u.radio.push_back(flatten_iq(stream));
  }
  return u;
}

std::vector<nn::Utterance> load_split(const std::string& root,
                                      const std::vector<ManifestEntry>& entries,
                                      int epoch, std::uint64_t seed) {
  std::vector<nn::Utterance> out;
  out.reserve(entries.size());
  for (const auto& e : entries)
    out.push_back(load_utterance(root, e, epoch, seed));
  return out;
}

}  // namespace radioses::mixer
