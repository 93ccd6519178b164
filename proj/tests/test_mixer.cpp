#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "radioses/iq_io.hpp"
#include "radioses/mixer.hpp"
#include "radioses/wav_io.hpp"

using namespace radioses;
using namespace radioses::mixer;

namespace {

constexpr double kPi = 3.14159265358979323846;

double fft_peak_hz(const std::vector<double>& x, double fs) {
  std::vector<cdouble> buf(x.begin(), x.end());
  buf.resize(next_pow2(buf.size()), cdouble{0.0, 0.0});
  auto spec = fft(buf);
  std::size_t peak = 1;
  for (std::size_t k = 1; k < spec.size() / 2; ++k)
    if (std::abs(spec[k]) > std::abs(spec[peak])) peak = k;
  return double(peak) * fs / double(spec.size());
}

double mean_power(const IqStream& s) {
  double p = 0.0;
  for (const auto& v : s.samples) p += std::norm(v);
  return p / double(s.samples.size());
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("identities tile the pitch range with disjoint bands") {
  auto ids = make_identities(10, 77);
  REQUIRE(ids.size() == 10);
  for (std::size_t a = 0; a < ids.size(); ++a) {
    CHECK(ids[a].pitch_lo >= 80.0);
    CHECK(ids[a].pitch_hi <= 300.0);
    CHECK(ids[a].pitch_lo < ids[a].pitch_hi);
    for (std::size_t b = a + 1; b < ids.size(); ++b) {
      const bool disjoint = ids[a].pitch_hi < ids[b].pitch_lo ||
                            ids[b].pitch_hi < ids[a].pitch_lo;
      CHECK(disjoint);
    }
  }
  // deterministic per seed, shuffled across seeds
  auto again = make_identities(10, 77);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK(ids[i].pitch_lo == again[i].pitch_lo);
    CHECK(ids[i].brightness == again[i].brightness);
  }
  CHECK_THROWS(make_identities(0, 1));
}

TEST_CASE("constant-pitch single-harmonic voice is a pure tone") {
  const double fs = 8000.0;
  SyntheticVoice spec;
  spec.sample_rate = fs;
  spec.seed = 555;
  spec.pitch_hz.assign(4000, 150.0);
  spec.envelope.assign(4000, 1.0);
  spec.harmonic_amps = {1.0};
  auto w = synth_voice(spec);
  REQUIRE(w.samples.size() == 4000);
  Rng rng(spec.seed);
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  for (int n = 0; n < 4000; ++n) {
    const double want = std::sin(phi + 2.0 * kPi * 150.0 * n / fs);
    CHECK(std::abs(w.samples[std::size_t(n)] - want) < 1e-8);
  }
}

TEST_CASE("envelope pauses map to exact zeros") {
  SyntheticVoice spec;
  spec.seed = 9;
  spec.pitch_hz.assign(8000, 120.0);
  spec.envelope.assign(8000, 0.8);
  for (int i = 2000; i < 6000; ++i) spec.envelope[std::size_t(i)] = 0.0;
  spec.harmonic_amps = {1.0, 0.5};
  auto w = synth_voice(spec);
  for (int i = 2000; i < 6000; ++i) CHECK(w.samples[std::size_t(i)] == 0.0);
  double live = 0.0;
  for (int i = 0; i < 2000; ++i) live += std::abs(w.samples[std::size_t(i)]);
  CHECK(live > 0.0);
}

TEST_CASE("disjoint pitch bands give disjoint spectral peaks") {
  auto ids = make_identities(6, 3);
  // Single harmonic so the fundamental is the global peak.
  auto lo_id = ids[0], hi_id = ids[0];
  for (const auto& id : ids) {
    if (id.pitch_lo < lo_id.pitch_lo) lo_id = id;
    if (id.pitch_lo > hi_id.pitch_lo) hi_id = id;
  }
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto a = design_voice(lo_id, 1.0, seed);
    auto b = design_voice(hi_id, 1.0, seed + 100);
    a.harmonic_amps = {1.0};
    b.harmonic_amps = {1.0};
    a.envelope.assign(a.envelope.size(), 1.0);
    b.envelope.assign(b.envelope.size(), 1.0);
    const double pa = fft_peak_hz(synth_voice(a).samples, 8000.0);
    const double pb = fft_peak_hz(synth_voice(b).samples, 8000.0);
    const double res = 8000.0 / double(next_pow2(8000));  // bin width
    CHECK(pa >= lo_id.pitch_lo - res);
    CHECK(pa <= lo_id.pitch_hi + res);
    CHECK(pb >= hi_id.pitch_lo - res);
    CHECK(pb <= hi_id.pitch_hi + res);
    CHECK(pa < pb);
  }
}

TEST_CASE("designed voices stay inside their band and start voiced") {
  auto ids = make_identities(8, 21);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto& who = ids[seed % ids.size()];
    auto v = design_voice(who, 1.0, seed * 13 + 1);
    REQUIRE(v.pitch_hz.size() == 8000);
    REQUIRE(v.envelope.size() == 8000);
    double env_sum = 0.0;
    for (std::size_t i = 0; i < v.pitch_hz.size(); ++i) {
      CHECK(v.pitch_hz[i] >= who.pitch_lo);
      CHECK(v.pitch_hz[i] <= who.pitch_hi);
      CHECK(v.envelope[i] >= 0.0);
      CHECK(v.envelope[i] <= 1.0);
      env_sum += v.envelope[i];
    }
    CHECK(env_sum > 0.0);
    CHECK(v.envelope[100] > 0.0);  // inside the first (voiced) burst
  }
  // determinism
  auto a = design_voice(ids[2], 0.5, 33);
  auto b = design_voice(ids[2], 0.5, 33);
  CHECK(a.pitch_hz == b.pitch_hz);
  CHECK(a.envelope == b.envelope);
  CHECK(a.harmonic_amps == b.harmonic_amps);
  CHECK(a.seed == b.seed);
}

TEST_CASE("synth_voice validates its spec") {
  SyntheticVoice bad;
  bad.pitch_hz.assign(100, 100.0);
  bad.envelope.assign(99, 1.0);
  bad.harmonic_amps = {1.0};
  CHECK_THROWS(synth_voice(bad));
  bad.envelope.assign(100, 1.5);
  CHECK_THROWS(synth_voice(bad));
  bad.envelope.assign(100, 1.0);
  bad.pitch_hz[50] = 0.0;
  CHECK_THROWS(synth_voice(bad));
}

TEST_CASE("synthetic noise is deterministic and broadband") {
  auto a = synth_noise(1.0, 8000.0, 4242);
  auto b = synth_noise(1.0, 8000.0, 4242);
  REQUIRE(a.samples.size() == 8000);
  CHECK(a.samples == b.samples);
  CHECK(std::abs(rms(a.samples) - 0.05) < 1e-12);
  auto c = synth_noise(1.0, 8000.0, 4243);
  CHECK(a.samples != c.samples);
}

TEST_CASE("clean mixture is the sum of loudness-normalized sources") {
  auto ids = make_identities(4, 5);
  std::vector<Waveform> srcs{synth_voice(design_voice(ids[0], 1.0, 1)),
                             synth_voice(design_voice(ids[1], 1.0, 2))};
  auto m = make_mixture(srcs, nullptr, 0.0, true, 99);
  REQUIRE(m.refs.size() == 2);
  REQUIRE(m.gains.size() == 2);
  CHECK(m.clean);
  CHECK(m.noise_gain == 0.0);
  CHECK(std::isnan(m.snr_db));
  const double target = std::pow(10.0, kSourceLoudnessDb / 20.0);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(std::abs(rms(m.refs[k].samples) - target) < 1e-9);
    // gains reproduce the refs from the raw sources
    for (std::size_t i = 0; i < m.refs[k].samples.size(); ++i)
      CHECK(std::abs(m.gains[k] * srcs[k].samples[i] -
                     m.refs[k].samples[i]) < 1e-12);
  }
  for (std::size_t i = 0; i < m.mixture.samples.size(); ++i)
    CHECK(std::abs(m.mixture.samples[i] -
                   (m.refs[0].samples[i] + m.refs[1].samples[i])) < 1e-12);
}

TEST_CASE("noisy mixture hits the requested SNR exactly") {
  auto ids = make_identities(4, 5);
  std::vector<Waveform> srcs{synth_voice(design_voice(ids[0], 1.0, 3)),
                             synth_voice(design_voice(ids[2], 1.0, 4))};
  auto noise = synth_noise(1.0, 8000.0, 11);
  for (double snr : {0.0, -5.0, 5.0, 2.5}) {
    auto m = make_mixture(srcs, &noise, snr, false, 1);
    std::vector<double> speech(m.mixture.samples.size(), 0.0);
    for (const auto& r : m.refs)
      for (std::size_t i = 0; i < speech.size(); ++i)
        speech[i] += r.samples[i];
    double p_sp = 0.0, p_nz = 0.0;
    for (std::size_t i = 0; i < speech.size(); ++i) {
      p_sp += speech[i] * speech[i];
      const double nz = m.mixture.samples[i] - speech[i];
      p_nz += nz * nz;
    }
    const double measured = 10.0 * std::log10(p_sp / p_nz);
    CHECK(std::abs(measured - snr) < 1e-6);
    if (snr == 0.0) CHECK(std::abs(p_sp / p_nz - 1.0) < 1e-6);
  }
  CHECK_THROWS(make_mixture(srcs, &noise, 5.1, false, 1));
  CHECK_THROWS(make_mixture(srcs, &noise, -12.0, false, 1));
  CHECK_THROWS(make_mixture(srcs, nullptr, 0.0, false, 1));
}

TEST_CASE("mixture truncates to the shortest input") {
  auto ids = make_identities(4, 5);
  std::vector<Waveform> srcs{synth_voice(design_voice(ids[0], 1.0, 3)),
                             synth_voice(design_voice(ids[1], 1.0, 4))};
  auto noise = synth_noise(0.5, 8000.0, 11);  // shorter than the sources
  auto m = make_mixture(srcs, &noise, 0.0, false, 1);
  CHECK(m.mixture.samples.size() == 4000);
  CHECK(m.refs[0].samples.size() == 4000);
}

TEST_CASE("paired radio stream carries the source's pitch line") {
  SyntheticVoice spec;
  spec.seed = 2;
  spec.pitch_hz.assign(8000, 150.0);
  spec.envelope.assign(8000, 1.0);
  spec.harmonic_amps = {1.0};
  auto voice = synth_voice(spec);
  RadioPairing where;
  auto s = paired_radio(voice, where, 31);
  REQUIRE(s.samples.size() == 1000);
  CHECK(s.sample_rate == 1000.0);
  // FFT peak of the complex stream sits at +-150 Hz
  auto buf = s.samples;
  buf.resize(1024, cdouble{0.0, 0.0});
  auto spec_f = fft(buf);
  std::size_t peak = 1;
  for (std::size_t k = 1; k < spec_f.size(); ++k)
    if (std::abs(spec_f[k]) > std::abs(spec_f[peak])) peak = k;
  double f = double(peak) * 1000.0 / double(spec_f.size());
  if (f > 500.0) f -= 1000.0;
  CHECK(std::abs(std::abs(f) - 150.0) < 15.0);

  // determinism
  auto s2 = paired_radio(voice, where, 31);
  REQUIRE(s2.samples.size() == s.samples.size());
  for (std::size_t i = 0; i < s.samples.size(); ++i)
    CHECK(s.samples[i] == s2.samples[i]);
}

TEST_CASE("silent source leaves the stream at the noise floor") {
  // The post-filter floor of this instrument is dominated by the person's
  // own micro-motion (body sway spreads carrier power past the filter edge),
  // so the floor is measured, not computed: an independently seeded person
  // who also says nothing. A silent source must not rise above it by 3 dB,
  // and must not leave a line in the speech band.
  Waveform silence;
  silence.sample_rate = 8000.0;
  silence.samples.assign(8000, 0.0);
  RadioPairing where;
  auto s = paired_radio(silence, where, 17);
  double floor = 0.0;
  for (std::uint64_t seed = 100; seed < 103; ++seed)
    floor += mean_power(paired_radio(silence, where, seed)) / 3.0;
  CHECK(mean_power(s) < 2.0 * floor);
  // the voiced counterpart (pitch-line test above) is what a non-silent
  // source adds on top of this floor
}

TEST_CASE("radio pairing rejects bad geometry and bad lengths") {
  Waveform w;
  w.sample_rate = 8000.0;
  w.samples.assign(8000, 0.1);
  RadioPairing outside;
  outside.azimuth_deg = 75.0;
  CHECK_THROWS(paired_radio(w, outside, 1));
  RadioPairing far;
  far.range_m = 50.0;
  CHECK_THROWS(paired_radio(w, far, 1));
  Waveform ragged;
  ragged.sample_rate = 8000.0;
  ragged.samples.assign(8001, 0.1);  // not a whole number of frames
  CHECK_THROWS(paired_radio(ragged, RadioPairing{}, 1));
}

TEST_CASE("training candidates are distinct cells of the same person") {
  auto ids = make_identities(4, 5);
  auto voice = synth_voice(design_voice(ids[1], 1.0, 8));
  RadioPairing where;
  auto cands = paired_radio_candidates(voice, where, 23, 8);
  REQUIRE(cands.size() >= 1);
  CHECK(cands.size() <= 8);
  for (std::size_t a = 0; a < cands.size(); ++a)
    for (std::size_t b = a + 1; b < cands.size(); ++b)
      CHECK(cands[a].samples != cands[b].samples);
  CHECK_THROWS(paired_radio_candidates(voice, where, 23, 9));
  CHECK_THROWS(paired_radio_candidates(voice, where, 23, 0));
}

TEST_CASE("rotation-only augmentation preserves magnitudes") {
  auto ids = make_identities(4, 5);
  auto voice = synth_voice(design_voice(ids[0], 1.0, 51));
  auto s = paired_radio(voice, RadioPairing{}, 3);
  AugmentPolicy pol;  // rotate_prob = 1, everything else 0
  AugmentationRecord rec;
  auto out = augment_radio(s, pol, 5, &rec);
  CHECK(rec.rotated);
  CHECK(!rec.noised);
  CHECK(!rec.dropped);
  CHECK(rec.zero_spans.empty());
  REQUIRE(out.samples.size() == s.samples.size());
  for (std::size_t i = 0; i < s.samples.size(); ++i)
    CHECK(std::abs(std::abs(out.samples[i]) - std::abs(s.samples[i])) <
          1e-12);
}

TEST_CASE("drop augmentation zeroes the whole stream") {
  IqStream s;
  s.samples.assign(500, cdouble{0.3, -0.2});
  AugmentPolicy pol;
  pol.rotate_prob = 0.0;
  pol.drop_prob = 1.0;
  AugmentationRecord rec;
  auto out = augment_radio(s, pol, 7, &rec);
  CHECK(rec.dropped);
  for (const auto& v : out.samples) CHECK(v == cdouble{0.0, 0.0});
}

TEST_CASE("noise augmentation lands at the recorded SNR") {
  auto ids = make_identities(4, 5);
  auto voice = synth_voice(design_voice(ids[2], 1.0, 52));
  auto s = paired_radio(voice, RadioPairing{}, 4);
  AugmentPolicy pol;
  pol.rotate_prob = 0.0;
  pol.noise_prob = 1.0;
  pol.noise_snr_lo_db = 0.0;
  pol.noise_snr_hi_db = 0.0;
  AugmentationRecord rec;
  auto out = augment_radio(s, pol, 8, &rec);
  REQUIRE(rec.noised);
  CHECK(rec.noise_snr_db == 0.0);
  double p_in = 0.0, p_added = 0.0;
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    p_in += std::norm(s.samples[i]);
    p_added += std::norm(out.samples[i] - s.samples[i]);
  }
  const double ratio_db = 10.0 * std::log10(p_in / p_added);
  CHECK(std::abs(ratio_db) < 0.5);
  // the added noise is sample-mean-free so it cannot reintroduce DC
  cdouble mean{0.0, 0.0};
  for (std::size_t i = 0; i < s.samples.size(); ++i)
    mean += out.samples[i] - s.samples[i];
  CHECK(std::abs(mean) / double(s.samples.size()) < 1e-12);
}

TEST_CASE("zero-span augmentation blanks exactly the recorded span") {
  IqStream s;
  Rng rng(66);
  for (int i = 0; i < 800; ++i)
    s.samples.push_back(cdouble{rng.gaussian(), rng.gaussian()});
  AugmentPolicy pol;
  pol.rotate_prob = 0.0;
  pol.zero_prob = 1.0;
  AugmentationRecord rec;
  auto out = augment_radio(s, pol, 13, &rec);
  REQUIRE(rec.zero_spans.size() == 1);
  const auto [b, e] = rec.zero_spans[0];
  CHECK(b >= 0);
  CHECK(e > b);
  CHECK(std::size_t(e) <= s.samples.size());
  const double frac = double(e - b) / double(s.samples.size());
  CHECK(frac >= pol.zero_frac_lo - 1e-3);
  CHECK(frac <= pol.zero_frac_hi + 1e-3);
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    if (std::int64_t(i) >= b && std::int64_t(i) < e)
      CHECK(out.samples[i] == cdouble{0.0, 0.0});
    else
      CHECK(out.samples[i] == s.samples[i]);
  }
}

TEST_CASE("augmentation records replay bit for bit") {
  auto ids = make_identities(4, 5);
  auto voice = synth_voice(design_voice(ids[3], 1.0, 53));
  auto s = paired_radio(voice, RadioPairing{}, 6);
  AugmentPolicy pol;
  pol.noise_prob = 0.7;
  pol.zero_prob = 0.7;
  pol.drop_prob = 0.2;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    AugmentationRecord rec;
    auto out = augment_radio(s, pol, seed, &rec);
    // through JSON and back, then replayed
    auto rec2 = augmentation_from_json(augmentation_to_json(rec));
    auto replay = replay_augment(s, rec2);
    REQUIRE(replay.samples.size() == out.samples.size());
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      CHECK(replay.samples[i].real() == out.samples[i].real());
      CHECK(replay.samples[i].imag() == out.samples[i].imag());
    }
  }
}

TEST_CASE("manifest entries survive a JSON round trip") {
  ManifestEntry e;
  e.id = "train_000007";
  e.split = "train";
  e.sources = {"wav/train/a.wav", "wav/train/b.wav"};
  e.gains = {0.31, 1.7};
  e.noise = "wav/train/n.wav";
  e.noise_gain = 0.42;
  e.snr_db = -3.25;
  e.clean = false;
  e.mixture = "wav/train/mix.wav";
  e.n_samples = 8000;
  e.identities = {2, 2};
  e.radio = {{"iq/a0.iq", "iq/a1.iq"}, {"iq/b0.iq"}};
  e.augment = true;
  e.augment_policy.noise_prob = 0.25;
  e.augment_seed = 991;
  e.seed = 123456789;
  auto r = manifest_from_json(manifest_to_json(e));
  CHECK(r.id == e.id);
  CHECK(r.sources == e.sources);
  CHECK(r.gains == e.gains);
  CHECK(r.noise == e.noise);
  CHECK(r.noise_gain == e.noise_gain);
  CHECK(r.snr_db == e.snr_db);
  CHECK(r.clean == e.clean);
  CHECK(r.n_samples == e.n_samples);
  CHECK(r.identities == e.identities);
  CHECK(r.radio == e.radio);
  CHECK(r.augment);
  CHECK(r.augment_policy.noise_prob == 0.25);
  CHECK(r.augment_seed == e.augment_seed);
  CHECK(r.seed == e.seed);

  ManifestEntry clean_e = e;
  clean_e.clean = true;
  clean_e.noise.clear();
  auto rc = manifest_from_json(manifest_to_json(clean_e));
  CHECK(rc.clean);
  CHECK(rc.noise.empty());
  CHECK(std::isnan(rc.snr_db));

  // invalid entries are rejected
  auto j = nlohmann::json::parse(manifest_to_json(e));
  j["gains"] = {0.31};
  CHECK_THROWS(manifest_from_json(j.dump()));
  j = nlohmann::json::parse(manifest_to_json(e));
  j["snr_db"] = -9.0;
  CHECK_THROWS(manifest_from_json(j.dump()));
  j = nlohmann::json::parse(manifest_to_json(e));
  j["schema"] = 2;
  CHECK_THROWS(manifest_from_json(j.dump()));
}

TEST_CASE("corpus build: reconstruction, SNR, splits, determinism") {
  namespace fs = std::filesystem;
  const auto root = fs::temp_directory_path() / "radioses_corpus_a";
  const auto root2 = fs::temp_directory_path() / "radioses_corpus_b";
  fs::remove_all(root);
  fs::remove_all(root2);

  CorpusSpec spec;
  spec.out_dir = root.string();
  spec.n_train = 2;
  spec.n_val = 1;
  spec.n_test = 1;
  spec.n_src = 2;
  spec.duration_s = 1.0;
  spec.min_duration_s = 1.0;
  spec.n_identities = 6;
  spec.clean_fraction = 0.5;
  spec.same_identity_fraction = 0.5;
  spec.max_radio_candidates = 3;
  spec.seed = 42;
  auto all = build_corpus(spec);
  REQUIRE(all.size() == 3);
  CHECK(all[0].size() == 2);
  CHECK(all[1].size() == 1);
  CHECK(all[2].size() == 1);

  // identity pools are disjoint across splits
  std::vector<std::vector<int>> split_ids(3);
  for (int s = 0; s < 3; ++s)
    for (const auto& e : all[std::size_t(s)])
      for (int id : e.identities) split_ids[std::size_t(s)].push_back(id);
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      for (int ida : split_ids[std::size_t(a)])
        for (int idb : split_ids[std::size_t(b)]) CHECK(ida != idb);

  for (int s = 0; s < 3; ++s) {
    for (const auto& e : all[std::size_t(s)]) {
      REQUIRE(e.radio.size() == 2);
      for (const auto& cands : e.radio) {
        CHECK(!cands.empty());
        CHECK(cands.size() <= (s == 0 ? 3 : 1));
      }
      CHECK(e.augment == (s == 0));

      // mixture reconstruction from disk: gains and files are sufficient
      auto mix = read_wav((root / e.mixture).string());
      std::vector<double> rebuilt(mix.samples.size(), 0.0);
      for (std::size_t k = 0; k < e.sources.size(); ++k) {
        auto src = read_wav((root / e.sources[k]).string());
        for (std::size_t i = 0; i < rebuilt.size(); ++i)
          rebuilt[i] += e.gains[k] * src.samples[i];
      }
      if (!e.clean) {
        auto nz = read_wav((root / e.noise).string());
        for (std::size_t i = 0; i < rebuilt.size(); ++i)
          rebuilt[i] += e.noise_gain * nz.samples[i];
      }
      double worst = 0.0;
      for (std::size_t i = 0; i < rebuilt.size(); ++i)
        worst = std::max(worst, std::abs(rebuilt[i] - mix.samples[i]));
      CHECK(worst < 1e-6);

      // loudness precondition (through float32 storage)
      const double target = std::pow(10.0, kSourceLoudnessDb / 20.0);
      for (std::size_t k = 0; k < e.sources.size(); ++k) {
        auto src = read_wav((root / e.sources[k]).string());
        for (auto& v : src.samples) v *= e.gains[k];
        CHECK(std::abs(rms(src.samples) - target) < 1e-5);
      }

      // measured SNR within 0.1 dB of the manifest value
      if (!e.clean) {
        auto nz = read_wav((root / e.noise).string());
        std::vector<double> speech(mix.samples.size(), 0.0);
        for (std::size_t k = 0; k < e.sources.size(); ++k) {
          auto src = read_wav((root / e.sources[k]).string());
          for (std::size_t i = 0; i < speech.size(); ++i)
            speech[i] += e.gains[k] * src.samples[i];
        }
        double p_sp = 0.0, p_nz = 0.0;
        for (std::size_t i = 0; i < speech.size(); ++i) {
          p_sp += speech[i] * speech[i];
          const double x = e.noise_gain * nz.samples[i];
          p_nz += x * x;
        }
        CHECK(std::abs(10.0 * std::log10(p_sp / p_nz) - e.snr_db) < 0.1);
      }
    }
  }

  // manifest read-back equals the returned entries
  auto rt = read_manifest((root / "train.jsonl").string());
  REQUIRE(rt.size() == 2);
  CHECK(manifest_to_json(rt[0]) == manifest_to_json(all[0][0]));

  // regeneration is byte-identical
  spec.out_dir = root2.string();
  build_corpus(spec);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"})
    CHECK(slurp((root / f).string()) == slurp((root2 / f).string()));
  CHECK(slurp((root / all[0][0].mixture).string()) ==
        slurp((root2 / all[0][0].mixture).string()));
  CHECK(slurp((root / all[0][0].radio[0][0]).string()) ==
        slurp((root2 / all[0][0].radio[0][0]).string()));

  fs::remove_all(root2);

  // loader: shapes, rate consistency, candidate rotation across epochs
  const auto& e0 = all[0][0];
  auto u0 = load_utterance(root.string(), e0, 0, 7);
  CHECK(u0.mix.size() == 8000);
  REQUIRE(u0.refs.size() == 2);
  CHECK(u0.refs[0].size() == 8000);
  REQUIRE(u0.radio.size() == 2);
  CHECK(u0.radio[0].size() == 2 * 1000);
  double ref_e = 0.0;
  for (float v : u0.refs[0]) ref_e += double(v) * double(v);
  CHECK(ref_e > 0.0);

  bool radio_varies = false;
  for (int epoch = 1; epoch <= 6 && !radio_varies; ++epoch) {
    auto ue = load_utterance(root.string(), e0, epoch, 7);
    radio_varies = ue.radio[0] != u0.radio[0] || ue.radio[1] != u0.radio[1];
  }
  CHECK(radio_varies);  // candidates and augmentation rotate per epoch

  // val entries load identically across epochs (single candidate, no augment)
  const auto& ev = all[1][0];
  auto v0 = load_utterance(root.string(), ev, 0, 7);
  auto v5 = load_utterance(root.string(), ev, 5, 7);
  CHECK(v0.radio[0] == v5.radio[0]);
  CHECK(v0.radio[1] == v5.radio[1]);

  auto split = load_split(root.string(), all[1], 0, 7);
  CHECK(split.size() == 1);

  fs::remove_all(root);
}

TEST_CASE("corpus spec validation") {
  CorpusSpec spec;
  spec.out_dir = "/tmp/radioses_never_written";
  spec.n_train = 1;
  spec.duration_s = 1.0;
  spec.min_duration_s = 1.0;
  spec.n_identities = 6;

  auto bad = spec;
  bad.duration_s = 0.5;
  bad.min_duration_s = 3.0;  // shorter than the floor
  CHECK_THROWS(build_corpus(bad));

  bad = spec;
  bad.train_identities = {0, 1, 2};
  bad.val_identities = {2, 3};  // overlap
  bad.n_val = 1;
  CHECK_THROWS(build_corpus(bad));

  bad = spec;
  bad.max_radio_candidates = 9;
  CHECK_THROWS(build_corpus(bad));

  bad = spec;
  bad.snr_lo_db = -7.0;
  CHECK_THROWS(build_corpus(bad));

  bad = spec;
  bad.duration_s = 1.0001;  // not a whole number of radio frames
  bad.min_duration_s = 0.5;
  CHECK_THROWS(build_corpus(bad));
}
