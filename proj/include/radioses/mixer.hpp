#pragma once

// Reproducible synthetic audio-radio corpus construction. Voices are sums of
// harmonics over a wandering pitch trajectory (each identity owns a disjoint
// pitch band, so "same-speaker" mixtures are a controllable variable); the
// paired radio stream for a source is produced by driving the scene simulator
// and the detection front-end with that source's vibration, so training data
// traverses the same pipeline as live captures.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "radioses/frontend.hpp"
#include "radioses/nn/train.hpp"
#include "radioses/signal.hpp"
#include "radioses/sim.hpp"

namespace radioses::mixer {

// ---------------------------------------------------------------------------
// Voice synthesis

struct VoiceIdentity {
  int id = 0;
  double pitch_lo = 100.0;  // Hz
  double pitch_hi = 140.0;
  double brightness = 0.8;  // harmonic amplitude rolloff base, (0, 1]
};

/// n identities with disjoint pitch bands tiling 80..300 Hz (small guard gap
/// between neighbors). Deterministic per seed (seed shuffles band order and
/// jitters brightness).
std::vector<VoiceIdentity> make_identities(int n, std::uint64_t seed);

/// A fully realized utterance plan: per-sample pitch trajectory, per-sample
/// amplitude envelope in [0, 1] (exact zeros are pauses), and one amplitude
/// per harmonic. The seed fixes the harmonics' starting phases.
struct SyntheticVoice {
  std::vector<double> pitch_hz;
  std::vector<double> envelope;
  std::vector<double> harmonic_amps;
  double sample_rate = 8000.0;
  std::uint64_t seed = 0;
};

/// Draw a voice plan for an identity: pitch wanders inside the identity's
/// band, the envelope alternates syllable-like bursts with short pauses, and
/// harmonic amplitudes follow brightness^k with mild jitter.
SyntheticVoice design_voice(const VoiceIdentity& who, double duration_s,
                            std::uint64_t seed);

/// Render: x[n] = envelope[n] * sum_k amps[k] * sin(phase_k[n]), with each
/// harmonic's phase accumulated from the pitch trajectory. Deterministic.
Waveform synth_voice(const SyntheticVoice& spec);

/// Stand-in for recorded background noise: low-passed white noise plus a few
/// random tonal interferers. Deterministic per seed.
Waveform synth_noise(double duration_s, double sample_rate,
                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Mixing

struct Mixture {
  Waveform mixture;
  std::vector<Waveform> refs;  // loudness-normalized truncated sources
  std::vector<double> gains;   // gain applied to each raw source
  double noise_gain = 0.0;     // 0 when clean
  double snr_db = 0.0;
  bool clean = true;
  std::uint64_t seed = 0;  // provenance only; mixing itself is deterministic
};

/// Truncate everything to the shortest input, normalize each source to the
/// shared loudness target, and (unless clean) scale the noise so that
/// 10*log10(P_speech_sum / P_noise) == snr_db measured on the result.
/// snr_db outside [-5, 5] is rejected for noisy mixtures.
Mixture make_mixture(const std::vector<Waveform>& sources,
                     const Waveform* noise, double snr_db, bool clean,
                     std::uint64_t seed);

/// RMS loudness target applied to every source before summation, dBFS.
constexpr double kSourceLoudnessDb = -25.0;

// ---------------------------------------------------------------------------
// Radio pairing

struct RadioPairing {
  double range_m = 0.55;
  double azimuth_deg = 0.0;
  double peak_um = 5.0;  // skin vibration amplitude for full-scale audio
  RadarConfig radar;
  FrontendConfig frontend;
};

/// Simulate a scene holding one person at the given position whose skin
/// vibrates with the source audio (plus randomized breathing and sway), run
/// detection, and pull the person's IQ stream from the beamformed plane.
/// The stream is 90 Hz high-passed — it is exactly what the network consumes.
/// Throws with scene diagnostics when the front-end loses the person.
IqStream paired_radio(const Waveform& source, const RadioPairing& where,
                      std::uint64_t seed);

/// Same pipeline, but returns up to max_candidates streams from distinct
/// member cells of the detected cluster (training-time bin diversity).
std::vector<IqStream> paired_radio_candidates(const Waveform& source,
                                              const RadioPairing& where,
                                              std::uint64_t seed,
                                              int max_candidates);

// ---------------------------------------------------------------------------
// Radio augmentation

struct AugmentPolicy {
  double rotate_prob = 1.0;  // random IQ-plane rotation
  double noise_prob = 0.0;
  double noise_snr_lo_db = -10.0;
  double noise_snr_hi_db = 20.0;
  double zero_prob = 0.0;  // blank one random span
  double zero_frac_lo = 0.05;
  double zero_frac_hi = 0.25;
  double drop_prob = 0.0;  // replace the whole stream with zeros
};

/// Every random choice made for one stream. Replaying the record on the same
/// input reproduces the augmented stream bit for bit (noise is regenerated
/// from noise_seed).
struct AugmentationRecord {
  bool rotated = false;
  double rotation_rad = 0.0;
  bool noised = false;
  double noise_snr_db = 0.0;
  std::uint64_t noise_seed = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> zero_spans;  // [b, e)
  bool dropped = false;
};

nlohmann::json augmentation_to_json(const AugmentationRecord& rec);
AugmentationRecord augmentation_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const AugmentPolicy& p);
AugmentPolicy policy_from_json(const nlohmann::json& j);

/// Roll the dice for one stream of n samples.
AugmentationRecord draw_augmentation(const AugmentPolicy& policy,
                                     std::size_t n_samples,
                                     std::uint64_t seed);

/// Apply a record: rotate, add sample-mean-free complex noise at the recorded
/// SNR (power measured against the input), zero the recorded spans, or drop.
IqStream replay_augment(const IqStream& in, const AugmentationRecord& rec);

/// draw_augmentation + replay_augment; the record lands in *rec if given.
IqStream augment_radio(const IqStream& in, const AugmentPolicy& policy,
                       std::uint64_t seed, AugmentationRecord* rec = nullptr);

// ---------------------------------------------------------------------------
// Corpus build

struct CorpusSpec {
  std::string out_dir;
  int n_train = 0, n_val = 0, n_test = 0;
  int n_src = 2;
  double duration_s = 3.0;
  // Mixtures shorter than this are invalid; lower it explicitly only for
  // miniature smoke corpora.
  double min_duration_s = 3.0;
  int n_identities = 10;
  // Indices into the identity list; left empty they default to a 60/20/20
  // partition. Overlap between splits is rejected.
  std::vector<int> train_identities, val_identities, test_identities;
  double clean_fraction = 0.5;
  double snr_lo_db = -5.0, snr_hi_db = 5.0;
  // Fraction of mixtures whose sources all come from one identity
  // (same pitch band), the hard case audio-only separation struggles with.
  double same_identity_fraction = 0.3;
  int max_radio_candidates = 8;  // per source, train split only
  bool with_radio = true;
  AugmentPolicy train_augment;  // stored in the manifest, applied at load
  std::uint64_t seed = 0;

  void validate() const;
};

/// One manifest line. Paths are relative to the corpus root.
struct ManifestEntry {
  int schema = 1;
  std::string id;
  std::string split;
  std::vector<std::string> sources;
  std::vector<double> gains;
  std::string noise;  // empty when clean
  double noise_gain = 0.0;
  double snr_db = 0.0;  // meaningless when clean (JSON null)
  bool clean = true;
  std::string mixture;
  int n_samples = 0;
  double sample_rate = 8000.0;
  std::vector<int> identities;
  std::vector<std::vector<std::string>> radio;  // [source][candidate]
  double radio_sample_rate = 1000.0;
  bool augment = false;
  AugmentPolicy augment_policy;
  std::uint64_t augment_seed = 0;
  std::uint64_t seed = 0;
};

std::string manifest_to_json(const ManifestEntry& e);
ManifestEntry manifest_from_json(const std::string& line);

/// JSON-lines manifest files.
void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

/// Generate sources, noise, mixtures, and paired radio streams for all three
/// splits under spec.out_dir (wav/<split>/, iq/<split>/, <split>.jsonl).
/// Identity pools are disjoint across splits; regeneration with the same spec
/// is byte-identical. Returns the entries grouped [train, val, test].
std::vector<std::vector<ManifestEntry>> build_corpus(const CorpusSpec& spec);

// ---------------------------------------------------------------------------
// Loading for training / evaluation

/// Materialize one utterance. For entries with several radio candidates per
/// source, the candidate is chosen by (epoch, utterance id, source, seed) so
/// every epoch sees a different but reproducible bin. When the entry carries
/// an augmentation policy and augment=true, each chosen stream is augmented
/// with a record seeded by the same key.
nn::Utterance load_utterance(const std::string& root, const ManifestEntry& e,
                             int epoch, std::uint64_t seed);

/// Load a whole split; for evaluation sets pass epoch 0 (they have a single
/// candidate per source and no augmentation policy, so the epoch is inert).
std::vector<nn::Utterance> load_split(const std::string& root,
                                      const std::vector<ManifestEntry>& entries,
                                      int epoch, std::uint64_t seed);

/// Flatten an IQ stream to the network's radio input layout: row of reals
/// then row of imaginaries.
std::vector<float> flatten_iq(const IqStream& s);

}  // namespace radioses::mixer
