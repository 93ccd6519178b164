#pragma once

// Evaluation harness: per-utterance SiSDR/SiSDRi/SIR scoring with fixed or
// best-permutation assignment, source-association accounting, and the
// degradation protocols (radio noise sweep, truncated radio, dropped
// streams, trained-variant comparison) with CSV/JSON report output.

#include <string>
#include <vector>

#include "radioses/nn/train.hpp"

namespace radioses::eval {

enum class Assignment { kFixed, kBestPermutation };

/// SiSDR of each estimate against a reference. kFixed pairs estimate i with
/// reference i (the radio-conditioned operating mode); kBestPermutation
/// scores the assignment that maximizes the mean (the audio-only protocol).
struct PairScores {
  std::vector<double> per_source;  // dB, estimate i vs reference perm[i]
  std::vector<int> perm;
  double mean = 0.0;
};
PairScores sisdr_eval(const std::vector<std::vector<double>>& refs,
                      const std::vector<std::vector<double>>& ests,
                      Assignment mode);

/// Per-estimate signal-to-interference ratio in dB. The target part is the
/// projection of the estimate onto its reference; the interference part is
/// the projection of the remainder onto the span of the other references.
/// Time-invariant projections only, ratios eps-guarded and capped at +80 dB.
/// Needs >= 2 references; linearly dependent references are rejected.
std::vector<double> sir(const std::vector<std::vector<double>>& refs,
                        const std::vector<std::vector<double>>& ests);

struct EvalConfig {
  Assignment assignment = Assignment::kFixed;
  // An utterance counts as correctly associated when the fixed-assignment
  // mean SiSDR is within this many dB of the best-permutation mean.
  double assoc_threshold_db = 3.0;
  int batch_size = 8;
};

/// Everything measured on one utterance. Entry i scores estimate i against
/// reference assignment[i]; input SiSDR uses the same pairing so the
/// improvement column is consistent per row.
struct UtteranceEval {
  std::vector<double> input_sisdr;   // mixture vs paired reference
  std::vector<double> output_sisdr;  // estimate vs paired reference
  std::vector<double> sisdri;        // output - input
  std::vector<double> sir_db;        // interference leakage per estimate
  std::vector<int> assignment;
  bool association_correct = true;
};
UtteranceEval score_utterance(const std::vector<double>& mix,
                              const std::vector<std::vector<double>>& refs,
                              const std::vector<std::vector<double>>& ests,
                              const EvalConfig& cfg);

/// A whole-set scorecard; aggregates are plain means over utterances.
struct EvalReport {
  std::vector<UtteranceEval> utts;
  double mean_input_sisdr = 0.0;
  double mean_output_sisdr = 0.0;
  double mean_sisdri = 0.0;
  double mean_sir = 0.0;
  double association_rate = 1.0;  // fraction of utterances associated
  EvalConfig config;
};

/// Run the model over a set and score every utterance.
EvalReport evaluate_set(const nn::RadioSesNet<float>& net,
                        const std::vector<nn::Utterance>& set,
                        const EvalConfig& cfg);

// ---------------------------------------------------------------------------
// Radio-stream corruptions used by the degradation protocols. All pure.

/// Add white noise to every radio stream at the given stream-power SNR,
/// exactly scaled so the realized SNR equals the request. Non-finite snr_db
/// (infinity) returns the set untouched; all-zero streams stay zero.
std::vector<nn::Utterance> with_radio_noise(std::vector<nn::Utterance> set,
                                            double snr_db, std::uint64_t seed);

/// Keep the first `seconds` of each radio stream and zero the rest (both IQ
/// rows). Durations at or beyond the stream length leave it unchanged.
std::vector<nn::Utterance> with_radio_truncated(std::vector<nn::Utterance> set,
                                                double seconds,
                                                double radio_rate);

/// Zero one stream per utterance (rotating through the sources so every
/// position is hit) — the "one person missed by the detector" case.
std::vector<nn::Utterance> zero_one_radio(std::vector<nn::Utterance> set);

/// Zero every stream: radio removed entirely.
std::vector<nn::Utterance> zero_all_radio(std::vector<nn::Utterance> set);

// ---------------------------------------------------------------------------
// Protocols. Each point is one evaluated configuration.

struct ProtocolPoint {
  std::string label;
  double value = 0.0;  // numeric x where the label is numeric, else NaN
  EvalReport report;
};
struct ProtocolResult {
  std::string protocol;
  std::vector<ProtocolPoint> points;
};

/// Mean SiSDRi as the radio streams are buried in noise:
/// SNR inf (untouched), then 20, 10, 5, 0, -5, -10 dB.
ProtocolResult run_radio_snr_sweep(const nn::RadioSesNet<float>& net,
                                   const std::vector<nn::Utterance>& set,
                                   const EvalConfig& cfg, std::uint64_t seed);

/// Mean SiSDRi with the radio truncated to 2 / 1.5 / 1 / 0.5 s.
ProtocolResult run_partial_radio(const nn::RadioSesNet<float>& net,
                                 const std::vector<nn::Utterance>& set,
                                 const EvalConfig& cfg);

/// Full radio vs one stream zeroed vs all streams zeroed.
ProtocolResult run_partial_detection(const nn::RadioSesNet<float>& net,
                                     const std::vector<nn::Utterance>& set,
                                     const EvalConfig& cfg);

/// One trained variant applied to its eval set. The set differs per arm when
/// the variant was trained on differently prepared streams (zeroed radio,
/// unfiltered radio).
struct ProtocolArm {
  std::string label;
  const nn::RadioSesNet<float>* net = nullptr;
  const std::vector<nn::Utterance>* set = nullptr;
  Assignment assignment = Assignment::kFixed;
};

/// Evaluate labeled arms in order under one base config.
ProtocolResult run_arms(const std::string& protocol,
                        const std::vector<ProtocolArm>& arms,
                        const EvalConfig& base);

/// Trained-variant comparison. Requires exactly the four canonical arms
/// ("full", "wo-radio-dprnn", "wo-radio", "wo-highpass"); anything missing
/// is rejected with the list of runs still needed.
ProtocolResult run_ablation(const std::vector<ProtocolArm>& arms,
                            const EvalConfig& base);

/// Write <dir>/<protocol>.csv (one row of aggregates per point) and
/// <dir>/<protocol>.json (aggregates plus per-utterance detail and the
/// config echo). Returns the two paths written.
std::vector<std::string> write_protocol(const ProtocolResult& result,
                                        const std::string& dir);

}  // namespace radioses::eval
