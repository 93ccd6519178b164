#include "radioses/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "radioses/common.hpp"
#include "radioses/metrics.hpp"

namespace radioses::eval {

namespace {

constexpr double kSirEps = 1e-12;
constexpr double kSirCapDb = 80.0;

std::vector<double> to_double(const std::vector<float>& v) {
  return std::vector<double>(v.begin(), v.end());
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0
                   : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

void check_matched(const std::vector<std::vector<double>>& refs,
                   const std::vector<std::vector<double>>& ests) {
  require(!ests.empty() && refs.size() == ests.size(),
          "eval: need matching reference/estimate counts");
  const std::size_t T = refs[0].size();
  require(T > 0, "eval: empty signals");
  for (const auto& r : refs)
    require(r.size() == T, "eval: reference lengths differ");
  for (const auto& e : ests)
    require(e.size() == T, "eval: estimate length mismatch");
}

}  // namespace

PairScores sisdr_eval(const std::vector<std::vector<double>>& refs,
                      const std::vector<std::vector<double>>& ests,
                      Assignment mode) {
  check_matched(refs, ests);
  const int n = int(ests.size());
  PairScores out;
  out.perm.resize(std::size_t(n));
  std::iota(out.perm.begin(), out.perm.end(), 0);
  if (mode == Assignment::kBestPermutation && n > 1) {
    std::vector<std::vector<double>> score(
        std::size_t(n), std::vector<double>(std::size_t(n)));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        score[std::size_t(i)][std::size_t(j)] =
            metrics::sisdr(ests[std::size_t(i)], refs[std::size_t(j)]);
    std::vector<int> p = out.perm;
    double best = -1e300;
    do {
      double v = 0;
      for (int i = 0; i < n; ++i)
        v += score[std::size_t(i)][std::size_t(p[std::size_t(i)])];
      if (v > best) {
        best = v;
        out.perm = p;
      }
    } while (std::next_permutation(p.begin(), p.end()));
  }
  for (int i = 0; i < n; ++i)
    out.per_source.push_back(metrics::sisdr(
        ests[std::size_t(i)], refs[std::size_t(out.perm[std::size_t(i)])]));
  out.mean = mean_of(out.per_source);
  return out;
}

std::vector<double> sir(const std::vector<std::vector<double>>& refs,
                        const std::vector<std::vector<double>>& ests) {
  check_matched(refs, ests);
  const int n = int(refs.size());
  require(n >= 2, "sir: need at least two references");
  const auto T = Eigen::Index(refs[0].size());

  Eigen::MatrixXd all(T, n);
  for (int j = 0; j < n; ++j)
    for (Eigen::Index t = 0; t < T; ++t)
      all(t, j) = refs[std::size_t(j)][std::size_t(t)];
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(all);
    require(qr.rank() == n, "sir: references are linearly dependent");
  }

  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    const auto& r = refs[std::size_t(i)];
    const auto& e = ests[std::size_t(i)];
    double rr = 0, er = 0;
    for (std::size_t t = 0; t < r.size(); ++t) {
      rr += r[t] * r[t];
      er += e[t] * r[t];
    }
    const double coef = er / rr;
    Eigen::VectorXd resid(T);
    for (Eigen::Index t = 0; t < T; ++t)
      resid(t) = e[std::size_t(t)] - coef * r[std::size_t(t)];
    Eigen::MatrixXd others(T, n - 1);
    int col = 0;
    for (int j = 0; j < n; ++j)
      if (j != i) others.col(col++) = all.col(j);
    const Eigen::VectorXd leak =
        others * others.colPivHouseholderQr().solve(resid);
    const double target2 = coef * er;  // |projection|^2 = (er/rr)^2 * rr
    const double ratio = (target2 + kSirEps) / (leak.squaredNorm() + kSirEps);
    out.push_back(std::min(10.0 * std::log10(ratio), kSirCapDb));
  }
  return out;
}

UtteranceEval score_utterance(const std::vector<double>& mix,
                              const std::vector<std::vector<double>>& refs,
                              const std::vector<std::vector<double>>& ests,
                              const EvalConfig& cfg) {
  const PairScores fixed = sisdr_eval(refs, ests, Assignment::kFixed);
  const PairScores best = sisdr_eval(refs, ests, Assignment::kBestPermutation);
  const PairScores& used =
      cfg.assignment == Assignment::kFixed ? fixed : best;

  UtteranceEval out;
  out.assignment = used.perm;
  out.association_correct = fixed.mean >= best.mean - cfg.assoc_threshold_db;
  const int n = int(ests.size());
  std::vector<std::vector<double>> paired;
  for (int i = 0; i < n; ++i) {
    const auto& ref = refs[std::size_t(used.perm[std::size_t(i)])];
    paired.push_back(ref);
    out.input_sisdr.push_back(metrics::sisdr(mix, ref));
    out.output_sisdr.push_back(used.per_source[std::size_t(i)]);
    out.sisdri.push_back(out.output_sisdr.back() - out.input_sisdr.back());
  }
  if (n >= 2) out.sir_db = sir(paired, ests);
  return out;
}

EvalReport evaluate_set(const nn::RadioSesNet<float>& net,
                        const std::vector<nn::Utterance>& set,
                        const EvalConfig& cfg) {
  require(!set.empty() && cfg.batch_size >= 1, "eval: bad arguments");
  EvalReport rep;
  rep.config = cfg;
  for (std::size_t at = 0; at < set.size();
       at += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t bend =
        std::min(set.size(), at + static_cast<std::size_t>(cfg.batch_size));
    std::vector<std::vector<float>> mixes;
    std::vector<std::vector<std::vector<float>>> radio;
    for (std::size_t b = at; b < bend; ++b) {
      mixes.push_back(set[b].mix);
      radio.push_back(set[b].radio);
    }
    Tape<float> tape;
    tape.set_grad_enabled(false);
    auto fwd = net.forward(tape, mixes, radio);
    for (std::size_t b = at; b < bend; ++b) {
      std::vector<std::vector<double>> ests;
      for (int s : fwd.utt[b - at].sources) {
        const auto& v = tape.at(s).values;
        ests.emplace_back(v.begin(), v.end());
      }
      std::vector<std::vector<double>> refs;
      for (const auto& r : set[b].refs) refs.push_back(to_double(r));
      rep.utts.push_back(
          score_utterance(to_double(set[b].mix), refs, ests, cfg));
    }
  }
  double in = 0, outp = 0, impr = 0, leak = 0;
  std::size_t assoc = 0;
  for (const auto& u : rep.utts) {
    in += mean_of(u.input_sisdr);
    outp += mean_of(u.output_sisdr);
    impr += mean_of(u.sisdri);
    leak += mean_of(u.sir_db);
    assoc += u.association_correct ? 1 : 0;
  }
  const double N = double(rep.utts.size());
  rep.mean_input_sisdr = in / N;
  rep.mean_output_sisdr = outp / N;
  rep.mean_sisdri = impr / N;
  rep.mean_sir = leak / N;
  rep.association_rate = double(assoc) / N;
  return rep;
}

// ---------------------------------------------------------------------------
// Stream corruptions

std::vector<nn::Utterance> with_radio_noise(std::vector<nn::Utterance> set,
                                            double snr_db,
                                            std::uint64_t seed) {
  if (!std::isfinite(snr_db)) return set;
  for (std::size_t u = 0; u < set.size(); ++u)
    for (std::size_t i = 0; i < set[u].radio.size(); ++i) {
      auto& s = set[u].radio[i];
      if (s.empty()) continue;
      double power = 0;
      for (float x : s) power += double(x) * double(x);
      power /= double(s.size());
      if (power == 0.0) continue;
      Rng rng(mix_seed(seed, u * 16 + i));
      std::vector<double> noise(s.size());
      double np = 0;
      for (auto& x : noise) {
        x = rng.gaussian();
        np += x * x;
      }
      np /= double(noise.size());
      // scale so the realized stream-power SNR is exactly the request
      const double gain =
          std::sqrt(power / (std::pow(10.0, snr_db / 10.0) * np));
      for (std::size_t t = 0; t < s.size(); ++t)
        s[t] = float(double(s[t]) + gain * noise[t]);
    }
  return set;
}

std::vector<nn::Utterance> with_radio_truncated(std::vector<nn::Utterance> set,
                                                double seconds,
                                                double radio_rate) {
  require(seconds > 0 && radio_rate > 0, "eval: bad truncation arguments");
  const auto keep = std::llround(seconds * radio_rate);
  for (auto& u : set)
    for (auto& s : u.radio) {
      const auto half = static_cast<long long>(s.size() / 2);
      if (keep >= half) continue;
      for (long long t = keep; t < half; ++t) {
        s[std::size_t(t)] = 0.0f;         // in-phase row
        s[std::size_t(half + t)] = 0.0f;  // quadrature row
      }
    }
  return set;
}

std::vector<nn::Utterance> zero_one_radio(std::vector<nn::Utterance> set) {
  for (std::size_t u = 0; u < set.size(); ++u) {
    if (set[u].radio.empty()) continue;
    auto& s = set[u].radio[u % set[u].radio.size()];
    std::fill(s.begin(), s.end(), 0.0f);
  }
  return set;
}

std::vector<nn::Utterance> zero_all_radio(std::vector<nn::Utterance> set) {
  for (auto& u : set)
    for (auto& s : u.radio) std::fill(s.begin(), s.end(), 0.0f);
  return set;
}

// ---------------------------------------------------------------------------
// Protocols

ProtocolResult run_arms(const std::string& protocol,
                        const std::vector<ProtocolArm>& arms,
                        const EvalConfig& base) {
  require(!arms.empty(), "eval: no protocol arms");
  ProtocolResult out;
  out.protocol = protocol;
  for (const auto& arm : arms) {
    require(arm.net != nullptr && arm.set != nullptr,
            "eval: protocol arm \"" + arm.label + "\" missing model or data");
    EvalConfig cfg = base;
    cfg.assignment = arm.assignment;
    ProtocolPoint p;
    p.label = arm.label;
    p.value = std::numeric_limits<double>::quiet_NaN();
    p.report = evaluate_set(*arm.net, *arm.set, cfg);
    out.points.push_back(std::move(p));
  }
  return out;
}

ProtocolResult run_radio_snr_sweep(const nn::RadioSesNet<float>& net,
                                   const std::vector<nn::Utterance>& set,
                                   const EvalConfig& cfg, std::uint64_t seed) {
  const double snrs[] = {std::numeric_limits<double>::infinity(),
                         20, 10, 5, 0, -5, -10};
  ProtocolResult out;
  out.protocol = "radio-snr-sweep";
  for (std::size_t k = 0; k < std::size(snrs); ++k) {
    ProtocolPoint p;
    p.value = snrs[k];
    if (std::isfinite(snrs[k])) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", snrs[k]);
      p.label = buf;
    } else {
      p.label = "inf";
    }
    const auto noisy = with_radio_noise(set, snrs[k], mix_seed(seed, k));
    p.report = evaluate_set(net, noisy, cfg);
    out.points.push_back(std::move(p));
  }
  return out;
}

ProtocolResult run_partial_radio(const nn::RadioSesNet<float>& net,
                                 const std::vector<nn::Utterance>& set,
                                 const EvalConfig& cfg) {
  const double durations[] = {2.0, 1.5, 1.0, 0.5};
  const double rate = net.config().radio_rate;
  ProtocolResult out;
  out.protocol = "partial-radio";
  for (double d : durations) {
    ProtocolPoint p;
    p.value = d;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fs", d);
    p.label = buf;
    const auto cut = with_radio_truncated(set, d, rate);
    p.report = evaluate_set(net, cut, cfg);
    out.points.push_back(std::move(p));
  }
  return out;
}

ProtocolResult run_partial_detection(const nn::RadioSesNet<float>& net,
                                     const std::vector<nn::Utterance>& set,
                                     const EvalConfig& cfg) {
  const auto one = zero_one_radio(set);
  const auto all = zero_all_radio(set);
  std::vector<ProtocolArm> arms{
      {"full", &net, &set, cfg.assignment},
      {"one-zeroed", &net, &one, cfg.assignment},
      {"all-zeroed", &net, &all, cfg.assignment},
  };
  return run_arms("partial-detection", arms, cfg);
}

ProtocolResult run_ablation(const std::vector<ProtocolArm>& arms,
                            const EvalConfig& base) {
  const std::vector<std::string> canonical{"full", "wo-radio-dprnn",
                                           "wo-radio", "wo-highpass"};
  std::vector<ProtocolArm> ordered;
  std::string missing;
  for (const auto& want : canonical) {
    const ProtocolArm* found = nullptr;
    for (const auto& arm : arms)
      if (arm.label == want) found = &arm;
    if (found == nullptr)
      missing += missing.empty() ? want : ", " + want;
    else
      ordered.push_back(*found);
  }
  require(missing.empty(), "eval: ablation needs runs for: " + missing);
  require(arms.size() == canonical.size(),
          "eval: unknown extra ablation arm");
  return run_arms("ablation", ordered, base);
}

// ---------------------------------------------------------------------------
// Reports

namespace {

nlohmann::json config_json(const EvalConfig& cfg) {
  return {{"assignment", cfg.assignment == Assignment::kFixed
                             ? "fixed"
                             : "best-permutation"},
          {"assoc_threshold_db", cfg.assoc_threshold_db},
          {"batch_size", cfg.batch_size}};
}

nlohmann::json aggregates_json(const EvalReport& r) {
  return {{"n_utts", r.utts.size()},
          {"mean_input_sisdr", r.mean_input_sisdr},
          {"mean_output_sisdr", r.mean_output_sisdr},
          {"mean_sisdri", r.mean_sisdri},
          {"mean_sir", r.mean_sir},
          {"association_rate", r.association_rate}};
}

}  // namespace

std::vector<std::string> write_protocol(const ProtocolResult& result,
                                        const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string csv_path =
      (fs::path(dir) / (result.protocol + ".csv")).string();
  const std::string json_path =
      (fs::path(dir) / (result.protocol + ".json")).string();

  {
    std::ofstream f(csv_path);
    require(bool(f), "eval: cannot write " + csv_path);
    f << "protocol,label,value,n_utts,mean_input_sisdr,mean_output_sisdr,"
         "mean_sisdri,mean_sir,association_rate\n";
    for (const auto& p : result.points) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%s,%g,%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    result.protocol.c_str(), p.label.c_str(), p.value,
                    p.report.utts.size(), p.report.mean_input_sisdr,
                    p.report.mean_output_sisdr, p.report.mean_sisdri,
                    p.report.mean_sir, p.report.association_rate);
      f << buf;
    }
    require(bool(f), "eval: write failed on " + csv_path);
  }

  nlohmann::json j;
  j["protocol"] = result.protocol;
  j["points"] = nlohmann::json::array();
  for (const auto& p : result.points) {
    nlohmann::json utts = nlohmann::json::array();
    for (const auto& u : p.report.utts)
      utts.push_back({{"input_sisdr", u.input_sisdr},
                      {"output_sisdr", u.output_sisdr},
                      {"sisdri", u.sisdri},
                      {"sir", u.sir_db},
                      {"assignment", u.assignment},
                      {"association_correct", u.association_correct}});
    j["points"].push_back(
        {{"label", p.label},
         {"value", std::isfinite(p.value) ? nlohmann::json(p.value)
                                          : nlohmann::json()},
         {"aggregates", aggregates_json(p.report)},
         {"config", config_json(p.report.config)},
         {"utterances", std::move(utts)}});
  }
  std::ofstream f(json_path);
  require(bool(f), "eval: cannot write " + json_path);
  f << j.dump(2) << "\n";
  require(bool(f), "eval: write failed on " + json_path);
  return {csv_path, json_path};
}

}  // namespace radioses::eval
