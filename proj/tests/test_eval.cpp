#include "radioses/eval.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "radioses/common.hpp"
#include "radioses/metrics.hpp"

using namespace radioses;
using namespace radioses::eval;

namespace {

std::vector<double> rand_sig(Rng& rng, int n, double amp = 1.0) {
  std::vector<double> v(std::size_t(n));
  for (auto& x : v) x = amp * (2.0 * rng.uniform() - 1.0);
  return v;
}

// mini model + random utterances, for the plumbing tests
nn::NetConfig mini_config() {
  nn::NetConfig c;
  c.n_src = 2;
  c.sample_rate = 10;
  c.radio_rate = 5;
  c.kernel = 4;
  c.stride = 2;
  c.n_enc_audio = 8;
  c.n_audio = 4;
  c.k_audio = 4;
  c.n_enc_radio = 6;
  c.n_radio = 3;
  c.k_radio = 2;
  c.h_audio = 5;
  c.h_radio = 4;
  c.h_fused = 6;
  c.pre_blocks = 1;
  c.post_blocks = 1;
  return c;
}

std::vector<nn::Utterance> fake_set(const nn::NetConfig& cfg, int count, int T,
                                    std::uint64_t seed) {
  Rng rng(seed);
  const int Tr = T * cfg.radio_rate / cfg.sample_rate;
  std::vector<nn::Utterance> set;
  for (int c = 0; c < count; ++c) {
    nn::Utterance u;
    auto m = rand_sig(rng, T, 0.5);
    u.mix.assign(m.begin(), m.end());
    for (int i = 0; i < cfg.n_src; ++i) {
      auto r = rand_sig(rng, T, 0.5);
      u.refs.emplace_back(r.begin(), r.end());
      auto q = rand_sig(rng, 2 * Tr, 0.5);
      u.radio.emplace_back(q.begin(), q.end());
    }
    set.push_back(std::move(u));
  }
  return set;
}

}  // namespace

TEST_CASE("identical estimates score at least 80 dB under fixed pairing") {
  Rng rng(11);
  std::vector<std::vector<double>> refs{rand_sig(rng, 400), rand_sig(rng, 400)};
  auto got = sisdr_eval(refs, refs, Assignment::kFixed);
  REQUIRE(got.per_source.size() == 2);
  for (double s : got.per_source) CHECK(s >= 80.0);
  CHECK(got.perm == std::vector<int>{0, 1});
}

TEST_CASE("best permutation undoes a swap and never scores below fixed") {
  Rng rng(12);
  std::vector<std::vector<double>> refs{rand_sig(rng, 300), rand_sig(rng, 300)};
  std::vector<std::vector<double>> swapped{refs[1], refs[0]};
  auto straight = sisdr_eval(refs, refs, Assignment::kBestPermutation);
  auto crossed = sisdr_eval(refs, swapped, Assignment::kBestPermutation);
  CHECK(crossed.mean == doctest::Approx(straight.mean).epsilon(1e-12));
  CHECK(crossed.perm == std::vector<int>{1, 0});

  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> r{rand_sig(rng, 100), rand_sig(rng, 100),
                                       rand_sig(rng, 100)};
    std::vector<std::vector<double>> e{rand_sig(rng, 100), rand_sig(rng, 100),
                                       rand_sig(rng, 100)};
    auto fixed = sisdr_eval(r, e, Assignment::kFixed);
    auto best = sisdr_eval(r, e, Assignment::kBestPermutation);
    CHECK(best.mean >= fixed.mean - 1e-12);
  }
}

TEST_CASE("swapped estimates under fixed pairing trip the association flag") {
  Rng rng(13);
  std::vector<std::vector<double>> refs{rand_sig(rng, 500), rand_sig(rng, 500)};
  auto mix = refs[0];
  for (std::size_t t = 0; t < mix.size(); ++t) mix[t] += refs[1][t];
  EvalConfig cfg;

  auto good = score_utterance(mix, refs, refs, cfg);
  CHECK(good.association_correct);
  CHECK(good.assignment == std::vector<int>{0, 1});
  REQUIRE(good.sisdri.size() == 2);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(good.sisdri[i] ==
          doctest::Approx(good.output_sisdr[i] - good.input_sisdr[i]));

  std::vector<std::vector<double>> swapped{refs[1], refs[0]};
  auto bad = score_utterance(mix, refs, swapped, cfg);
  CHECK(!bad.association_correct);  // fixed trails best by far more than 3 dB

  // scored under best permutation the same estimates are fine again
  cfg.assignment = Assignment::kBestPermutation;
  auto rescued = score_utterance(mix, refs, swapped, cfg);
  CHECK(rescued.assignment == std::vector<int>{1, 0});
  CHECK(rescued.output_sisdr[0] >= 80.0);
}

TEST_CASE("sir: perfect estimate caps at 80, orthonormal case is closed form") {
  // orthonormal references: unit impulses on different samples
  std::vector<std::vector<double>> refs(2, std::vector<double>(8, 0.0));
  refs[0][0] = 1.0;
  refs[1][1] = 1.0;

  auto capped = sir(refs, refs);
  REQUIRE(capped.size() == 2);
  CHECK(capped[0] == doctest::Approx(80.0));
  CHECK(capped[1] == doctest::Approx(80.0));

  // est = ref0 + 0.1 ref1: target power 1, leakage power 0.01 -> 20 dB
  auto est = refs;
  est[0][1] = 0.1;
  auto got = sir(refs, est);
  CHECK(got[0] == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("sir matches a naive normal-equations oracle") {
  Rng rng(14);
  const int T = 200;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> refs{rand_sig(rng, T), rand_sig(rng, T),
                                          rand_sig(rng, T)};
    std::vector<std::vector<double>> ests;
    for (int i = 0; i < 3; ++i) {
      auto e = refs[std::size_t(i)];
      for (int j = 0; j < 3; ++j)
        if (j != i) {
          const double a = 0.2 * (2.0 * rng.uniform() - 1.0);
          for (int t = 0; t < T; ++t)
            e[std::size_t(t)] += a * refs[std::size_t(j)][std::size_t(t)];
        }
      ests.push_back(std::move(e));
    }
    const auto got = sir(refs, ests);

    for (int i = 0; i < 3; ++i) {
      const auto& r = refs[std::size_t(i)];
      const auto& e = ests[std::size_t(i)];
      auto dot = [T](const std::vector<double>& a,
                     const std::vector<double>& b) {
        double s = 0;
        for (int t = 0; t < T; ++t) s += a[std::size_t(t)] * b[std::size_t(t)];
        return s;
      };
      const double coef = dot(e, r) / dot(r, r);
      std::vector<double> resid(std::size_t(T));
      for (int t = 0; t < T; ++t)
        resid[std::size_t(t)] = e[std::size_t(t)] - coef * r[std::size_t(t)];
      // two interfering references: solve the 2x2 normal equations by hand
      const auto& o1 = refs[std::size_t((i + 1) % 3)];
      const auto& o2 = refs[std::size_t((i + 2) % 3)];
      const double g11 = dot(o1, o1), g12 = dot(o1, o2), g22 = dot(o2, o2);
      const double b1 = dot(o1, resid), b2 = dot(o2, resid);
      const double det = g11 * g22 - g12 * g12;
      const double c1 = (b1 * g22 - b2 * g12) / det;
      const double c2 = (g11 * b2 - g12 * b1) / det;
      double leak2 = 0;
      for (int t = 0; t < T; ++t) {
        const double l =
            c1 * o1[std::size_t(t)] + c2 * o2[std::size_t(t)];
        leak2 += l * l;
      }
      const double target2 = coef * coef * dot(r, r);
      const double oracle =
          std::min(10.0 * std::log10(target2 / leak2), 80.0);
      CHECK(std::abs(got[std::size_t(i)] - oracle) < 1e-9);
    }
  }
}

TEST_CASE("sir rejects dependent or insufficient references") {
  Rng rng(15);
  std::vector<std::vector<double>> refs{rand_sig(rng, 50), rand_sig(rng, 50)};
  std::vector<std::vector<double>> bad = refs;
  bad.push_back(refs[0]);
  for (std::size_t t = 0; t < 50; ++t) bad[2][t] += refs[1][t];
  std::vector<std::vector<double>> ests3{rand_sig(rng, 50), rand_sig(rng, 50),
                                         rand_sig(rng, 50)};
  CHECK_THROWS(sir(bad, ests3));
  CHECK_THROWS(sir({refs[0]}, {refs[0]}));  // needs two references
}

TEST_CASE("sir strictly decreases as interference grows") {
  std::vector<std::vector<double>> refs(2, std::vector<double>(16, 0.0));
  refs[0][3] = 1.0;
  refs[1][7] = 1.0;
  double prev = std::numeric_limits<double>::infinity();
  for (double a : {0.05, 0.1, 0.2, 0.4}) {
    auto est = refs;
    est[0][7] = a;
    const double s = sir(refs, est)[0];
    CHECK(s < prev);
    prev = s;
  }
}

TEST_CASE("set aggregates equal the means of per-utterance scores") {
  nn::NetConfig cfg = mini_config();
  nn::RadioSesNet<float> net(cfg, 3);
  auto set = fake_set(cfg, 5, 40, 21);
  EvalConfig ec;
  ec.batch_size = 2;
  auto rep = evaluate_set(net, set, ec);
  REQUIRE(rep.utts.size() == 5);
  double impr = 0, inp = 0, outp = 0, leak = 0, assoc = 0;
  for (const auto& u : rep.utts) {
    inp += (u.input_sisdr[0] + u.input_sisdr[1]) / 2;
    outp += (u.output_sisdr[0] + u.output_sisdr[1]) / 2;
    impr += (u.sisdri[0] + u.sisdri[1]) / 2;
    leak += (u.sir_db[0] + u.sir_db[1]) / 2;
    assoc += u.association_correct ? 1 : 0;
  }
  CHECK(rep.mean_input_sisdr == doctest::Approx(inp / 5).epsilon(1e-12));
  CHECK(rep.mean_output_sisdr == doctest::Approx(outp / 5).epsilon(1e-12));
  CHECK(rep.mean_sisdri == doctest::Approx(impr / 5).epsilon(1e-12));
  CHECK(rep.mean_sir == doctest::Approx(leak / 5).epsilon(1e-12));
  CHECK(rep.association_rate == doctest::Approx(assoc / 5).epsilon(1e-12));
}

TEST_CASE("radio corruptions: exact noise level, truncation, zeroing") {
  nn::NetConfig cfg = mini_config();
  auto set = fake_set(cfg, 3, 40, 31);

  auto untouched = with_radio_noise(
      set, std::numeric_limits<double>::infinity(), 5);
  CHECK(untouched[0].radio[0] == set[0].radio[0]);

  const double snr = 7.0;
  auto noisy = with_radio_noise(set, snr, 5);
  for (std::size_t u = 0; u < set.size(); ++u)
    for (std::size_t i = 0; i < 2; ++i) {
      double sp = 0, np = 0;
      const auto& clean = set[u].radio[i];
      const auto& dirty = noisy[u].radio[i];
      for (std::size_t t = 0; t < clean.size(); ++t) {
        sp += double(clean[t]) * double(clean[t]);
        np += double(dirty[t] - clean[t]) * double(dirty[t] - clean[t]);
      }
      CHECK(10.0 * std::log10(sp / np) == doctest::Approx(snr).epsilon(1e-4));
    }
  // deterministic in the seed
  auto again = with_radio_noise(set, snr, 5);
  CHECK(again[1].radio[1] == noisy[1].radio[1]);
  CHECK(with_radio_noise(set, snr, 6)[1].radio[1] != noisy[1].radio[1]);

  // streams are 4 s at the mini rate; cut to 1.5 s
  auto cut = with_radio_truncated(set, 1.5, cfg.radio_rate);
  const std::size_t Tr = set[0].radio[0].size() / 2;
  const std::size_t keep = std::size_t(1.5 * cfg.radio_rate);
  for (std::size_t t = 0; t < Tr; ++t)
    for (std::size_t row = 0; row < 2; ++row) {
      const float got = cut[0].radio[0][row * Tr + t];
      if (t < keep)
        CHECK(got == set[0].radio[0][row * Tr + t]);
      else
        CHECK(got == 0.0f);
    }
  auto whole = with_radio_truncated(set, 10.0, cfg.radio_rate);
  CHECK(whole[2].radio[1] == set[2].radio[1]);

  auto one = zero_one_radio(set);
  auto zeroed = [](const std::vector<float>& v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
  };
  CHECK(zeroed(one[0].radio[0]));
  CHECK(!zeroed(one[0].radio[1]));
  CHECK(zeroed(one[1].radio[1]));  // rotates through the sources
  CHECK(!zeroed(one[1].radio[0]));

  auto none = zero_all_radio(set);
  for (const auto& u : none)
    for (const auto& s : u.radio) CHECK(zeroed(s));
}

TEST_CASE("degradation protocols emit the canonical rows, deterministically") {
  nn::NetConfig cfg = mini_config();
  nn::RadioSesNet<float> net(cfg, 4);
  auto set = fake_set(cfg, 4, 40, 41);
  EvalConfig ec;
  ec.batch_size = 4;

  auto sweep = run_radio_snr_sweep(net, set, ec, 99);
  std::vector<std::string> labels;
  for (const auto& p : sweep.points) labels.push_back(p.label);
  CHECK(labels == std::vector<std::string>{"inf", "20", "10", "5", "0", "-5",
                                           "-10"});
  CHECK(std::isinf(sweep.points[0].value));
  CHECK(sweep.points[6].value == -10.0);
  auto sweep2 = run_radio_snr_sweep(net, set, ec, 99);
  for (std::size_t k = 0; k < sweep.points.size(); ++k)
    CHECK(sweep.points[k].report.mean_sisdri ==
          sweep2.points[k].report.mean_sisdri);

  auto partial = run_partial_radio(net, set, ec);
  labels.clear();
  for (const auto& p : partial.points) labels.push_back(p.label);
  CHECK(labels ==
        std::vector<std::string>{"2.0s", "1.5s", "1.0s", "0.5s"});

  auto detect = run_partial_detection(net, set, ec);
  labels.clear();
  for (const auto& p : detect.points) labels.push_back(p.label);
  CHECK(labels ==
        std::vector<std::string>{"full", "one-zeroed", "all-zeroed"});
  // the untouched arm reproduces a direct evaluation
  CHECK(detect.points[0].report.mean_sisdri ==
        doctest::Approx(evaluate_set(net, set, ec).mean_sisdri)
            .epsilon(1e-12));
}

TEST_CASE("ablation wants exactly the four canonical arms") {
  nn::NetConfig cfg = mini_config();
  nn::RadioSesNet<float> net(cfg, 5);
  auto set = fake_set(cfg, 2, 40, 51);
  auto zero = zero_all_radio(set);
  EvalConfig ec;

  std::vector<ProtocolArm> arms{
      {"full", &net, &set, Assignment::kFixed},
      {"wo-highpass", &net, &set, Assignment::kFixed},
  };
  try {
    run_ablation(arms, ec);
    CHECK(false);
  } catch (const std::exception& ex) {
    const std::string msg = ex.what();
    CHECK(msg.find("wo-radio-dprnn") != std::string::npos);
    CHECK(msg.find("wo-radio,") != std::string::npos);
  }

  arms = {
      {"wo-radio", &net, &zero, Assignment::kBestPermutation},
      {"full", &net, &set, Assignment::kFixed},
      {"wo-highpass", &net, &set, Assignment::kFixed},
      {"wo-radio-dprnn", &net, &set, Assignment::kFixed},
  };
  auto res = run_ablation(arms, ec);
  REQUIRE(res.points.size() == 4);
  CHECK(res.points[0].label == "full");  // canonical order, not input order
  CHECK(res.points[1].label == "wo-radio-dprnn");
  CHECK(res.points[2].label == "wo-radio");
  CHECK(res.points[3].label == "wo-highpass");

  arms.push_back({"extra", &net, &set, Assignment::kFixed});
  CHECK_THROWS(run_ablation(arms, ec));
}

TEST_CASE("protocol reports round-trip through csv and json") {
  nn::NetConfig cfg = mini_config();
  nn::RadioSesNet<float> net(cfg, 6);
  auto set = fake_set(cfg, 3, 40, 61);
  EvalConfig ec;
  ec.batch_size = 2;
  auto detect = run_partial_detection(net, set, ec);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "radioses_eval_report";
  fs::remove_all(dir);
  auto paths = write_protocol(detect, dir.string());
  REQUIRE(paths.size() == 2);

  std::ifstream csv(paths[0]);
  std::string line;
  std::getline(csv, line);
  CHECK(line.find("mean_sisdri") != std::string::npos);
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);

  std::ifstream jf(paths[1]);
  nlohmann::json j = nlohmann::json::parse(jf);
  CHECK(j["protocol"] == "partial-detection");
  REQUIRE(j["points"].size() == 3);
  CHECK(j["points"][0]["label"] == "full");
  CHECK(j["points"][0]["value"].is_null());
  CHECK(j["points"][0]["aggregates"]["n_utts"] == 3);
  CHECK(double(j["points"][1]["aggregates"]["mean_sisdri"]) ==
        doctest::Approx(detect.points[1].report.mean_sisdri).epsilon(1e-9));
  CHECK(j["points"][0]["config"]["assignment"] == "fixed");
  CHECK(j["points"][0]["utterances"].size() == 3);

  // byte-stable across runs
  std::ostringstream first;
  first << std::ifstream(paths[1]).rdbuf();
  write_protocol(run_partial_detection(net, set, ec), dir.string());
  std::ostringstream second;
  second << std::ifstream(paths[1]).rdbuf();
  CHECK(first.str() == second.str());
  fs::remove_all(dir);
}
