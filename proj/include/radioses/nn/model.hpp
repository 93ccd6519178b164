#pragma once

// Audio-radio separation network. Two adaptive conv encoders (audio wave,
// radio IQ), dual-path RNN masker with feature-dimension fusion, mask head,
// transposed-conv decoder.
//
// Source association is structural: the masker trunk runs once per target
// source with shared weights, and source i's fused input concatenates the
// radio features in the rotated order (i, i+1, ..., i+n-1). Swapping two
// radio streams of a 2-mix therefore swaps the two outputs exactly; no other
// path depends on radio order. Audio-only models (use_radio=false) instead
// run one trunk pass and emit all masks from a single head, to be trained
// with a permutation-invariant loss.

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "radioses/common.hpp"
#include "radioses/nn/autodiff.hpp"

namespace radioses::nn {

struct NetConfig {
  int n_src = 2;
  int sample_rate = 8000;
  int radio_rate = 1000;
  int kernel = 16;
  int stride = 8;
  // audio branch
  int n_enc_audio = 256;  // encoder filters
  int n_audio = 64;       // bottleneck width
  int k_audio = 128;      // block length
  // radio branch
  int n_enc_radio = 64;
  int n_radio = 16;
  int k_radio = 16;
  // masker
  int h_audio = 128;  // pre-fusion block hidden size, audio
  int h_radio = 152;  // pre-fusion block hidden size, radio
  int h_fused = 120;  // post-fusion block hidden size
  int pre_blocks = 1;
  int post_blocks = 4;
  bool k_stage_first = false;  // swap the two dual-path stage orders
  bool use_radio = true;

  int n_fused() const {
    return use_radio ? n_audio + n_src * n_radio : n_audio;
  }

  void validate() const {
    require(n_src >= 1, "config: n_src must be positive");
    require(kernel >= 2 && stride == kernel / 2,
            "config: stride must equal kernel/2");
    require(n_enc_audio > 0 && n_audio > 0 && k_audio >= 2 &&
                k_audio % 2 == 0,
            "config: bad audio dims");
    require(!use_radio || (n_enc_radio > 0 && n_radio > 0 && k_radio >= 1),
            "config: bad radio dims");
    require(h_audio > 0 && h_radio > 0 && h_fused > 0, "config: bad hidden");
    require(pre_blocks >= 0 && post_blocks >= 1, "config: bad block counts");
    require(sample_rate > 0 && radio_rate > 0, "config: bad rates");
  }

  /// Full-size preset; hidden widths chosen to land the parameter budget.
  static NetConfig paper(int n_src = 2) {
    NetConfig c;
    c.n_src = n_src;
    return c;
  }

  /// All main dims divided by 4: fast enough to train on one CPU core.
  static NetConfig toy(int n_src = 2) {
    NetConfig c;
    c.n_src = n_src;
    c.n_enc_audio = 64;
    c.n_audio = 16;
    c.k_audio = 32;
    c.n_enc_radio = 16;
    c.n_radio = 4;
    c.k_radio = 4;
    c.h_audio = 32;
    c.h_radio = 38;
    c.h_fused = 30;
    return c;
  }
};

/// Named parameter registry. Order is fixed at construction and shared with
/// checkpoints and optimizer state. Deque, so references returned by add()
/// stay valid while more parameters are registered.
template <typename S>
struct ModelParams {
  struct Item {
    std::string name;
    DiffTensor<S> tensor;
  };
  std::deque<Item> items;

  DiffTensor<S>& add(const std::string& name, std::vector<int> shape) {
    for (const auto& it : items)
      require(it.name != name, "params: duplicate name " + name);
    items.push_back({name, DiffTensor<S>::zeros(std::move(shape))});
    return items.back().tensor;
  }
  DiffTensor<S>* find(const std::string& name) {
    for (auto& it : items)
      if (it.name == name) return &it.tensor;
    return nullptr;
  }
  const DiffTensor<S>* find(const std::string& name) const {
    for (const auto& it : items)
      if (it.name == name) return &it.tensor;
    return nullptr;
  }
  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& it : items) n += it.tensor.numel();
    return n;
  }
  std::size_t count_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& it : items)
      if (it.name.rfind(prefix, 0) == 0) n += it.tensor.numel();
    return n;
  }
};

template <typename S>
class RadioSesNet {
 public:
  /// Fresh model with seed-deterministic init: weights uniform in
  /// ±1/sqrt(fan_in), biases zero except LSTM forget gates (1.0) and
  /// layer-norm gains (1.0).
  RadioSesNet(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    register_params();
    Rng rng(mix_seed(seed, 0x6e657477));
    for (auto& it : params_.items) init_param(it, rng);
  }

  /// Adopt existing parameters (e.g. from a checkpoint). Shapes must match
  /// what this config would register.
  RadioSesNet(const NetConfig& cfg, const ModelParams<S>& loaded)
      : cfg_(cfg) {
    cfg_.validate();
    register_params();
    require(loaded.items.size() == params_.items.size(),
            "model: parameter count mismatch");
    for (auto& it : params_.items) {
      const DiffTensor<S>* src = loaded.find(it.name);
      require(src != nullptr, "model: missing parameter " + it.name);
      require(src->shape == it.tensor.shape,
              "model: shape mismatch for " + it.name);
      it.tensor.values = src->values;
    }
  }

  const NetConfig& config() const { return cfg_; }
  ModelParams<S>& params() { return params_; }
  const ModelParams<S>& params() const { return params_; }

  std::size_t param_count() const { return params_.total_count(); }
  std::size_t param_count_radio() const {
    return params_.count_prefix("enc_r") + params_.count_prefix("bn_r") +
           params_.count_prefix("radio_block");
  }

  struct Shapes {
    int frames_audio;  // L_a
    int blocks;        // S shared by both modalities
    int frames_radio;  // L_r (0 without radio)
    int hop_radio;
  };
  Shapes plan(int n_samples, int n_radio_samples) const {
    require(n_samples >= cfg_.kernel, "model: input shorter than kernel");
    Shapes sh{};
    sh.frames_audio = (n_samples - cfg_.kernel) / cfg_.stride + 1;
    const int hop_a = cfg_.k_audio / 2;
    sh.blocks = (sh.frames_audio + hop_a - 1) / hop_a;
    if (cfg_.use_radio) {
      require(n_radio_samples >= cfg_.kernel,
              "model: radio input shorter than kernel");
      sh.frames_radio = (n_radio_samples - cfg_.kernel) / cfg_.stride + 1;
      sh.hop_radio = (sh.frames_radio + sh.blocks - 1) / sh.blocks;
    }
    return sh;
  }

  /// One utterance in a batched forward pass.
  struct Forward {
    std::vector<int> sources;  // decoded waveform node per source, shape [T]
    std::vector<int> masks;    // mask node per source, [L_a, N_enc_a]
    int enc_mix = -1;          // encoder output being masked, [N_enc_a, L_a]
  };
  struct BatchForward {
    std::vector<Forward> utt;
    std::vector<int> param_ids;  // aligned with params().items
  };

  /// mixes: U equal-length waveforms. radio: U × n_src streams, each
  /// flattened [2, T_r] (re row then im row), equal T_r; ignored when
  /// use_radio is false. The whole batch shares one tape; heavy recurrent
  /// stages run with the batch folded into the LSTM batch dimension.
  BatchForward forward(Tape<S>& tape, const std::vector<std::vector<S>>& mixes,
                       const std::vector<std::vector<std::vector<S>>>& radio)
      const {
    const int U = int(mixes.size());
    require(U >= 1, "model: empty batch");
    const int T = int(mixes[0].size());
    for (const auto& m : mixes)
      require(int(m.size()) == T, "model: batch lengths differ");
    int Tr = 0;
    if (cfg_.use_radio) {
      require(int(radio.size()) == U, "model: radio batch size mismatch");
      for (const auto& streams : radio) {
        require(int(streams.size()) == cfg_.n_src,
                "model: need one radio stream per source");
        for (const auto& s : streams) {
          require(s.size() % 2 == 0, "model: radio stream must be [2, T_r]");
          const int len = int(s.size()) / 2;
          if (Tr == 0) Tr = len;
          require(len == Tr, "model: radio lengths differ");
        }
      }
      require(std::int64_t(Tr) * cfg_.sample_rate ==
                  std::int64_t(T) * cfg_.radio_rate,
              "model: radio length inconsistent with configured rates");
    }
    const Shapes sh = plan(T, Tr);

    BatchForward out;
    out.utt.resize(std::size_t(U));
    std::unordered_map<std::string, int> id;
    out.param_ids.reserve(params_.items.size());
    for (const auto& it : params_.items) {
      const int node = tape.input(it.tensor);
      id[it.name] = node;
      out.param_ids.push_back(node);
    }

    // ---- audio encoder ----
    std::vector<int> enc(static_cast<std::size_t>(U));      // [N_enc_a, L_a]
    std::vector<int> ablocks(static_cast<std::size_t>(U));  // [K_a, S, N_a]
    for (int u = 0; u < U; ++u) {
      int wav = tape.input({1, T}, mixes[std::size_t(u)]);
      enc[std::size_t(u)] = tape.relu(tape.conv1d(
          wav, id.at("enc_a.w"), id.at("enc_a.b"), cfg_.kernel, cfg_.stride));
      int feat = tape.transpose2(enc[std::size_t(u)]);  // [L_a, N_enc_a]
      int ln = tape.layer_norm(feat, id.at("enc_a.ln.g"), id.at("enc_a.ln.b"));
      int bott = tape.linear(ln, id.at("bn_a.w"), id.at("bn_a.b"));
      ablocks[std::size_t(u)] = tape.segment(bott, cfg_.k_audio);
      out.utt[std::size_t(u)].enc_mix = enc[std::size_t(u)];
    }
    for (int b = 0; b < cfg_.pre_blocks; ++b)
      dprnn_block(tape, id, ablocks, "audio_block" + std::to_string(b),
                  cfg_.h_audio);

    // ---- radio encoder (shared weights across streams) ----
    // rblocks[u*n_src + i]: [K_a, S, N_r] after block-axis interpolation
    std::vector<int> rblocks;
    if (cfg_.use_radio) {
      rblocks.resize(std::size_t(U) * std::size_t(cfg_.n_src));
      for (int u = 0; u < U; ++u)
        for (int i = 0; i < cfg_.n_src; ++i) {
          int iq = tape.input({2, Tr}, radio[std::size_t(u)][std::size_t(i)]);
          int e = tape.relu(tape.conv1d(iq, id.at("enc_r.w"), id.at("enc_r.b"),
                                        cfg_.kernel, cfg_.stride));
          int feat = tape.transpose2(e);  // [L_r, N_enc_r]
          int ln =
              tape.layer_norm(feat, id.at("enc_r.ln.g"), id.at("enc_r.ln.b"));
          int bott = tape.linear(ln, id.at("bn_r.w"), id.at("bn_r.b"));
          rblocks[std::size_t(u * cfg_.n_src + i)] =
              tape.segment(bott, cfg_.k_radio, sh.hop_radio, sh.blocks);
        }
      for (int b = 0; b < cfg_.pre_blocks; ++b)
        dprnn_block(tape, id, rblocks, "radio_block" + std::to_string(b),
                    cfg_.h_radio);
      for (auto& r : rblocks) r = tape.interp_blocks(r, cfg_.k_audio);
    }

    // ---- fusion + masker trunk ----
    // With radio: one trunk pass per (utterance, target source), shared
    // weights, radio features rotated so the target's stream comes first.
    // Without radio: one pass per utterance, all masks from one head.
    std::vector<int> trunk;
    if (cfg_.use_radio) {
      trunk.resize(std::size_t(U) * std::size_t(cfg_.n_src));
      for (int u = 0; u < U; ++u)
        for (int i = 0; i < cfg_.n_src; ++i) {
          std::vector<int> parts{ablocks[std::size_t(u)]};
          for (int j = 0; j < cfg_.n_src; ++j)
            parts.push_back(
                rblocks[std::size_t(u * cfg_.n_src + (i + j) % cfg_.n_src)]);
          trunk[std::size_t(u * cfg_.n_src + i)] = tape.concat_last(parts);
        }
    } else {
      trunk = ablocks;
    }
    for (int b = 0; b < cfg_.post_blocks; ++b)
      dprnn_block(tape, id, trunk, "fused_block" + std::to_string(b),
                  cfg_.h_fused);

    // ---- mask head, mask apply, decode ----
    const int full = (sh.frames_audio - 1) * cfg_.stride + cfg_.kernel;
    int dec_zero_bias = tape.input(DiffTensor<S>::zeros({1}));
    for (int u = 0; u < U; ++u) {
      Forward& f = out.utt[std::size_t(u)];
      for (int i = 0; i < cfg_.n_src; ++i) {
        int mask_blocks;  // [K_a, S, N_enc_a]
        if (cfg_.use_radio) {
          int head = tape.linear(trunk[std::size_t(u * cfg_.n_src + i)],
                                 id.at("mask.w"), id.at("mask.b"));
          mask_blocks = tape.relu(head);
        } else {
          int head = tape.linear(trunk[std::size_t(u)], id.at("mask.w"),
                                 id.at("mask.b"));
          mask_blocks = tape.slice_last(tape.relu(head), i * cfg_.n_enc_audio,
                                        (i + 1) * cfg_.n_enc_audio);
        }
        int mask = tape.overlap_add(mask_blocks, sh.frames_audio);
        f.masks.push_back(mask);
        int masked = tape.mul(tape.transpose2(mask), enc[std::size_t(u)]);
        int wave = tape.conv1d_transpose(masked, id.at("dec.w"), dec_zero_bias,
                                         cfg_.kernel, cfg_.stride, full);
        if (full < T) wave = tape.pad_last(wave, T);
        f.sources.push_back(tape.reshape(wave, {T}));
      }
    }
    return out;
  }

  /// Single-utterance convenience wrapper.
  BatchForward forward_one(Tape<S>& tape, const std::vector<S>& mix,
                           const std::vector<std::vector<S>>& radio) const {
    return forward(tape, {mix}, {radio});
  }

 private:
  // One dual-path block applied in place to every tensor in `blocks`
  // (each [K, S, N]); the heavy recurrences run on a single stacked tensor.
  // Per stage: RNN along its axis -> linear back to N -> layer norm ->
  // residual. Stage order: across-block (S) first, unidirectional; then
  // within-block (K), bidirectional — unless k_stage_first swaps them.
  void dprnn_block(Tape<S>& tape, std::unordered_map<std::string, int>& id,
                   std::vector<int>& blocks, const std::string& prefix,
                   int /*hidden*/) const {
    auto s_stage = [&]() {
      std::vector<int> ready;
      ready.reserve(blocks.size());
      std::vector<int> widths;
      for (int b : blocks) {
        ready.push_back(tape.transpose3(b, {1, 0, 2}));  // [S, K, N]
        widths.push_back(tape.at(b).shape[0]);
      }
      int stacked = ready.size() == 1 ? ready[0] : tape.stack_mid(ready);
      int h = tape.lstm(stacked, id.at(prefix + ".s.lstm.wx"),
                        id.at(prefix + ".s.lstm.wh"),
                        id.at(prefix + ".s.lstm.b"), false);
      int fc = tape.linear(h, id.at(prefix + ".s.fc.w"),
                           id.at(prefix + ".s.fc.b"));
      int ln = tape.layer_norm(fc, id.at(prefix + ".s.ln.g"),
                               id.at(prefix + ".s.ln.b"));
      int off = 0;
      for (std::size_t u = 0; u < blocks.size(); ++u) {
        int part = ready.size() == 1
                       ? ln
                       : tape.slice_mid(ln, off, off + widths[u]);
        off += widths[u];
        blocks[u] = tape.add(blocks[u], tape.transpose3(part, {1, 0, 2}));
      }
    };
    auto k_stage = [&]() {
      std::vector<int> widths;
      for (int b : blocks) widths.push_back(tape.at(b).shape[1]);
      int stacked = blocks.size() == 1 ? blocks[0] : tape.stack_mid(blocks);
      int h = tape.bilstm(
          stacked, id.at(prefix + ".k.fwd.wx"), id.at(prefix + ".k.fwd.wh"),
          id.at(prefix + ".k.fwd.b"), id.at(prefix + ".k.rev.wx"),
          id.at(prefix + ".k.rev.wh"), id.at(prefix + ".k.rev.b"));
      int fc = tape.linear(h, id.at(prefix + ".k.fc.w"),
                           id.at(prefix + ".k.fc.b"));
      int ln = tape.layer_norm(fc, id.at(prefix + ".k.ln.g"),
                               id.at(prefix + ".k.ln.b"));
      int off = 0;
      for (std::size_t u = 0; u < blocks.size(); ++u) {
        int part = blocks.size() == 1
                       ? ln
                       : tape.slice_mid(ln, off, off + widths[u]);
        off += widths[u];
        blocks[u] = tape.add(blocks[u], part);
      }
    };
    if (cfg_.k_stage_first) {
      k_stage();
      s_stage();
    } else {
      s_stage();
      k_stage();
    }
  }

  void add_block_params(const std::string& prefix, int n, int h) {
    params_.add(prefix + ".s.lstm.wx", {n, 4 * h});
    params_.add(prefix + ".s.lstm.wh", {h, 4 * h});
    params_.add(prefix + ".s.lstm.b", {4 * h});
    params_.add(prefix + ".s.fc.w", {h, n});
    params_.add(prefix + ".s.fc.b", {n});
    params_.add(prefix + ".s.ln.g", {n});
    params_.add(prefix + ".s.ln.b", {n});
    for (const char* dir : {".k.fwd", ".k.rev"}) {
      params_.add(prefix + dir + ".wx", {n, 4 * h});
      params_.add(prefix + dir + ".wh", {h, 4 * h});
      params_.add(prefix + dir + ".b", {4 * h});
    }
    params_.add(prefix + ".k.fc.w", {2 * h, n});
    params_.add(prefix + ".k.fc.b", {n});
    params_.add(prefix + ".k.ln.g", {n});
    params_.add(prefix + ".k.ln.b", {n});
  }

  void register_params() {
    params_.add("enc_a.w", {cfg_.n_enc_audio, cfg_.kernel});
    params_.add("enc_a.b", {cfg_.n_enc_audio});
    params_.add("enc_a.ln.g", {cfg_.n_enc_audio});
    params_.add("enc_a.ln.b", {cfg_.n_enc_audio});
    params_.add("bn_a.w", {cfg_.n_enc_audio, cfg_.n_audio});
    params_.add("bn_a.b", {cfg_.n_audio});
    for (int b = 0; b < cfg_.pre_blocks; ++b)
      add_block_params("audio_block" + std::to_string(b), cfg_.n_audio,
                       cfg_.h_audio);
    if (cfg_.use_radio) {
      params_.add("enc_r.w", {cfg_.n_enc_radio, 2 * cfg_.kernel});
      params_.add("enc_r.b", {cfg_.n_enc_radio});
      params_.add("enc_r.ln.g", {cfg_.n_enc_radio});
      params_.add("enc_r.ln.b", {cfg_.n_enc_radio});
      params_.add("bn_r.w", {cfg_.n_enc_radio, cfg_.n_radio});
      params_.add("bn_r.b", {cfg_.n_radio});
      for (int b = 0; b < cfg_.pre_blocks; ++b)
        add_block_params("radio_block" + std::to_string(b), cfg_.n_radio,
                         cfg_.h_radio);
    }
    for (int b = 0; b < cfg_.post_blocks; ++b)
      add_block_params("fused_block" + std::to_string(b), cfg_.n_fused(),
                       cfg_.h_fused);
    const int head_out =
        cfg_.use_radio ? cfg_.n_enc_audio : cfg_.n_src * cfg_.n_enc_audio;
    params_.add("mask.w", {cfg_.n_fused(), head_out});
    params_.add("mask.b", {head_out});
    params_.add("dec.w", {cfg_.n_enc_audio, cfg_.kernel});
  }

  static bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() &&
           s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  }

  void init_param(typename ModelParams<S>::Item& it, Rng& rng) {
    auto& t = it.tensor;
    if (ends_with(it.name, ".ln.g")) {
      for (auto& v : t.values) v = S(1);
      return;
    }
    if (ends_with(it.name, ".ln.b")) return;  // zero
    if (ends_with(it.name, "lstm.b") || ends_with(it.name, "fwd.b") ||
        ends_with(it.name, "rev.b")) {
      // forget-gate slice starts open so early gradients flow through time
      const int h = t.dim(0) / 4;
      for (int j = h; j < 2 * h; ++j) t.values[std::size_t(j)] = S(1);
      return;
    }
    if (ends_with(it.name, ".b")) return;  // zero bias
    // weights: uniform with fan-in scaling; stored [fan_in, fan_out] for
    // linear/LSTM, [fan_out, fan_in] for conv kernels
    const bool conv = it.name == "enc_a.w" || it.name == "enc_r.w" ||
                      it.name == "dec.w";
    const int fan_in = conv ? t.dim(1) : t.dim(0);
    const double bound = 1.0 / std::sqrt(double(fan_in));
    for (auto& v : t.values) v = S(rng.uniform(-bound, bound));
  }

  NetConfig cfg_;
  ModelParams<S> params_;
};

}  // namespace radioses::nn
