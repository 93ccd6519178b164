#pragma once

// Training stack: SiSDR loss graphs (fixed or permutation-invariant
// assignment), Adam with decoupled-from-nothing classic L2 and global norm
// clipping, the step-decay + plateau learning-rate schedule, and the epoch
// loop with early stopping and divergence abort.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "radioses/nn/model.hpp"

namespace radioses::nn {

/// Scale-invariant SDR of one estimate/reference pair as a scalar graph
/// node, in dB, eps = 1e-8 inside every ratio.
template <typename S>
int sisdr_node(Tape<S>& tape, int est, int ref) {
  const S eps = S(1e-8);
  int er = tape.sum_all(tape.mul(est, ref));
  int rr = tape.add_const(tape.sum_all(tape.mul(ref, ref)), eps);
  int proj = tape.div(er, rr);
  int s_t = tape.scale_by(proj, ref);
  int num = tape.add_const(tape.sum_all(tape.mul(s_t, s_t)), eps);
  int e = tape.sub(s_t, est);
  int den = tape.add_const(tape.sum_all(tape.mul(e, e)), eps);
  return tape.scale(tape.log_(tape.div(num, den)), S(10.0 / std::log(10.0)));
}

struct LossChoice {
  int node = -1;              // scalar loss node: -mean_i sisdr(est_i, ref_pi)
  std::vector<int> perm;      // chosen assignment, est i <- ref perm[i]
  double value = 0;           // loss value
};

/// Loss for one utterance. permute=false pairs est i with ref i (the fixed
/// radio-order assignment); permute=true searches all assignments and
/// backpropagates only the best one.
template <typename S>
LossChoice separation_loss(Tape<S>& tape, const std::vector<int>& est,
                           const std::vector<int>& ref, bool permute) {
  const int n = int(est.size());
  require(n >= 1 && ref.size() == est.size(),
          "loss: need matching estimate/reference counts");
  LossChoice out;
  out.perm.resize(std::size_t(n));
  std::iota(out.perm.begin(), out.perm.end(), 0);
  std::vector<std::vector<int>> pair(std::size_t(n),
                                     std::vector<int>(std::size_t(n), -1));
  auto node = [&](int i, int j) {
    int& p = pair[std::size_t(i)][std::size_t(j)];
    if (p < 0) p = sisdr_node(tape, est[std::size_t(i)], ref[std::size_t(j)]);
    return p;
  };
  if (permute) {
    std::vector<int> p = out.perm;
    double best = -1e300;
    do {
      double v = 0;
      for (int i = 0; i < n; ++i)
        v += double(tape.at(node(i, p[std::size_t(i)])).values[0]);
      if (v > best) {
        best = v;
        out.perm = p;
      }
    } while (std::next_permutation(p.begin(), p.end()));
  }
  int sum = -1;
  for (int i = 0; i < n; ++i) {
    int sn = node(i, out.perm[std::size_t(i)]);
    sum = sum < 0 ? sn : tape.add(sum, sn);
  }
  out.node = tape.scale(sum, S(-1.0 / n));
  out.value = double(tape.at(out.node).values[0]);
  return out;
}

/// Adam with classic L2 regularization folded into the gradient and global
/// gradient-norm clipping applied after it. Moments kept in double.
template <typename S>
class Adam {
 public:
  Adam(double weight_decay, double clip_norm)
      : weight_decay_(weight_decay), clip_norm_(clip_norm) {}

  /// grads: one buffer per parameter tensor, aligned with params.items.
  void step(double lr, ModelParams<S>& params,
            const std::vector<std::vector<S>>& grads) {
    require(grads.size() == params.items.size(),
            "adam: gradient/parameter mismatch");
    if (m_.empty()) {
      for (const auto& it : params.items) {
        m_.emplace_back(it.tensor.numel(), 0.0);
        v_.emplace_back(it.tensor.numel(), 0.0);
      }
    }
    ++t_;
    // L2 term, then one global norm over everything
    scratch_.resize(grads.size());
    double norm2 = 0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
      const auto& w = params.items[k].tensor.values;
      require(grads[k].size() == w.size(), "adam: bad gradient size");
      scratch_[k].resize(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = double(grads[k][i]) + weight_decay_ * double(w[i]);
        scratch_[k][i] = g;
        norm2 += g * g;
      }
    }
    last_norm_ = std::sqrt(norm2);
    const double rescale =
        last_norm_ > clip_norm_ ? clip_norm_ / last_norm_ : 1.0;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < grads.size(); ++k) {
      auto& w = params.items[k].tensor.values;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = scratch_[k][i] * rescale;
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
        const double mh = m_[k][i] / bc1;
        const double vh = v_[k][i] / bc2;
        w[i] = S(double(w[i]) - lr * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  double last_grad_norm() const { return last_norm_; }
  int steps() const { return t_; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  double weight_decay_, clip_norm_;
  int t_ = 0;
  double last_norm_ = 0;
  std::vector<std::vector<double>> m_, v_;
  std::vector<std::vector<double>> scratch_;
};

/// Base rate decays by 0.98 every second epoch (epochs are 1-based, so
/// epoch 4 runs at base*0.98^2); a validation plateau of plateau_patience
/// epochs halves the rate on top of that; early_stop_patience epochs without
/// a new best stops training.
class LrSchedule {
 public:
  double base = 1e-3;
  double decay = 0.98;
  int decay_every = 2;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  int early_stop_patience = 15;

  double rate(int epoch) const {
    return base * std::pow(decay, epoch / decay_every) * plateau_scale_;
  }

  /// Feed the epoch's validation score (higher is better). Returns true when
  /// training should stop.
  bool observe(double val_metric) {
    if (val_metric > best_ + 1e-9) {
      best_ = val_metric;
      since_best_ = 0;
      since_plateau_ = 0;
      return false;
    }
    ++since_best_;
    ++since_plateau_;
    if (since_plateau_ >= plateau_patience) {
      plateau_scale_ *= plateau_factor;
      since_plateau_ = 0;
    }
    return since_best_ >= early_stop_patience;
  }

  double best() const { return best_; }
  double plateau_scale() const { return plateau_scale_; }

 private:
  double plateau_scale_ = 1.0;
  double best_ = -1e300;
  int since_best_ = 0;
  int since_plateau_ = 0;
};

/// One training example: a mixture, its isolated sources, and one radio
/// stream per source (flattened [2, T_r], in-phase row then quadrature row).
struct Utterance {
  std::vector<float> mix;
  std::vector<std::vector<float>> refs;
  std::vector<std::vector<float>> radio;
};

struct TrainOptions {
  int epochs = 60;
  int batch_size = 8;
  std::uint64_t seed = 0;
  bool pit = false;  // fixed radio-order assignment unless set
  LrSchedule schedule;
  double weight_decay = 1e-6;
  double clip_norm = 5.0;
  bool check_highpass = true;
  bool verbose = false;
  // When set, called at the start of each (1-based) epoch to materialize
  // that epoch's training view — per-epoch radio bin selection and stream
  // augmentation live behind this. The static train_set is used otherwise.
  std::function<std::vector<Utterance>(int epoch)> epoch_data;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_sisdri = 0;
  double lr = 0;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = 0;  // 1-based, 0 when nothing improved
  double best_val_sisdri = -1e300;
  bool early_stopped = false;
  bool diverged = false;
};

/// Optimize net on train_set, validating each epoch on val_set; the model is
/// left holding the best-validation parameters. All utterances must share
/// one audio length (and one radio length when the net uses radio).
TrainResult train(RadioSesNet<float>& net,
                  const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& val_set,
                  const TrainOptions& opt);

/// Mean SiSDR improvement of the net over a set, assignment fixed by stream
/// order unless pit (then best permutation per utterance).
double evaluate_sisdri(const RadioSesNet<float>& net,
                       const std::vector<Utterance>& set, bool pit,
                       int batch_size = 8);

}  // namespace radioses::nn
