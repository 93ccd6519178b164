#include "radioses/nn/train.hpp"

#include <chrono>
#include <cstdio>

#include "radioses/metrics.hpp"
#include "radioses/signal.hpp"

namespace radioses::nn {

namespace {

/// A raw IQ stream concentrates nearly all its energy below the 90 Hz
/// high-pass edge (carrier, breathing, sway), while a filtered one keeps
/// well under 1% there; even a stream buried in broadband augmentation noise
/// stays around 9%. Reject when more than a quarter of the energy sits below
/// half the filter edge (45 Hz at the usual 1000 Hz, scaled with the rate).
void check_highpassed(const std::vector<float>& stream, double radio_rate) {
  const std::size_t half = stream.size() / 2;
  require(half > 0, "train: empty radio stream");
  std::vector<cdouble> x(next_pow2(half), cdouble{0.0, 0.0});
  for (std::size_t i = 0; i < half; ++i)
    x[i] = cdouble{double(stream[i]), double(stream[half + i])};
  fft_inplace(x, false);
  const double cutoff = 0.045 * radio_rate;
  const double bin_hz = radio_rate / double(x.size());
  double low = 0.0, total = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double f = double(k) * bin_hz;
    const double e = std::norm(x[k]);
    total += e;
    if (f < cutoff || radio_rate - f < cutoff) low += e;
  }
  require(total == 0.0 || low <= 0.25 * total,
          "train: radio stream energy is concentrated below the high-pass "
          "band; run the 90 Hz filter first");
}

void check_data(const NetConfig& cfg, const std::vector<Utterance>& set,
                const std::string& which, bool check_hp) {
  require(!set.empty(), "train: empty " + which + " set");
  const std::size_t T = set[0].mix.size();
  for (const auto& u : set) {
    require(u.mix.size() == T, "train: " + which + " lengths differ");
    require(int(u.refs.size()) == cfg.n_src,
            "train: wrong reference count in " + which + " set");
    for (const auto& r : u.refs) {
      require(r.size() == T, "train: reference length mismatch");
      double e = 0;
      for (float x : r) e += double(x) * double(x);
      require(e > 0, "train: all-zero reference in " + which + " set");
    }
    if (cfg.use_radio) {
      require(int(u.radio.size()) == cfg.n_src,
              "train: wrong radio stream count in " + which + " set");
      for (const auto& s : u.radio) {
        require(s.size() == set[0].radio[0].size(),
                "train: radio length mismatch");
        if (check_hp) check_highpassed(s, cfg.radio_rate);
      }
    }
  }
}

std::vector<double> to_double(const std::vector<float>& v) {
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace

double evaluate_sisdri(const RadioSesNet<float>& net,
                       const std::vector<Utterance>& set, bool pit,
                       int batch_size) {
  require(!set.empty() && batch_size >= 1, "eval: bad arguments");
  const int n_src = net.config().n_src;
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t at = 0; at < set.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t bend =
        std::min(set.size(), at + static_cast<std::size_t>(batch_size));
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
      const Utterance& u = set[b];
      const auto& f = fwd.utt[b - at];
      std::vector<std::vector<double>> est;
      for (int s : f.sources) {
        const auto& v = tape.at(s).values;
        est.emplace_back(v.begin(), v.end());
      }
      const std::vector<double> mix = to_double(u.mix);
      std::vector<std::vector<double>> refs;
      for (const auto& r : u.refs) refs.push_back(to_double(r));

      std::vector<int> perm(static_cast<std::size_t>(n_src));
      std::iota(perm.begin(), perm.end(), 0);
      if (pit) {
        std::vector<int> p = perm;
        double best = -1e300;
        do {
          double v = 0;
          for (int i = 0; i < n_src; ++i)
            v += metrics::sisdr(est[std::size_t(i)],
                                refs[std::size_t(p[std::size_t(i)])]);
          if (v > best) {
            best = v;
            perm = p;
          }
        } while (std::next_permutation(p.begin(), p.end()));
      }
      for (int i = 0; i < n_src; ++i) {
        acc += metrics::sisdr_improvement(
            est[std::size_t(i)], mix, refs[std::size_t(perm[std::size_t(i)])]);
        ++n;
      }
    }
  }
  return acc / double(n);
}

TrainResult train(RadioSesNet<float>& net,
                  const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& val_set,
                  const TrainOptions& opt) {
  const NetConfig& cfg = net.config();
  require(opt.epochs >= 1 && opt.batch_size >= 1, "train: bad options");
  check_data(cfg, train_set, "train", opt.check_highpass && cfg.use_radio);
  check_data(cfg, val_set, "val", opt.check_highpass && cfg.use_radio);

  TrainResult res;
  LrSchedule sched = opt.schedule;
  Adam<float> adam(opt.weight_decay, opt.clip_norm);
  Rng rng(mix_seed(opt.seed, 0x5452414e));
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<std::vector<float>> best_params;
  auto snapshot = [&]() {
    best_params.clear();
    for (const auto& it : net.params().items)
      best_params.push_back(it.tensor.values);
  };
  auto restore = [&]() {
    if (best_params.empty()) return;
    for (std::size_t i = 0; i < best_params.size(); ++i)
      net.params().items[i].tensor.values = best_params[i];
  };

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    const auto tic = std::chrono::steady_clock::now();
    const double lr = sched.rate(epoch);
    std::vector<Utterance> epoch_view;
    if (opt.epoch_data) {
      epoch_view = opt.epoch_data(epoch);
      require(epoch_view.size() == train_set.size(),
              "train: epoch data provider changed the set size");
      check_data(cfg, epoch_view, "train",
                 opt.check_highpass && cfg.use_radio);
    }
    const std::vector<Utterance>& active =
        opt.epoch_data ? epoch_view : train_set;
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t loss_n = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t bend =
          std::min(order.size(), at + static_cast<std::size_t>(opt.batch_size));
      std::vector<const Utterance*> batch;
      std::vector<std::vector<float>> mixes;
      std::vector<std::vector<std::vector<float>>> radio;
      for (std::size_t b = at; b < bend; ++b) {
        const Utterance& u = active[std::size_t(order[b])];
        batch.push_back(&u);
        mixes.push_back(u.mix);
        radio.push_back(u.radio);
      }
      Tape<float> tape;
      auto fwd = net.forward(tape, mixes, radio);
      int total = -1;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        std::vector<int> refs;
        for (const auto& r : batch[b]->refs)
          refs.push_back(tape.input({int(r.size())}, r));
        LossChoice lc =
            separation_loss(tape, fwd.utt[b].sources, refs, opt.pit);
        total = total < 0 ? lc.node : tape.add(total, lc.node);
      }
      const int loss = tape.scale(total, 1.0f / float(batch.size()));
      const double lval = double(tape.at(loss).values[0]);
      if (!std::isfinite(lval)) {
        res.diverged = true;
        restore();
        return res;
      }
      loss_sum += lval * double(batch.size());
      loss_n += batch.size();
      tape.backward(loss);
      std::vector<std::vector<float>> grads;
      grads.reserve(fwd.param_ids.size());
      for (int pid : fwd.param_ids) grads.push_back(tape.at(pid).gradient);
      adam.step(lr, net.params(), grads);
      if (!std::isfinite(adam.last_grad_norm())) {
        res.diverged = true;
        restore();
        return res;
      }
    }

    const double val = evaluate_sisdri(net, val_set, opt.pit, opt.batch_size);
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / double(loss_n);
    st.val_sisdri = val;
    st.lr = lr;
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                               tic)
                     .count();
    res.history.push_back(st);
    if (opt.verbose) {
      std::printf("epoch %3d  lr %.2e  loss %9.4f  val sisdri %8.4f  %6.1fs\n",
                  epoch, lr, st.train_loss, val, st.seconds);
      std::fflush(stdout);
    }
    if (!std::isfinite(val)) {
      res.diverged = true;
      restore();
      return res;
    }
    if (val > res.best_val_sisdri) {
      res.best_val_sisdri = val;
      res.best_epoch = epoch;
      snapshot();
    }
    if (sched.observe(val)) {
      res.early_stopped = true;
      break;
    }
  }
  restore();
  return res;
}

}  // namespace radioses::nn
