#include "radioses/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace radioses {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// ---------------------------------------------------------------------------
// Beamforming

BeamformGrid BeamformGrid::standard(const RadarConfig& cfg) {
  std::vector<double> angles;
  for (int a = -60; a <= 60; a += 2) angles.push_back(double(a));
  return with_angles(cfg, angles);
}

BeamformGrid BeamformGrid::with_angles(const RadarConfig& cfg,
                                       const std::vector<double>& angles_deg) {
  require(!angles_deg.empty(), "beamform grid: empty angle list");
  BeamformGrid g;
  g.angles_deg = angles_deg;
  g.steering.resize(cfg.n_antennas, Eigen::Index(angles_deg.size()));
  const double d = cfg.antenna_spacing();
  for (std::size_t a = 0; a < angles_deg.size(); ++a) {
    const double sin_th = std::sin(angles_deg[a] * kPi / 180.0);
    for (int m = 0; m < cfg.n_antennas; ++m)
      g.steering(m, Eigen::Index(a)) =
          std::polar(1.0, -2.0 * kPi * m * d * sin_th / cfg.wavelength);
  }
  return g;
}

IqStream RangeAzimuthTensor::series(int r, int a, int t0, int t1) const {
  require(r >= 0 && r < n_range && a >= 0 && a < n_angles,
          "range-azimuth series: cell out of range");
  require(t0 >= 0 && t1 <= frames && t0 < t1,
          "range-azimuth series: bad frame window");
  IqStream s;
  s.sample_rate = frame_rate;
  s.samples.assign(data.begin() + std::ptrdiff_t(index(r, a, t0)),
                   data.begin() + std::ptrdiff_t(index(r, a, t1)));
  return s;
}

RangeAzimuthTensor beamform(const CirTensor& cir, const BeamformGrid& grid) {
  require(grid.steering.rows() == cir.config.n_antennas,
          "beamform: antenna count mismatch between grid and CIR");
  const int M = cir.config.n_antennas;
  const int R = cir.config.n_range_bins;
  const int A = int(grid.angles_deg.size());
  const int T = cir.frames;

  RangeAzimuthTensor out;
  out.n_range = R;
  out.n_angles = A;
  out.frames = T;
  out.frame_rate = cir.config.frame_rate;
  out.angles_deg = grid.angles_deg;
  out.data.resize(std::size_t(R) * std::size_t(A) * std::size_t(T));

  const Eigen::MatrixXcd weights = grid.steering.conjugate();  // M x A
  Eigen::MatrixXcd frame(R, A);
  for (int t = 0; t < T; ++t) {
    Eigen::Map<const Eigen::MatrixXcd> h(
        cir.data.data() + std::size_t(t) * std::size_t(M) * std::size_t(R), R,
        M);
    frame.noalias() = h * weights;
    for (int r = 0; r < R; ++r)
      for (int a = 0; a < A; ++a) out.at(r, a, t) = frame(r, a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Maps

RealMap power_map(const RangeAzimuthTensor& bf, int t0, int t1) {
  require(t0 >= 0 && t1 <= bf.frames && t0 < t1, "power_map: bad window");
  RealMap out(bf.n_range, bf.n_angles);
  const double inv = 1.0 / double(t1 - t0);
  for (int r = 0; r < bf.n_range; ++r)
    for (int a = 0; a < bf.n_angles; ++a) {
      const cdouble* s = bf.data.data() + bf.index(r, a, 0);
      double acc = 0.0;
      for (int t = t0; t < t1; ++t) acc += std::norm(s[t]);
      out(r, a) = acc * inv;
    }
  return out;
}

RealMap variance_map(const RangeAzimuthTensor& bf, int t0, int t1) {
  require(t0 >= 0 && t1 <= bf.frames && t1 - t0 >= 2,
          "variance_map: need at least two frames");
  RealMap out(bf.n_range, bf.n_angles);
  const int n = t1 - t0;
  for (int r = 0; r < bf.n_range; ++r)
    for (int a = 0; a < bf.n_angles; ++a) {
      const cdouble* s = bf.data.data() + bf.index(r, a, 0);
      cdouble mean{0.0, 0.0};
      for (int t = t0; t < t1; ++t) mean += s[t];
      mean /= double(n);
      double acc = 0.0;
      for (int t = t0; t < t1; ++t) acc += std::norm(s[t] - mean);
      out(r, a) = acc / double(n - 1);  // var(Re) + var(Im)
    }
  return out;
}

// ---------------------------------------------------------------------------
// CFAR

BoolMap cfar_detect(const RealMap& map, const CfarConfig& cfg) {
  require(cfg.train_range >= 0 && cfg.train_angle >= 0 &&
              cfg.guard_range >= 0 && cfg.guard_angle >= 0,
          "cfar: negative window sizes");
  require(cfg.pfa > 0.0 && cfg.pfa < 1.0, "cfar: P_fa must be in (0, 1)");
  require((map >= 0.0).all(), "cfar: map must be nonnegative");
  const int R = int(map.rows());
  const int A = int(map.cols());

  // Summed-area table: S(i+1, j+1) = sum of map.block(0, 0, i+1, j+1).
  Eigen::ArrayXXd sat(R + 1, A + 1);
  sat.setZero();
  for (int r = 0; r < R; ++r)
    for (int a = 0; a < A; ++a)
      sat(r + 1, a + 1) =
          map(r, a) + sat(r, a + 1) + sat(r + 1, a) - sat(r, a);
  auto box_sum = [&](int r0, int r1, int a0, int a1) {  // inclusive bounds
    return sat(r1 + 1, a1 + 1) - sat(r0, a1 + 1) - sat(r1 + 1, a0) +
           sat(r0, a0);
  };
  auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };

  const int or_ = cfg.train_range + cfg.guard_range;
  const int oa = cfg.train_angle + cfg.guard_angle;
  BoolMap out(R, A);
  for (int r = 0; r < R; ++r) {
    for (int a = 0; a < A; ++a) {
      const int R0 = clampi(r - or_, 0, R - 1), R1 = clampi(r + or_, 0, R - 1);
      const int A0 = clampi(a - oa, 0, A - 1), A1 = clampi(a + oa, 0, A - 1);
      const int G0 = clampi(r - cfg.guard_range, 0, R - 1);
      const int G1 = clampi(r + cfg.guard_range, 0, R - 1);
      const int H0 = clampi(a - cfg.guard_angle, 0, A - 1);
      const int H1 = clampi(a + cfg.guard_angle, 0, A - 1);
      const int n_train = (R1 - R0 + 1) * (A1 - A0 + 1) -
                          (G1 - G0 + 1) * (H1 - H0 + 1);
      if (n_train <= 0) {
        out(r, a) = false;
        continue;
      }
      const double train_sum =
          box_sum(R0, R1, A0, A1) - box_sum(G0, G1, H0, H1);
      // CA-CFAR threshold scale for the truncated training count.
      const double alpha =
          double(n_train) * (std::pow(cfg.pfa, -1.0 / double(n_train)) - 1.0);
      out(r, a) = map(r, a) * double(n_train) > alpha * train_sum;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clutter gates

std::pair<BoolMap, BoolMap> clutter_gate(const RealMap& V,
                                         const ClutterConfig& cfg,
                                         const std::vector<double>& angles_deg) {
  require(cfg.eta_stat < cfg.eta_mov,
          "clutter gate: eta_stat must be below eta_mov");
  require(std::size_t(V.cols()) == angles_deg.size(),
          "clutter gate: angle list does not match map");
  const int R = int(V.rows());
  const int A = int(V.cols());
  BoolMap b_stat(R, A), b_mov(R, A);
  for (int a = 0; a < A; ++a) {
    const double cos_th = std::cos(angles_deg[std::size_t(a)] * kPi / 180.0);
    for (int r = 0; r < R; ++r) {
      const double geom =
          cos_th / std::pow(1.0 + double(r) * cfg.range_resolution, 2.0);
      b_stat(r, a) = V(r, a) > cfg.eta_stat * geom;
      b_mov(r, a) = V(r, a) < cfg.eta_mov * geom;
    }
  }
  return {b_stat, b_mov};
}

BoolMap combine(const BoolMap& b_cfar, const BoolMap& b_stat,
                const BoolMap& b_mov) {
  require(b_cfar.rows() == b_stat.rows() && b_cfar.cols() == b_stat.cols() &&
              b_cfar.rows() == b_mov.rows() && b_cfar.cols() == b_mov.cols(),
          "combine: map shape mismatch");
  return b_cfar && b_stat && b_mov;
}

// ---------------------------------------------------------------------------
// Clustering

std::vector<Cluster> cluster_people(const BoolMap& B, double eps,
                                    int min_pts) {
  require(eps > 0.0, "dbscan: eps must be positive");
  require(min_pts >= 1, "dbscan: min_pts must be at least 1");
  std::vector<std::pair<int, int>> pts;
  for (int r = 0; r < B.rows(); ++r)
    for (int a = 0; a < B.cols(); ++a)
      if (B(r, a)) pts.emplace_back(r, a);
  const std::size_t n = pts.size();
  const double eps2 = eps * eps;

  auto close = [&](std::size_t i, std::size_t j) {
    const double dr = double(pts[i].first - pts[j].first);
    const double da = double(pts[i].second - pts[j].second);
    return dr * dr + da * da <= eps2;
  };

  std::vector<std::vector<std::size_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (close(i, j)) {
        nbrs[i].push_back(j);
        nbrs[j].push_back(i);
      }
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i)
    core[i] = nbrs[i].size() + 1 >= std::size_t(min_pts);  // self counts

  // Connected components over core cells.
  constexpr std::size_t kNone = std::size_t(-1);
  std::vector<std::size_t> comp(n, kNone);
  std::size_t n_comp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i] || comp[i] != kNone) continue;
    std::vector<std::size_t> stack{i};
    comp[i] = n_comp;
    while (!stack.empty()) {
      std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t v : nbrs[u])
        if (core[v] && comp[v] == kNone) {
          comp[v] = n_comp;
          stack.push_back(v);
        }
    }
    ++n_comp;
  }
  // Border cells attach to the lowest-indexed core cell in reach.
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    for (std::size_t v : nbrs[i])
      if (core[v]) {
        comp[i] = comp[v];  // nbrs are in ascending index order
        break;
      }
  }

  std::vector<Cluster> out(n_comp);
  for (std::size_t i = 0; i < n; ++i)
    if (comp[i] != kNone) out[comp[i]].members.push_back(pts[i]);

  auto median_of = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? double(v[m]) : 0.5 * double(v[m - 1] + v[m]);
  };
  for (Cluster& c : out) {
    std::sort(c.members.begin(), c.members.end());
    std::vector<int> rs, as;
    for (auto [r, a] : c.members) {
      rs.push_back(r);
      as.push_back(a);
    }
    c.centroid_range = median_of(rs);
    c.centroid_angle = median_of(as);
  }
  std::sort(out.begin(), out.end(), [](const Cluster& x, const Cluster& y) {
    return x.members.front() < y.members.front();
  });
  return out;
}

std::vector<Cluster> suppress_sidelobe_clusters(
    const std::vector<Cluster>& clusters, const RealMap& power,
    const BoolMap& b_cfar, double ratio) {
  require(ratio > 1.0, "sidelobe suppression: ratio must exceed 1");
  require(power.rows() == b_cfar.rows() && power.cols() == b_cfar.cols(),
          "sidelobe suppression: map shape mismatch");
  std::vector<Cluster> out;
  for (const Cluster& c : clusters) {
    double peak = 0.0;
    for (auto [r, a] : c.members) peak = std::max(peak, power(r, a));
    const int row = int(std::lround(c.centroid_range));
    bool blanked = false;
    for (int r = std::max(0, row - 1);
         r <= std::min(int(power.rows()) - 1, row + 1) && !blanked; ++r)
      for (int a = 0; a < power.cols(); ++a) {
        if (!b_cfar(r, a)) continue;
        if (std::count(c.members.begin(), c.members.end(),
                       std::pair<int, int>(r, a)))
          continue;
        if (power(r, a) > ratio * peak) {
          blanked = true;
          break;
        }
      }
    if (!blanked) out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assignment (shortest augmenting path with dual potentials)

std::vector<int> munkres_assign(const Eigen::MatrixXd& cost) {
  const int rows = int(cost.rows());
  const int cols = int(cost.cols());
  if (rows == 0 || cols == 0) return std::vector<int>(std::size_t(rows), -1);
  require(cost.allFinite() && (cost.array() >= 0.0).all(),
          "munkres: costs must be finite and nonnegative");

  const bool transposed = rows > cols;
  const Eigen::MatrixXd c = transposed ? cost.transpose() : cost;
  const int n = int(c.rows());  // n <= m
  const int m = int(c.cols());

  constexpr double kInf = std::numeric_limits<double>::max() / 4.0;
  std::vector<double> u(std::size_t(n) + 1, 0.0), v(std::size_t(m) + 1, 0.0);
  std::vector<int> match(std::size_t(m) + 1, 0);  // 1-based row matched to col
  for (int i = 1; i <= n; ++i) {
    std::vector<double> dist(std::size_t(m) + 1, kInf);
    std::vector<int> from(std::size_t(m) + 1, 0);
    std::vector<bool> used(std::size_t(m) + 1, false);
    match[0] = i;
    int j0 = 0;
    do {
      used[std::size_t(j0)] = true;
      const int i0 = match[std::size_t(j0)];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[std::size_t(j)]) continue;
        const double cur = c(i0 - 1, j - 1) - u[std::size_t(i0)] - v[std::size_t(j)];
        if (cur < dist[std::size_t(j)]) {
          dist[std::size_t(j)] = cur;
          from[std::size_t(j)] = j0;
        }
        if (dist[std::size_t(j)] < delta) {
          delta = dist[std::size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[std::size_t(j)]) {
          u[std::size_t(match[std::size_t(j)])] += delta;
          v[std::size_t(j)] -= delta;
        } else {
          dist[std::size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[std::size_t(j0)] != 0);
    // Augment along the alternating path.
    while (j0 != 0) {
      const int j1 = from[std::size_t(j0)];
      match[std::size_t(j0)] = match[std::size_t(j1)];
      j0 = j1;
    }
  }

  std::vector<int> rowsol(std::size_t(rows), -1);
  for (int j = 1; j <= m; ++j) {
    if (match[std::size_t(j)] == 0) continue;
    const int r = match[std::size_t(j)] - 1;
    if (transposed)
      rowsol[std::size_t(j - 1)] = r;
    else
      rowsol[std::size_t(r)] = j - 1;
  }
  return rowsol;
}

// ---------------------------------------------------------------------------
// Tracking

void Tracker::update(const std::vector<Cluster>& clusters) {
  constexpr double kBig = 1e9;
  const std::size_t nt = tracks_.size();
  const std::size_t nc = clusters.size();

  std::vector<int> track_to_cluster(nt, -1);
  if (nt > 0 && nc > 0) {
    Eigen::MatrixXd cost(static_cast<Eigen::Index>(nt),
                         static_cast<Eigen::Index>(nc));
    for (std::size_t i = 0; i < nt; ++i)
      for (std::size_t j = 0; j < nc; ++j) {
        const double dr = tracks_[i].centroid_range - clusters[j].centroid_range;
        const double da = tracks_[i].centroid_angle - clusters[j].centroid_angle;
        const double dist = std::hypot(dr, da);
        cost(Eigen::Index(i), Eigen::Index(j)) =
            dist <= cfg_.gate_distance ? dist : kBig;
      }
    std::vector<int> rowsol = munkres_assign(cost);
    for (std::size_t i = 0; i < nt; ++i) {
      const int j = rowsol[i];
      if (j >= 0 && cost(Eigen::Index(i), Eigen::Index(j)) < kBig / 2)
        track_to_cluster[i] = j;
    }
  }

  std::vector<bool> cluster_used(nc, false);
  for (std::size_t i = 0; i < nt; ++i) {
    SpeakerTrack& tr = tracks_[i];
    const int j = track_to_cluster[i];
    if (j >= 0) {
      cluster_used[std::size_t(j)] = true;
      tr.centroid_range = clusters[std::size_t(j)].centroid_range;
      tr.centroid_angle = clusters[std::size_t(j)].centroid_angle;
      tr.members = clusters[std::size_t(j)].members;
      tr.misses = 0;
    } else {
      ++tr.misses;  // keep last known centroid in the history
    }
    tr.history.emplace_back(tr.centroid_range, tr.centroid_angle);
  }
  std::erase_if(tracks_, [&](const SpeakerTrack& tr) {
    return tr.misses > cfg_.miss_limit;
  });

  for (std::size_t j = 0; j < nc; ++j) {
    if (cluster_used[j]) continue;
    SpeakerTrack tr;
    tr.id = next_id_++;
    tr.centroid_range = clusters[j].centroid_range;
    tr.centroid_angle = clusters[j].centroid_angle;
    tr.members = clusters[j].members;
    tr.history.emplace_back(tr.centroid_range, tr.centroid_angle);
    tracks_.push_back(std::move(tr));
  }
}

// ---------------------------------------------------------------------------
// Extraction

std::vector<IqStream> extract_streams(
    const RangeAzimuthTensor& bf,
    const std::vector<std::pair<int, int>>& members, double centroid_range,
    double centroid_angle, ExtractMode mode, int t0, int t1,
    int max_candidates) {
  require(!members.empty(), "extract_streams: no member cells");
  require(max_candidates >= 1, "extract_streams: bad candidate cap");

  auto dist2 = [](const std::pair<int, int>& p, double r, double a) {
    const double dr = double(p.first) - r;
    const double da = double(p.second) - a;
    return dr * dr + da * da;
  };

  if (mode == ExtractMode::test) {
    std::vector<int> rs, as;
    for (auto [r, a] : members) {
      rs.push_back(r);
      as.push_back(a);
    }
    auto median_of = [](std::vector<int> v) {
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size() / 2;
      return v.size() % 2 ? double(v[m]) : 0.5 * double(v[m - 1] + v[m]);
    };
    const double mr = median_of(rs), ma = median_of(as);
    std::pair<int, int> best = members.front();
    double best_d = dist2(best, mr, ma);
    for (const auto& p : members) {
      const double d = dist2(p, mr, ma);
      if (d < best_d - 1e-12 || (std::abs(d - best_d) <= 1e-12 && p < best)) {
        best = p;
        best_d = d;
      }
    }
    return {bf.series(best.first, best.second, t0, t1)};
  }

  std::vector<std::pair<int, int>> sorted = members;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [&](const auto& x, const auto& y) {
                     const double dx = dist2(x, centroid_range, centroid_angle);
                     const double dy = dist2(y, centroid_range, centroid_angle);
                     if (dx != dy) return dx < dy;
                     return x < y;
                   });
  const std::size_t k =
      std::min(sorted.size(), std::size_t(max_candidates));
  std::vector<IqStream> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    out.push_back(bf.series(sorted[i].first, sorted[i].second, t0, t1));
  return out;
}

// ---------------------------------------------------------------------------
// Driver

std::vector<WindowDetection> detect_people(const RangeAzimuthTensor& bf,
                                           const FrontendConfig& cfg) {
  require(bf.frames >= 2, "detect_people: input too short");
  const int W = cfg.clutter.window;
  const int n_windows = bf.frames < W ? 1 : bf.frames / W;

  std::vector<WindowDetection> out;
  Tracker tracker(cfg.tracker);
  for (int w = 0; w < n_windows; ++w) {
    const int t0 = w * W;
    const int t1 = bf.frames < W ? bf.frames : (w + 1) * W;
    WindowDetection det;
    det.window_index = w;
    det.t0 = t0;
    det.t1 = t1;
    const RealMap power = power_map(bf, t0, t1);
    det.b_cfar = cfar_detect(power, cfg.cfar);
    det.variance = variance_map(bf, t0, t1);
    auto [b_stat, b_mov] = clutter_gate(det.variance, cfg.clutter, bf.angles_deg);
    det.b_stat = std::move(b_stat);
    det.b_mov = std::move(b_mov);
    det.b = combine(det.b_cfar, det.b_stat, det.b_mov);
    det.clusters = suppress_sidelobe_clusters(
        cluster_people(det.b, cfg.dbscan_eps, cfg.dbscan_min_pts), power,
        det.b_cfar, cfg.sidelobe_ratio);
    tracker.update(det.clusters);
    det.tracks = tracker.tracks();
    out.push_back(std::move(det));
  }
  return out;
}

std::vector<WindowDetection> detect_people(const CirTensor& cir,
                                           const FrontendConfig& cfg) {
  FrontendConfig local = cfg;
  local.clutter.range_resolution = cir.config.range_resolution;
  return detect_people(beamform(cir, BeamformGrid::standard(cir.config)),
                       local);
}

}  // namespace radioses
