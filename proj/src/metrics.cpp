#include "radioses/metrics.hpp"

#include <cmath>

#include "radioses/common.hpp"

namespace radioses::metrics {

namespace {
constexpr double kEps = 1e-8;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
}  // namespace

double sisdr(const std::vector<double>& est, const std::vector<double>& ref) {
  require(est.size() == ref.size() && !ref.empty(),
          "sisdr: signals must have equal nonzero length");
  const double ref_energy = dot(ref, ref);
  require(ref_energy > 0, "sisdr: reference is all zero");
  const double proj = dot(est, ref) / (ref_energy + kEps);
  double target = 0, resid = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double t = proj * ref[i];
    target += t * t;
    const double r = t - est[i];
    resid += r * r;
  }
  return 10.0 * std::log10((target + kEps) / (resid + kEps));
}

double sisdr_improvement(const std::vector<double>& est,
                         const std::vector<double>& mix,
                         const std::vector<double>& ref) {
  return sisdr(est, ref) - sisdr(mix, ref);
}

}  // namespace radioses::metrics
