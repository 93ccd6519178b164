#pragma once

// Separation quality metrics.

#include <vector>

namespace radioses::metrics {

/// Scale-invariant SDR in dB: project the estimate onto the reference,
/// 10*log10((|s_t|^2 + eps) / (|s_t - est|^2 + eps)) with s_t the projection
/// of est onto ref. eps = 1e-8. Rejects an all-zero reference.
double sisdr(const std::vector<double>& est, const std::vector<double>& ref);

/// sisdr(est, ref) - sisdr(mix, ref): improvement over the unprocessed mix.
double sisdr_improvement(const std::vector<double>& est,
                         const std::vector<double>& mix,
                         const std::vector<double>& ref);

}  // namespace radioses::metrics
