#pragma once

// Independent scalar-loop reference implementations of every formula under
// test. These stay deliberately naive (one pass per quantity, long double
// accumulators) and share no code with the library.

#include <cmath>
#include <cstdint>
#include <vector>

namespace crossdepth::testing {

constexpr double kOracleDenomEps = 1e-8;

inline double ssi_oracle(const std::vector<double>& pred, const std::vector<double>& gt,
                         const std::vector<bool>& mask, double kappa, double eta) {
  long double sum_g = 0.0L, sum_g2 = 0.0L;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const long double g = std::log(static_cast<long double>(pred[i])) -
                          std::log(static_cast<long double>(gt[i]));
    sum_g += g;
    sum_g2 += g * g;
    ++n;
  }
  const long double m = static_cast<long double>(n);
  long double inner = sum_g2 / m - static_cast<long double>(eta) * (sum_g / m) * (sum_g / m);
  if (inner < 0.0L) inner = 0.0L;
  return static_cast<double>(static_cast<long double>(kappa) * std::sqrt(inner));
}

inline double uncertainty_target_oracle(double pred, double gt, double b) {
  return 1.0 - std::exp(-std::fabs(pred - gt) / (b * (pred + gt) + kOracleDenomEps));
}

inline double uncertainty_loss_oracle(const std::vector<double>& u_t,
                                      const std::vector<double>& u_c,
                                      const std::vector<double>& target_t,
                                      const std::vector<double>& target_c,
                                      const std::vector<bool>& mask) {
  long double sum_t = 0.0L, sum_c = 0.0L;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < u_t.size(); ++i) {
    if (!mask[i]) continue;
    sum_t += std::fabs(u_t[i] - target_t[i]);
    sum_c += std::fabs(u_c[i] - target_c[i]);
    ++n;
  }
  return static_cast<double>(sum_t / n + sum_c / n);
}

inline double urcd_oracle(const std::vector<double>& d_t, const std::vector<double>& d_c,
                          const std::vector<double>& u_t, const std::vector<double>& u_c) {
  long double term1 = 0.0L, term2 = 0.0L;
  const auto n = static_cast<long double>(d_t.size());
  for (std::size_t i = 0; i < d_t.size(); ++i) {
    term1 += (1.0L - u_c[i]) * std::fabs(d_t[i] - d_c[i]);
    term2 += (1.0L - u_t[i]) * std::fabs(d_c[i] - d_t[i]);
  }
  return static_cast<double>(term1 / n + term2 / n);
}

// --- metric oracles, one naive loop per metric -----------------------------

inline double abs_rel_oracle(const std::vector<double>& pred, const std::vector<double>& gt,
                             const std::vector<bool>& mask) {
  long double s = 0.0L;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i]) { s += std::fabs(pred[i] - gt[i]) / gt[i]; ++n; }
  return static_cast<double>(s / n);
}

inline double sq_rel_oracle(const std::vector<double>& pred, const std::vector<double>& gt,
                            const std::vector<bool>& mask) {
  long double s = 0.0L;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i]) { s += (pred[i] - gt[i]) * (pred[i] - gt[i]) / gt[i]; ++n; }
  return static_cast<double>(s / n);
}

inline double rmse_oracle(const std::vector<double>& pred, const std::vector<double>& gt,
                          const std::vector<bool>& mask) {
  long double s = 0.0L;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i]) { s += (pred[i] - gt[i]) * (pred[i] - gt[i]); ++n; }
  return std::sqrt(static_cast<double>(s / n));
}

inline double rmse_log_oracle(const std::vector<double>& pred, const std::vector<double>& gt,
                              const std::vector<bool>& mask) {
  long double s = 0.0L;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const long double g = std::log(static_cast<long double>(pred[i])) -
                          std::log(static_cast<long double>(gt[i]));
    s += g * g;
    ++n;
  }
  return std::sqrt(static_cast<double>(s / n));
}

inline double log10_oracle(const std::vector<double>& pred, const std::vector<double>& gt,
                           const std::vector<bool>& mask) {
  long double s = 0.0L;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i]) { s += std::fabs(std::log10(pred[i]) - std::log10(gt[i])); ++n; }
  return static_cast<double>(s / n);
}

inline double delta_oracle(const std::vector<double>& pred, const std::vector<double>& gt,
                           const std::vector<bool>& mask, int power) {
  const double thr = std::pow(1.25, power);
  std::int64_t hits = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double ratio = std::max(pred[i] / gt[i], gt[i] / pred[i]);
    if (ratio < thr) ++hits;
    ++n;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

inline double silog_oracle(const std::vector<double>& pred, const std::vector<double>& gt,
                           const std::vector<bool>& mask) {
  long double sum_g = 0.0L, sum_g2 = 0.0L;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const long double g = std::log(static_cast<long double>(pred[i])) -
                          std::log(static_cast<long double>(gt[i]));
    sum_g += g;
    sum_g2 += g * g;
    ++n;
  }
  const long double m = static_cast<long double>(n);
  long double var = sum_g2 / m - (sum_g / m) * (sum_g / m);
  if (var < 0.0L) var = 0.0L;
  return static_cast<double>(100.0L * std::sqrt(var));
}

inline double irmse_oracle(const std::vector<double>& pred, const std::vector<double>& gt,
                           const std::vector<bool>& mask) {
  long double s = 0.0L;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const long double e = 1.0L / pred[i] - 1.0L / gt[i];
    s += e * e;
    ++n;
  }
  return 1000.0 * std::sqrt(static_cast<double>(s / n));
}

}  // namespace crossdepth::testing
