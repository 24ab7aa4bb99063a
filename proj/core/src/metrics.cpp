#include "crossdepth/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace crossdepth {

MetricReport evaluate(const DepthMap& pred, const DepthMap& gt, const ValidMask& mask) {
  if (!pred.data().same_shape(gt.data()) || !pred.data().same_shape(mask.data()))
    throw std::invalid_argument("evaluate: shape mismatch");
  const std::int64_t n = pred.data().numel();

  double sum_abs_rel = 0.0, sum_sq_rel = 0.0, sum_sq = 0.0, sum_sq_log = 0.0;
  double sum_log10 = 0.0, sum_g = 0.0, sum_g2 = 0.0, sum_inv_sq = 0.0;
  std::int64_t d1 = 0, d2 = 0, d3 = 0, count = 0;
  constexpr double kThr1 = 1.25, kThr2 = 1.25 * 1.25, kThr3 = 1.25 * 1.25 * 1.25;

  for (std::int64_t i = 0; i < n; ++i) {
    if (mask.data()[i] == 0.0) continue;
    const double d = pred.data()[i];
    const double t = gt.data()[i];
    if (!(d > 0.0) || !(t > 0.0))
      throw std::invalid_argument("evaluate: non-positive depth on valid pixel");
    ++count;
    const double err = d - t;
    sum_abs_rel += std::fabs(err) / t;
    sum_sq_rel += err * err / t;
    sum_sq += err * err;
    const double g = std::log(d) - std::log(t);
    sum_sq_log += g * g;
    sum_g += g;
    sum_g2 += g * g;
    sum_log10 += std::fabs(std::log10(d) - std::log10(t));
    const double ratio = d > t ? d / t : t / d;
    if (ratio < kThr1) ++d1;
    if (ratio < kThr2) ++d2;
    if (ratio < kThr3) ++d3;
    const double inv_err = 1.0 / d - 1.0 / t;
    sum_inv_sq += inv_err * inv_err;
  }
  if (count == 0) throw std::invalid_argument("evaluate: empty mask");

  const double m = static_cast<double>(count);
  MetricReport r;
  r.abs_rel = sum_abs_rel / m;
  r.sq_rel = sum_sq_rel / m;
  r.rmse = std::sqrt(sum_sq / m);
  r.rmse_log = std::sqrt(sum_sq_log / m);
  r.log10 = sum_log10 / m;
  r.delta1 = static_cast<double>(d1) / m;
  r.delta2 = static_cast<double>(d2) / m;
  r.delta3 = static_cast<double>(d3) / m;
  const double var_g = sum_g2 / m - (sum_g / m) * (sum_g / m);
  r.silog = 100.0 * std::sqrt(var_g > 0.0 ? var_g : 0.0);
  r.sq_err_rel = 100.0 * r.sq_rel;
  r.abs_err_rel = 100.0 * r.abs_rel;
  r.irmse = 1000.0 * std::sqrt(sum_inv_sq / m);  // 1/m -> 1/km
  r.pixel_count = count;
  return r;
}

MetricReport aggregate(const std::vector<MetricReport>& reports, Aggregation mode) {
  if (reports.empty()) throw std::invalid_argument("aggregate: empty report list");
  MetricReport out;
  double weight_sum = 0.0;
  for (const auto& r : reports) {
    const double w = mode == Aggregation::kPixelWeighted ? static_cast<double>(r.pixel_count) : 1.0;
    weight_sum += w;
    out.abs_rel += w * r.abs_rel;
    out.sq_rel += w * r.sq_rel;
    out.rmse += w * r.rmse;
    out.rmse_log += w * r.rmse_log;
    out.log10 += w * r.log10;
    out.delta1 += w * r.delta1;
    out.delta2 += w * r.delta2;
    out.delta3 += w * r.delta3;
    out.silog += w * r.silog;
    out.sq_err_rel += w * r.sq_err_rel;
    out.abs_err_rel += w * r.abs_err_rel;
    out.irmse += w * r.irmse;
    out.pixel_count += r.pixel_count;
  }
  const double inv = 1.0 / weight_sum;
  out.abs_rel *= inv;
  out.sq_rel *= inv;
  out.rmse *= inv;
  out.rmse_log *= inv;
  out.log10 *= inv;
  out.delta1 *= inv;
  out.delta2 *= inv;
  out.delta3 *= inv;
  out.silog *= inv;
  out.sq_err_rel *= inv;
  out.abs_err_rel *= inv;
  out.irmse *= inv;
  return out;
}

std::vector<std::pair<std::string, double>> metric_entries(const MetricReport& r) {
  return {
      {"abs_rel", r.abs_rel},   {"sq_rel", r.sq_rel},
      {"rmse", r.rmse},         {"rmse_log", r.rmse_log},
      {"log10", r.log10},       {"delta1", r.delta1},
      {"delta2", r.delta2},     {"delta3", r.delta3},
      {"silog", r.silog},       {"sq_err_rel", r.sq_err_rel},
      {"abs_err_rel", r.abs_err_rel}, {"irmse", r.irmse},
  };
}

}  // namespace crossdepth
