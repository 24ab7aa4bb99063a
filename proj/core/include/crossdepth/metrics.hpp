#pragma once

#include <vector>

#include "crossdepth/types.hpp"

namespace crossdepth {

// The standard monocular-depth evaluation suite. Deltas use strict <, SILog
// is scaled by 100, iRMSE is in 1/km; sq_err_rel / abs_err_rel are sq_rel /
// abs_rel in percent.
struct MetricReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double log10 = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  double silog = 0.0;
  double sq_err_rel = 0.0;
  double abs_err_rel = 0.0;
  double irmse = 0.0;
  std::int64_t pixel_count = 0;
};

// Computes the report over masked pixels only. Throws if the mask is empty
// or pred/gt are non-positive on a masked pixel.
MetricReport evaluate(const DepthMap& pred, const DepthMap& gt, const ValidMask& mask);

enum class Aggregation { kImageAveraged, kPixelWeighted };

// Dataset-level aggregation of per-image reports.
MetricReport aggregate(const std::vector<MetricReport>& reports,
                       Aggregation mode = Aggregation::kImageAveraged);

// Ordered (name, value) view used by report writers.
std::vector<std::pair<std::string, double>> metric_entries(const MetricReport& r);

}  // namespace crossdepth
