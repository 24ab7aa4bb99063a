#include "crossdepth/types.hpp"

#include <cmath>
#include <stdexcept>

namespace crossdepth {

namespace {

void check_chw(const Tensor& t, std::int64_t channels, const char* what) {
  if (t.rank() != 3 || t.dim(0) != channels)
    throw std::invalid_argument(std::string(what) + ": expected (" + std::to_string(channels) +
                                ",H,W), got " + t.shape_str());
}

}  // namespace

DepthRange::DepthRange(double min_m, double max_m) : d_min(min_m), d_max(max_m) {
  if (!(d_min > 0.0)) throw std::invalid_argument("DepthRange: d_min must be > 0");
  if (!(d_max > d_min)) throw std::invalid_argument("DepthRange: d_max must exceed d_min");
}

RgbImage::RgbImage(Tensor data) : data_(std::move(data)) {
  check_chw(data_, 3, "RgbImage");
  if (height() < 8 || width() < 8)
    throw std::invalid_argument("RgbImage: minimum size is 8x8, got " + data_.shape_str());
  for (std::int64_t i = 0; i < data_.numel(); ++i) {
    const double v = data_[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw std::invalid_argument("RgbImage: values must be finite and in [0,1]");
  }
}

DepthMap::DepthMap(Tensor data) : data_(std::move(data)) {
  check_chw(data_, 1, "DepthMap");
  if (!data_.all_finite()) throw std::invalid_argument("DepthMap: non-finite depth");
}

UncertaintyMap::UncertaintyMap(Tensor data) : data_(std::move(data)) {
  check_chw(data_, 1, "UncertaintyMap");
  for (std::int64_t i = 0; i < data_.numel(); ++i) {
    const double v = data_[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw std::invalid_argument("UncertaintyMap: values must be in [0,1]");
  }
}

ValidMask::ValidMask(Tensor data) : data_(std::move(data)) {
  check_chw(data_, 1, "ValidMask");
  for (std::int64_t i = 0; i < data_.numel(); ++i) {
    const double v = data_[i];
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("ValidMask: entries must be 0 or 1");
  }
}

std::int64_t ValidMask::count() const {
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < data_.numel(); ++i)
    if (data_[i] != 0.0) ++n;
  return n;
}

Sample::Sample(RgbImage img, DepthMap gt, std::string sample_id)
    : image(std::move(img)), gt_depth(std::move(gt)), id(std::move(sample_id)) {
  if (image.height() != gt_depth.height() || image.width() != gt_depth.width())
    throw std::invalid_argument("Sample: image and depth extents differ");
}

BranchOutput::BranchOutput(DepthMap d, UncertaintyMap u)
    : depth(std::move(d)), uncertainty(std::move(u)) {
  if (depth.height() != uncertainty.height() || depth.width() != uncertainty.width())
    throw std::invalid_argument("BranchOutput: depth and uncertainty extents differ");
}

DepthMap clamp_depth(const DepthMap& d, const DepthRange& range) {
  if (!d.data().all_finite()) throw std::invalid_argument("non-finite depth");
  Tensor out = d.data().clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    if (out[i] < range.d_min) out[i] = range.d_min;
    else if (out[i] > range.d_max) out[i] = range.d_max;
  }
  return DepthMap(std::move(out));
}

ValidMask valid_mask_of(const DepthMap& gt, const DepthRange& range) {
  Tensor out(gt.data().shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double v = gt.data()[i];
    out[i] = (v > 0.0 && v >= range.d_min && v <= range.d_max) ? 1.0 : 0.0;
  }
  return ValidMask(std::move(out));
}

}  // namespace crossdepth
