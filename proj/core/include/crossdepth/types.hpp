#pragma once

#include <cstdint>
#include <string>

#include "crossdepth/tensor.hpp"

namespace crossdepth {

// Depth interval used for clamping predictions and for validity caps.
// d_min > 0 so logs and sum-normalized residuals are always defined.
struct DepthRange {
  double d_min = 0.5;
  double d_max = 10.0;

  DepthRange() = default;
  DepthRange(double min_m, double max_m);
};

// RGB image, (3, H, W), values in [0, 1].
class RgbImage {
 public:
  explicit RgbImage(Tensor data);
  const Tensor& data() const { return data_; }
  Tensor& data() { return data_; }
  std::int64_t height() const { return data_.dim(1); }
  std::int64_t width() const { return data_.dim(2); }

 private:
  Tensor data_;
};

// Depth map, (1, H, W), meters. Ground truth may contain 0 = "invalid";
// 0 is the only invalid sentinel.
class DepthMap {
 public:
  explicit DepthMap(Tensor data);
  const Tensor& data() const { return data_; }
  Tensor& data() { return data_; }
  std::int64_t height() const { return data_.dim(1); }
  std::int64_t width() const { return data_.dim(2); }

 private:
  Tensor data_;
};

// Per-pixel uncertainty, (1, H, W), values in [0, 1].
class UncertaintyMap {
 public:
  explicit UncertaintyMap(Tensor data);
  const Tensor& data() const { return data_; }
  std::int64_t height() const { return data_.dim(1); }
  std::int64_t width() const { return data_.dim(2); }

 private:
  Tensor data_;
};

// Boolean mask stored as 0/1 doubles so it can be used directly as a
// multiplicative weight in losses.
class ValidMask {
 public:
  explicit ValidMask(Tensor data);
  const Tensor& data() const { return data_; }
  bool at(std::int64_t y, std::int64_t x) const { return data_.at3(0, y, x) != 0.0; }
  std::int64_t count() const;  // number of true pixels
  std::int64_t height() const { return data_.dim(1); }
  std::int64_t width() const { return data_.dim(2); }

 private:
  Tensor data_;
};

struct Sample {
  RgbImage image;
  DepthMap gt_depth;
  std::string id;

  Sample(RgbImage img, DepthMap gt, std::string sample_id);
};

struct BranchOutput {
  DepthMap depth;
  UncertaintyMap uncertainty;

  BranchOutput(DepthMap d, UncertaintyMap u);
};

// Clamps every value into [d_min, d_max]; values already inside are
// unchanged. Throws on non-finite input.
DepthMap clamp_depth(const DepthMap& d, const DepthRange& range);

// True exactly where gt > 0 and d_min <= gt <= d_max (bounds inclusive).
ValidMask valid_mask_of(const DepthMap& gt, const DepthRange& range);

}  // namespace crossdepth
