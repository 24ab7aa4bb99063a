#include "crossdepth/augment.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace crossdepth {

namespace {

// Row-block swap on a (C,H,W) tensor: out rows [0, h-cut) take input rows
// [cut, h), out rows [h-cut, h) take input rows [0, cut).
Tensor swap_rows(const Tensor& t, std::int64_t cut) {
  const std::int64_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  Tensor out(t.shape());
  for (std::int64_t c = 0; c < C; ++c) {
    const double* src = t.data() + c * H * W;
    double* dst = out.data() + c * H * W;
    std::memcpy(dst, src + cut * W, static_cast<std::size_t>((H - cut) * W) * sizeof(double));
    std::memcpy(dst + (H - cut) * W, src, static_cast<std::size_t>(cut * W) * sizeof(double));
  }
  return out;
}

Tensor mirror_w(const Tensor& t) {
  const std::int64_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  Tensor out(t.shape());
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H; ++y) {
      const double* src = t.data() + (c * H + y) * W;
      double* dst = out.data() + (c * H + y) * W;
      for (std::int64_t x = 0; x < W; ++x) dst[x] = src[W - 1 - x];
    }
  return out;
}

Tensor crop(const Tensor& t, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  const std::int64_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  Tensor out({C, h, w});
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      std::memcpy(out.data() + (c * h + y) * w, t.data() + (c * H + y0 + y) * W + x0,
                  static_cast<std::size_t>(w) * sizeof(double));
  return out;
}

}  // namespace

void AugmentConfig::validate() const {
  if (cutflip_prob < 0.0 || cutflip_prob > 1.0 || hflip_prob < 0.0 || hflip_prob > 1.0)
    throw std::invalid_argument("AugmentConfig: probabilities must be in [0,1]");
  if (color_jitter_strength < 0.0 || color_jitter_strength > 1.0)
    throw std::invalid_argument("AugmentConfig: jitter strength must be in [0,1]");
  if (crop_h < 0 || crop_w < 0 || (crop_h == 0) != (crop_w == 0))
    throw std::invalid_argument("AugmentConfig: crop_h and crop_w must be set together");
}

CutFlipResult cutflip_with_cut(const RgbImage& image, const DepthMap& gt, std::int64_t cut) {
  const std::int64_t h = image.height();
  if (gt.height() != h || gt.width() != image.width())
    throw std::invalid_argument("cutflip: image and depth extents differ");
  if (cut < 0 || cut > h) throw std::invalid_argument("cutflip: cut out of range");
  return CutFlipResult{RgbImage(swap_rows(image.data(), cut)), DepthMap(swap_rows(gt.data(), cut)),
                       true, cut};
}

CutFlipResult cutflip(const RgbImage& image, const DepthMap& gt, double prob, Rng& rng) {
  const std::int64_t h = image.height();
  if (h < 5) return CutFlipResult{image, gt, false, std::nullopt};
  const double p = rng.uniform();
  if (p < 1.0 - prob) return CutFlipResult{image, gt, false, std::nullopt};
  const auto lo = static_cast<std::int64_t>(0.2 * static_cast<double>(h));
  const auto hi = static_cast<std::int64_t>(0.8 * static_cast<double>(h));
  const std::int64_t cut = rng.uniform_int(lo, hi);
  return cutflip_with_cut(image, gt, cut);
}

std::pair<RgbImage, DepthMap> horizontal_flip(const RgbImage& image, const DepthMap& gt,
                                              double prob, Rng& rng) {
  if (rng.uniform() >= prob) return {image, gt};
  return {RgbImage(mirror_w(image.data())), DepthMap(mirror_w(gt.data()))};
}

RgbImage color_jitter(const RgbImage& image, double strength, Rng& rng) {
  double gains[3];
  for (double& g : gains) g = rng.uniform(1.0 - strength, 1.0 + strength);
  if (strength == 0.0) return image;
  Tensor out = image.data().clone();
  const std::int64_t hw = image.height() * image.width();
  for (std::int64_t c = 0; c < 3; ++c) {
    double* p = out.data() + c * hw;
    for (std::int64_t i = 0; i < hw; ++i) p[i] = std::clamp(p[i] * gains[c], 0.0, 1.0);
  }
  return RgbImage(std::move(out));
}

Sample augment_pipeline(const Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::int64_t H = sample.image.height(), W = sample.image.width();

  RgbImage image = sample.image;
  DepthMap gt = sample.gt_depth;
  if (cfg.crop_h > 0) {
    if (cfg.crop_h > H || cfg.crop_w > W)
      throw std::invalid_argument("augment_pipeline: crop larger than image");
    const std::int64_t y0 = rng.uniform_int(0, H - cfg.crop_h);
    const std::int64_t x0 = rng.uniform_int(0, W - cfg.crop_w);
    image = RgbImage(crop(image.data(), y0, x0, cfg.crop_h, cfg.crop_w));
    gt = DepthMap(crop(gt.data(), y0, x0, cfg.crop_h, cfg.crop_w));
  }

  CutFlipResult cf = cutflip(image, gt, cfg.cutflip_prob, rng);
  auto [flipped_image, flipped_gt] = horizontal_flip(cf.image, cf.gt, cfg.hflip_prob, rng);
  RgbImage jittered = color_jitter(flipped_image, cfg.color_jitter_strength, rng);
  return Sample(std::move(jittered), std::move(flipped_gt), sample.id);
}

}  // namespace crossdepth
