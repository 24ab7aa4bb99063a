#pragma once

#include <cstdint>
#include <optional>

#include "crossdepth/rng.hpp"
#include "crossdepth/types.hpp"

namespace crossdepth {

struct AugmentConfig {
  double cutflip_prob = 0.5;
  double hflip_prob = 0.5;
  double color_jitter_strength = 0.1;
  std::uint64_t seed = 0;
  // Random-crop target; 0 means "keep full size".
  std::int64_t crop_h = 0;
  std::int64_t crop_w = 0;

  void validate() const;
};

struct CutFlipResult {
  RgbImage image;
  DepthMap gt;
  bool applied = false;
  std::optional<std::int64_t> cut_row;  // the sampled cut when applied
};

// Swaps the rows above and below a given cut: new[0:h-cut] = old[cut:h],
// new[h-cut:h] = old[0:cut], applied identically to image and depth.
CutFlipResult cutflip_with_cut(const RgbImage& image, const DepthMap& gt, std::int64_t cut);

// Stochastic wrapper: skips (applied=false, no draws) when h < 5; otherwise
// draws p ~ U(0,1) and returns inputs unchanged when p < 1 - prob, else cuts
// at a row drawn uniformly from [floor(0.2h), floor(0.8h)] inclusive.
CutFlipResult cutflip(const RgbImage& image, const DepthMap& gt, double prob, Rng& rng);

// Mirrors both tensors along W with probability prob (one decision for both).
std::pair<RgbImage, DepthMap> horizontal_flip(const RgbImage& image, const DepthMap& gt,
                                              double prob, Rng& rng);

// Per-channel multiplicative gain in [1-s, 1+s], re-clamped to [0,1].
// Depth is never touched by photometric ops.
RgbImage color_jitter(const RgbImage& image, double strength, Rng& rng);

// crop -> cutflip -> horizontal flip -> color jitter. Deterministic given
// the rng stream; image and depth always receive identical geometry.
Sample augment_pipeline(const Sample& sample, const AugmentConfig& cfg, Rng& rng);

}  // namespace crossdepth
