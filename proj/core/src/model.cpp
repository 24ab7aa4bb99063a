#include "crossdepth/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace crossdepth {

void ModelConfig::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (dims_t[static_cast<std::size_t>(i)] <= 0 || dims_c[static_cast<std::size_t>(i)] <= 0)
      throw std::invalid_argument("ModelConfig: channel widths must be positive");
    if (num_heads[static_cast<std::size_t>(i)] <= 0 ||
        dims_t[static_cast<std::size_t>(i)] % num_heads[static_cast<std::size_t>(i)] != 0)
      throw std::invalid_argument("ModelConfig: heads must divide the stage width");
  }
  if (window_size < 2) throw std::invalid_argument("ModelConfig: window_size must be >= 2");
  if (blocks_per_stage < 1 || mlp_ratio < 1)
    throw std::invalid_argument("ModelConfig: blocks_per_stage and mlp_ratio must be >= 1");
}

void FeaturePyramid::validate() const {
  if (stages.size() != 4) throw std::invalid_argument("FeaturePyramid: expected 4 stages");
  for (std::size_t i = 1; i < stages.size(); ++i) {
    const auto& prev = stages[i - 1].value();
    const auto& cur = stages[i].value();
    if (cur.dim(2) * 2 != prev.dim(2) || cur.dim(3) * 2 != prev.dim(3))
      throw std::invalid_argument("FeaturePyramid: stage extents must halve");
  }
}

// ---------------------------------------------------------------------------
// AttentionBlock

AttentionBlock::AttentionBlock(std::int64_t dim, std::int64_t heads, std::int64_t window,
                               bool shifted, std::int64_t mlp_ratio, Rng& rng)
    : dim_(dim), heads_(heads), window_(window), shifted_(shifted),
      ln1_(dim), ln2_(dim),
      q_(dim, dim, rng), k_(dim, dim, rng), v_(dim, dim, rng), proj_(dim, dim, rng),
      mlp_in_(dim, dim * mlp_ratio, rng), mlp_out_(dim * mlp_ratio, dim, rng) {
  register_module("ln1", ln1_);
  register_module("ln2", ln2_);
  register_module("q", q_);
  register_module("k", k_);
  register_module("v", v_);
  register_module("proj", proj_);
  register_module("mlp_in", mlp_in_);
  register_module("mlp_out", mlp_out_);
}

Var AttentionBlock::attend(const Var& tokens, std::int64_t batch_windows) const {
  const std::int64_t T = tokens.shape()[1];
  const std::int64_t dh = dim_ / heads_;
  Var flat = reshape(tokens, {batch_windows * T, dim_});
  Var x1 = ln1_.forward(flat);

  auto split_heads = [&](const Var& t) {
    Var h = reshape(t, {batch_windows, T, heads_, dh});
    h = permute(h, {0, 2, 1, 3});
    return reshape(h, {batch_windows * heads_, T, dh});
  };
  Var q = split_heads(q_.forward(x1));
  Var k = split_heads(k_.forward(x1));
  Var v = split_heads(v_.forward(x1));

  Var scores = mul_scalar(bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var attn = softmax_lastdim(scores);
  Var ctx = bmm(attn, v);  // (B*h, T, dh)
  ctx = reshape(ctx, {batch_windows, heads_, T, dh});
  ctx = permute(ctx, {0, 2, 1, 3});
  ctx = reshape(ctx, {batch_windows * T, dim_});
  Var t1 = add(flat, proj_.forward(ctx));

  Var m = mlp_out_.forward(gelu(mlp_in_.forward(ln2_.forward(t1))));
  return reshape(add(t1, m), {batch_windows, T, dim_});
}

Var AttentionBlock::forward(const Var& x) const {
  const std::int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::int64_t w = window_;
  const std::int64_t ph = (w - H % w) % w;
  const std::int64_t pw = (w - W % w) % w;
  Var h = pad_hw(x, 0, ph, 0, pw);
  const std::int64_t Hp = H + ph, Wp = W + pw;
  const bool do_shift = shifted_ && (Hp > w || Wp > w);
  if (do_shift) h = roll_hw(h, -(w / 2), -(w / 2));

  const std::int64_t ny = Hp / w, nx = Wp / w;
  h = reshape(h, {N, C, ny, w, nx, w});
  h = permute(h, {0, 2, 4, 3, 5, 1});  // (N, ny, nx, w, w, C)
  const std::int64_t bw = N * ny * nx;
  Var tokens = reshape(h, {bw, w * w, C});

  tokens = attend(tokens, bw);

  h = reshape(tokens, {N, ny, nx, w, w, C});
  h = permute(h, {0, 5, 1, 3, 2, 4});  // (N, C, ny, w, nx, w)
  h = reshape(h, {N, C, Hp, Wp});
  if (do_shift) h = roll_hw(h, w / 2, w / 2);
  return crop_hw(h, 0, ph, 0, pw);
}

// ---------------------------------------------------------------------------
// ConvDecoder: top-down refinement with skip fusion, then a half-resolution
// head emitting out_ch channels.

class ConvDecoder : public Module {
 public:
  ConvDecoder(const std::array<std::int64_t, 4>& dims, std::int64_t half_ch, std::int64_t out_ch,
              Rng& rng)
      : fuse2_(dims[3] + dims[2], dims[2], 1, 1, 0, rng),
        refine2_(dims[2], dims[2], 3, 1, 1, rng),
        fuse1_(dims[2] + dims[1], dims[1], 1, 1, 0, rng),
        refine1_(dims[1], dims[1], 3, 1, 1, rng),
        fuse0_(dims[1] + dims[0], dims[0], 1, 1, 0, rng),
        refine0_(dims[0], dims[0], 3, 1, 1, rng),
        half_(dims[0], half_ch, 3, 1, 1, rng),
        head_(half_ch, out_ch, 3, 1, 1, rng) {
    register_module("fuse2", fuse2_);
    register_module("refine2", refine2_);
    register_module("fuse1", fuse1_);
    register_module("refine1", refine1_);
    register_module("fuse0", fuse0_);
    register_module("refine0", refine0_);
    register_module("half", half_);
    register_module("head", head_);
  }

  // Returns head output at half input resolution.
  Var forward(const std::vector<Var>& stages, bool training) {
    Var f = stages[3];
    f = up_to(f, stages[2]);
    f = refine2_.forward(fuse2_.forward(concat_channels(f, stages[2]), training), training);
    f = up_to(f, stages[1]);
    f = refine1_.forward(fuse1_.forward(concat_channels(f, stages[1]), training), training);
    f = up_to(f, stages[0]);
    f = refine0_.forward(fuse0_.forward(concat_channels(f, stages[0]), training), training);
    f = upsample_bilinear(f, f.shape()[2] * 2, f.shape()[3] * 2);
    f = half_.forward(f, training);
    return head_.forward(f);
  }

 private:
  static Var up_to(const Var& f, const Var& like) {
    return upsample_bilinear(f, like.shape()[2], like.shape()[3]);
  }

  ConvBnRelu fuse2_, refine2_, fuse1_, refine1_, fuse0_, refine0_;
  ConvBnRelu half_;
  Conv2d head_;
};

namespace {

// Splits raw head channels into bounded depth / uncertainty maps at half
// resolution and upsamples to the padded input extent.
BranchVars squash_head(const Var& head_out, const ModelConfig& cfg, std::int64_t out_h,
                       std::int64_t out_w) {
  BranchVars out;
  Var depth_half = affine(sigmoid(slice_channels(head_out, 0, 1)),
                          cfg.depth_range.d_max - cfg.depth_range.d_min, cfg.depth_range.d_min);
  out.depth = upsample_bilinear(depth_half, out_h, out_w);
  if (cfg.uncertainty_head_enabled) {
    Var unc_half = sigmoid(slice_channels(head_out, 1, 2));
    out.uncertainty = upsample_bilinear(unc_half, out_h, out_w);
  } else {
    out.uncertainty =
        Var(Tensor::full({head_out.shape()[0], 1, out_h, out_w}, 0.5), /*requires_grad=*/false);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// TransformerBranch

TransformerBranch::TransformerBranch(const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg), patch_embed_(3, cfg.dims_t[0], 4, 4, 0, rng) {
  register_module("embed", patch_embed_);
  for (int stage = 0; stage < 4; ++stage) {
    for (std::int64_t b = 0; b < cfg.blocks_per_stage; ++b) {
      blocks_.push_back(std::make_unique<AttentionBlock>(
          cfg.dims_t[static_cast<std::size_t>(stage)],
          cfg.num_heads[static_cast<std::size_t>(stage)], cfg.window_size,
          /*shifted=*/b % 2 == 1, cfg.mlp_ratio, rng));
      register_module("s" + std::to_string(stage) + ".b" + std::to_string(b), *blocks_.back());
    }
    if (stage < 3) {
      merges_.push_back(std::make_unique<Conv2d>(cfg.dims_t[static_cast<std::size_t>(stage)],
                                                 cfg.dims_t[static_cast<std::size_t>(stage) + 1],
                                                 2, 2, 0, rng));
      register_module("merge" + std::to_string(stage), *merges_.back());
    }
  }
  decoder_ = std::make_unique<ConvDecoder>(cfg.dims_t, std::max<std::int64_t>(cfg.dims_t[0] / 2, 8),
                                           cfg.uncertainty_head_enabled ? 2 : 1, rng);
  register_module("decoder", *decoder_);
}

TransformerBranch::~TransformerBranch() = default;

BranchVars TransformerBranch::forward(const Var& image, FeaturePyramid* pyramid_out,
                                      bool training) {
  const std::int64_t H = image.shape()[2], W = image.shape()[3];
  Var f = patch_embed_.forward(affine(image, 2.0, -1.0));
  std::vector<Var> stages;
  std::size_t block_idx = 0;
  for (int stage = 0; stage < 4; ++stage) {
    if (stage > 0) f = merges_[static_cast<std::size_t>(stage - 1)]->forward(f);
    for (std::int64_t b = 0; b < cfg_.blocks_per_stage; ++b)
      f = blocks_[block_idx++]->forward(f);
    stages.push_back(f);
  }
  Var head = decoder_->forward(stages, training);
  if (pyramid_out != nullptr) {
    pyramid_out->stages = stages;
    pyramid_out->validate();
  }
  return squash_head(head, cfg_, H, W);
}

// ---------------------------------------------------------------------------
// CouplingUnit

CouplingUnit::CouplingUnit(std::int64_t cnn_channels, std::int64_t transfer_channels, Rng& rng)
    : align_(transfer_channels, cnn_channels, 1, 1, 0, rng),
      align_bn_(cnn_channels),
      fuse_(cnn_channels, cnn_channels, 3, 1, 1, rng),
      fuse_bn_(cnn_channels),
      adjust_(cnn_channels, cnn_channels, 1, 1, 0, rng, /*zero_init=*/true) {
  register_module("align", align_);
  register_module("align_bn", align_bn_);
  register_module("fuse", fuse_);
  register_module("fuse_bn", fuse_bn_);
  register_module("adjust", adjust_);
}

Var CouplingUnit::forward(const Var& f_cnn, const Var& f_transfer, bool training) {
  Var t = f_transfer;
  if (t.shape()[2] != f_cnn.shape()[2] || t.shape()[3] != f_cnn.shape()[3])
    t = upsample_bilinear(t, f_cnn.shape()[2], f_cnn.shape()[3]);
  Var aligned = relu(align_bn_.forward(align_.forward(t), training));
  Var fused = relu(fuse_bn_.forward(fuse_.forward(add(f_cnn, aligned)), training));
  return add(f_cnn, adjust_.forward(fused));
}

// ---------------------------------------------------------------------------
// CnnBranch

CnnBranch::CnnBranch(const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      stem1_(3, cfg.dims_c[0], 3, 2, 1, rng),
      stem2_(cfg.dims_c[0], cfg.dims_c[0], 3, 2, 1, rng) {
  register_module("stem1", stem1_);
  register_module("stem2", stem2_);
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t cin = stage == 0 ? cfg.dims_c[0] : cfg.dims_c[static_cast<std::size_t>(stage - 1)];
    const std::int64_t cout = cfg.dims_c[static_cast<std::size_t>(stage)];
    stage_convs_.push_back(
        std::make_unique<ConvBnRelu>(cin, cout, 3, stage == 0 ? 1 : 2, 1, rng));
    stage_convs_.push_back(std::make_unique<ConvBnRelu>(cout, cout, 3, 1, 1, rng));
    register_module("s" + std::to_string(stage) + ".conv0", *stage_convs_[stage_convs_.size() - 2]);
    register_module("s" + std::to_string(stage) + ".conv1", *stage_convs_[stage_convs_.size() - 1]);
  }
  decoder_ = std::make_unique<ConvDecoder>(cfg.dims_c, std::max<std::int64_t>(cfg.dims_c[0] / 2, 8),
                                           cfg.uncertainty_head_enabled ? 2 : 1, rng);
  register_module("decoder", *decoder_);
}

CnnBranch::~CnnBranch() = default;

BranchVars CnnBranch::forward(const Var& image, const FeaturePyramid* transferred,
                              std::vector<std::unique_ptr<CouplingUnit>>* couplers,
                              bool training) {
  if (transferred != nullptr && (couplers == nullptr || couplers->size() != 4))
    throw std::invalid_argument("CnnBranch: transfer requires 4 coupling units");
  if (transferred != nullptr && transferred->stages.size() != 4)
    throw std::invalid_argument("CnnBranch: transferred pyramid must have 4 stages");
  const std::int64_t H = image.shape()[2], W = image.shape()[3];
  Var f = stem2_.forward(stem1_.forward(affine(image, 2.0, -1.0), training), training);
  std::vector<Var> stages;
  for (int stage = 0; stage < 4; ++stage) {
    f = stage_convs_[static_cast<std::size_t>(2 * stage)]->forward(f, training);
    f = stage_convs_[static_cast<std::size_t>(2 * stage + 1)]->forward(f, training);
    if (transferred != nullptr)
      f = (*couplers)[static_cast<std::size_t>(stage)]->forward(
          f, transferred->stages[static_cast<std::size_t>(stage)], training);
    stages.push_back(f);
  }
  Var head = decoder_->forward(stages, training);
  return squash_head(head, cfg_, H, W);
}

// ---------------------------------------------------------------------------
// DualModel

class DualModel::CouplingSet : public Module {
 public:
  CouplingSet(const ModelConfig& cfg, Rng& rng) {
    for (int i = 0; i < 4; ++i) {
      units.push_back(std::make_unique<CouplingUnit>(cfg.dims_c[static_cast<std::size_t>(i)],
                                                     cfg.dims_t[static_cast<std::size_t>(i)], rng));
      register_module("s" + std::to_string(i), *units.back());
    }
  }
  std::vector<std::unique_ptr<CouplingUnit>> units;
};

DualModel::DualModel(ModelConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  // Transformer first: its init draws must not depend on the other branch.
  t_ = std::make_unique<TransformerBranch>(cfg_, rng);
  c_ = std::make_unique<CnnBranch>(cfg_, rng);
  couple_ = std::make_unique<CouplingSet>(cfg_, rng);
  register_module("t", *t_);
  register_module("c", *c_);
  register_module("couple", *couple_);
}

DualModel::~DualModel() = default;

namespace {

struct Padded {
  Var image;
  std::int64_t pad_h = 0;
  std::int64_t pad_w = 0;
};

Padded pad_to_32(const Var& image) {
  if (image.shape().size() != 4 || image.shape()[1] != 3)
    throw std::invalid_argument("model forward: expected (N,3,H,W) input");
  const std::int64_t H = image.shape()[2], W = image.shape()[3];
  Padded p;
  p.pad_h = (32 - H % 32) % 32;
  p.pad_w = (32 - W % 32) % 32;
  p.image = pad_hw(image, 0, p.pad_h, 0, p.pad_w);
  return p;
}

BranchVars crop_outputs(BranchVars out, std::int64_t pad_h, std::int64_t pad_w) {
  out.depth = crop_hw(out.depth, 0, pad_h, 0, pad_w);
  out.uncertainty = crop_hw(out.uncertainty, 0, pad_h, 0, pad_w);
  return out;
}

}  // namespace

DualVars DualModel::forward(const Var& image, bool training) {
  Padded p = pad_to_32(image);
  FeaturePyramid pyramid;
  BranchVars t_out = crop_outputs(t_->forward(p.image, &pyramid, training), p.pad_h, p.pad_w);

  const FeaturePyramid* transfer_ptr = nullptr;
  FeaturePyramid transfer;
  if (cfg_.coupling_enabled) {
    // Pseudo-label features: the CNN-side loss must not reach the
    // transformer encoder, so the transfer is gradient-stopped here.
    for (const Var& s : pyramid.stages) transfer.stages.push_back(s.detach());
    transfer_ptr = &transfer;
  }
  BranchVars c_out = crop_outputs(
      c_->forward(p.image, transfer_ptr, transfer_ptr ? &couple_->units : nullptr, training),
      p.pad_h, p.pad_w);
  return DualVars{t_out, c_out};
}

BranchVars DualModel::forward_transformer(const Var& image, bool training) {
  Padded p = pad_to_32(image);
  FeaturePyramid pyramid;
  return crop_outputs(t_->forward(p.image, &pyramid, training), p.pad_h, p.pad_w);
}

std::int64_t DualModel::transformer_parameter_count() const { return t_->parameter_count(); }

BranchOutput run_inference(DualModel& model, const RgbImage& image) {
  NoGradGuard no_grad;
  const std::int64_t H = image.height(), W = image.width();
  Var input(image.data().reshaped({1, 3, H, W}), /*requires_grad=*/false);
  BranchVars out = model.forward_transformer(input, /*training=*/false);
  return BranchOutput(DepthMap(out.depth.value().reshaped({1, H, W}).clone()),
                      UncertaintyMap(out.uncertainty.value().reshaped({1, H, W}).clone()));
}

}  // namespace crossdepth
