#pragma once

#include <array>
#include <memory>
#include <vector>

#include "crossdepth/nn.hpp"
#include "crossdepth/types.hpp"

namespace crossdepth {

struct ModelConfig {
  // Stage channel widths of the windowed-attention branch and the conv branch.
  std::array<std::int64_t, 4> dims_t{24, 48, 96, 192};
  std::array<std::int64_t, 4> dims_c{16, 32, 64, 128};
  std::array<std::int64_t, 4> num_heads{2, 4, 4, 8};
  std::int64_t window_size = 4;
  std::int64_t blocks_per_stage = 2;
  std::int64_t mlp_ratio = 2;
  DepthRange depth_range;
  bool coupling_enabled = true;
  bool uncertainty_head_enabled = true;

  void validate() const;
};

// Per-stage encoder features, spatial sizes halving stage to stage
// (stride-4 stem, so stage i sits at 1/2^(i+2) of the input).
struct FeaturePyramid {
  std::vector<Var> stages;

  void validate() const;  // exactly 4 stages, strictly halving extents
};

// Graph-side branch output while the tape is alive.
struct BranchVars {
  Var depth;        // (N,1,H,W), values in [d_min, d_max]
  Var uncertainty;  // (N,1,H,W), values in [0,1]
};

struct DualVars {
  BranchVars transformer;
  BranchVars cnn;
};

// One windowed multi-head self-attention block (pre-norm, MLP tail).
// Alternating blocks cyclically shift the window grid by half a window;
// wrapped tokens attend across the seam, which is acceptable at this scale.
class AttentionBlock : public Module {
 public:
  AttentionBlock(std::int64_t dim, std::int64_t heads, std::int64_t window, bool shifted,
                 std::int64_t mlp_ratio, Rng& rng);
  Var forward(const Var& x) const;  // NCHW in, NCHW out

 private:
  Var attend(const Var& tokens, std::int64_t batch_windows) const;

  std::int64_t dim_, heads_, window_;
  bool shifted_;
  LayerNorm ln1_, ln2_;
  Linear q_, k_, v_, proj_;
  Linear mlp_in_, mlp_out_;
};

// Hierarchical windowed-attention encoder + conv decoder + joint
// depth/uncertainty head. Standalone at inference time.
class TransformerBranch : public Module {
 public:
  TransformerBranch(const ModelConfig& cfg, Rng& rng);
  ~TransformerBranch() override;
  BranchVars forward(const Var& image, FeaturePyramid* pyramid_out, bool training);

 private:
  const ModelConfig cfg_;
  Conv2d patch_embed_;
  std::vector<std::unique_ptr<AttentionBlock>> blocks_;  // 4 stages x blocks_per_stage
  std::vector<std::unique_ptr<Conv2d>> merges_;          // 3 downsamples between stages
  std::unique_ptr<class ConvDecoder> decoder_;
};

// Channel-aligns a transferred feature, adds, fuses with a 3x3 conv and
// re-injects through a zero-initialized residual 1x1. The transferred
// feature must already be detached by the caller; it is resized here if the
// extents differ.
class CouplingUnit : public Module {
 public:
  CouplingUnit(std::int64_t cnn_channels, std::int64_t transfer_channels, Rng& rng);
  Var forward(const Var& f_cnn, const Var& f_transfer, bool training);

 private:
  Conv2d align_;
  BatchNorm2d align_bn_;
  Conv2d fuse_;
  BatchNorm2d fuse_bn_;
  Conv2d adjust_;  // zero-initialized: identity residual at init
};

// Plain conv encoder-decoder. When a transferred pyramid and coupling units
// are supplied, each encoder stage output is fused before feeding the next
// stage (transfer exists only in the encoder).
class CnnBranch : public Module {
 public:
  CnnBranch(const ModelConfig& cfg, Rng& rng);
  ~CnnBranch() override;
  BranchVars forward(const Var& image, const FeaturePyramid* transferred,
                     std::vector<std::unique_ptr<CouplingUnit>>* couplers, bool training);

 private:
  const ModelConfig cfg_;
  ConvBnRelu stem1_, stem2_;
  std::vector<std::unique_ptr<ConvBnRelu>> stage_convs_;  // 2 per stage
  std::unique_ptr<class ConvDecoder> decoder_;
};

// The trainable pair. Parameter names are prefixed t. / c. / couple. so
// checkpoints can mark every tensor with its branch.
class DualModel : public Module {
 public:
  DualModel(ModelConfig cfg, Rng& rng);
  ~DualModel() override;

  // Full two-branch forward (training or eval). Transformer runs first and
  // its encoder features are detached before entering the coupling units.
  DualVars forward(const Var& image, bool training);

  // Transformer-only path used at inference; never touches CNN or coupling
  // parameters. Identical op sequence to the transformer part of forward().
  BranchVars forward_transformer(const Var& image, bool training);

  const ModelConfig& config() const { return cfg_; }
  TransformerBranch& transformer() { return *t_; }
  std::int64_t transformer_parameter_count() const;

 private:
  ModelConfig cfg_;
  std::unique_ptr<TransformerBranch> t_;
  std::unique_ptr<CnnBranch> c_;
  class CouplingSet;
  std::unique_ptr<CouplingSet> couple_;
};

// Eval-mode convenience on plain types: runs the transformer branch under
// NoGrad and returns checked value-type outputs for a single image.
BranchOutput run_inference(DualModel& model, const RgbImage& image);

}  // namespace crossdepth
