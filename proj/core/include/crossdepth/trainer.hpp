#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crossdepth/augment.hpp"
#include "crossdepth/checkpoint.hpp"
#include "crossdepth/data.hpp"
#include "crossdepth/losses.hpp"
#include "crossdepth/metrics.hpp"
#include "crossdepth/model.hpp"

namespace crossdepth {

// Component switches mirroring the ablation grid: cross-distillation,
// uncertainty rectification, coupling units, CutFlip.
struct AblationFlags {
  bool cross_distill = true;
  bool uncertainty_rectify = true;
  bool coupling = true;
  bool cutflip = true;
};

struct TrainConfig {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 4;
  double lr_start = 1e-4;
  double lr_end = 1e-5;
  double poly_power = 0.9;
  LossWeights weights;
  AblationFlags ablation;
  std::uint64_t seed = 0;
  DepthRange depth_range;
  AugmentConfig augment;
  ModelConfig model;
  bool urcd_on_valid_only = false;
  double grad_clip_norm = 10.0;
  std::int64_t eval_every_epochs = 0;  // 0 = auto (~20 evals per run)
  // Trains only the attention branch with its supervised loss; used to
  // verify that with cross-distillation off the branch is untouched by the
  // other one.
  bool transformer_only = false;

  // Fills derived fields (model depth range, coupling flag) and validates.
  // Rejects uncertainty_rectify without cross_distill.
  void resolve();
};

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

class Adam {
 public:
  Adam(std::vector<NamedParam> params, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  // Applies one update with the given learning rate; grads must already be
  // accumulated (and are not cleared here).
  void step(double lr);
  OptimSnapshot snapshot() const;
  void restore(const OptimSnapshot& snap);
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::map<std::string, Tensor> m_, v_;
  std::int64_t t_ = 0;
  double beta1_, beta2_, eps_;
};

struct FitResult {
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log_path;
  double best_val_abs_rel = -1.0;
  std::int64_t steps_run = 0;
};

// Owns the model, optimizer and step counter; one optimizer step at a time.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  // One optimization step on an already-augmented batch.
  LossBundle train_step(const std::vector<Sample>& batch);

  // Full training run over manifest splits; writes train_log.jsonl plus
  // last.ckpt / best.ckpt into out_dir. Appends to an existing log when
  // resuming so the result matches an uninterrupted run.
  FitResult fit(const std::filesystem::path& data_root, const DatasetManifest& manifest,
                const std::filesystem::path& out_dir,
                const std::optional<std::filesystem::path>& resume_from = std::nullopt);

  // Transformer-only eval-mode metrics over a sample list (image-averaged).
  MetricReport evaluate_samples(const std::vector<Sample>& samples);

  DualModel& model() { return *model_; }
  std::int64_t step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

  // Batch schedule: deterministic shuffle of [0,n) for a given epoch.
  static std::vector<std::int64_t> epoch_order(std::uint64_t seed, std::int64_t epoch,
                                               std::int64_t n);

 private:
  Sample augmented(const Sample& sample, std::int64_t step, std::int64_t slot) const;
  void clip_gradients() const;
  void save_state(const std::filesystem::path& path, std::int64_t total_steps);

  TrainConfig cfg_;
  std::unique_ptr<DualModel> model_;
  std::unique_ptr<Adam> adam_;
  std::int64_t step_ = 0;
  std::int64_t epoch_ = 0;
  double best_val_abs_rel_ = -1.0;
};

}  // namespace crossdepth
