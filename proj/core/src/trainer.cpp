#include "crossdepth/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace crossdepth {

namespace {
using nlohmann::json;
}

void TrainConfig::resolve() {
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("TrainConfig: epochs and batch_size must be >= 1");
  if (!(lr_start >= lr_end) || !(lr_end > 0.0))
    throw std::invalid_argument("TrainConfig: requires lr_start >= lr_end > 0");
  if (poly_power <= 0.0) throw std::invalid_argument("TrainConfig: poly_power must be > 0");
  if (grad_clip_norm < 0.0) throw std::invalid_argument("TrainConfig: negative grad_clip_norm");
  if (ablation.uncertainty_rectify && !ablation.cross_distill)
    throw std::invalid_argument(
        "TrainConfig: uncertainty_rectify requires cross_distill (UP depends on CD)");
  weights.validate();
  augment.validate();
  model.depth_range = depth_range;
  model.coupling_enabled = ablation.coupling;
  model.validate();
}

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  if (step < 0 || step > total_steps) throw std::invalid_argument("lr_at: step out of range");
  if (total_steps == 0) return cfg.lr_start;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * std::pow(frac, cfg.poly_power);
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<NamedParam> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_[p.name] = Tensor::zeros(p.var.value().shape());
    v_[p.name] = Tensor::zeros(p.var.value().shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& p : params_) {
    Var var = p.var;
    if (!var.grad().defined()) continue;
    Tensor& m = m_[p.name];
    Tensor& v = v_[p.name];
    const double* g = var.grad().data();
    double* mp = m.data();
    double* vp = v.data();
    double* w = var.mutable_value().data();
    const std::int64_t n = var.value().numel();
    for (std::int64_t i = 0; i < n; ++i) {
      mp[i] = beta1_ * mp[i] + (1.0 - beta1_) * g[i];
      vp[i] = beta2_ * vp[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = mp[i] / bc1;
      const double vhat = vp[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

OptimSnapshot Adam::snapshot() const {
  OptimSnapshot snap;
  for (const auto& [name, t] : m_) snap.m[name] = t.clone();
  for (const auto& [name, t] : v_) snap.v[name] = t.clone();
  snap.t = t_;
  return snap;
}

void Adam::restore(const OptimSnapshot& snap) {
  t_ = snap.t;
  for (auto& [name, t] : m_) {
    auto it = snap.m.find(name);
    if (it == snap.m.end()) throw std::runtime_error("optimizer state missing moment for " + name);
    t = it->second.clone();
  }
  for (auto& [name, t] : v_) {
    auto it = snap.v.find(name);
    if (it == snap.v.end()) throw std::runtime_error("optimizer state missing moment for " + name);
    t = it->second.clone();
  }
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.resolve();
  Rng init_rng(Rng::mix(cfg_.seed, 0x1417ull));
  model_ = std::make_unique<DualModel>(cfg_.model, init_rng);
  std::vector<NamedParam> trainable;
  for (auto& p : model_->named_parameters()) {
    if (cfg_.transformer_only && p.name.rfind("t.", 0) != 0) continue;
    trainable.push_back(p);
  }
  adam_ = std::make_unique<Adam>(std::move(trainable));
}

std::vector<std::int64_t> Trainer::epoch_order(std::uint64_t seed, std::int64_t epoch,
                                               std::int64_t n) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(Rng::mix(seed, 0x0d7e5ull, static_cast<std::uint64_t>(epoch)));
  for (std::int64_t i = n - 1; i > 0; --i) {
    const std::int64_t j = rng.uniform_int(0, i);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

Sample Trainer::augmented(const Sample& sample, std::int64_t step, std::int64_t slot) const {
  AugmentConfig aug = cfg_.augment;
  if (!cfg_.ablation.cutflip) aug.cutflip_prob = 0.0;
  Rng rng(Rng::mix(cfg_.seed, static_cast<std::uint64_t>(step) + 0x9e37ull,
                   static_cast<std::uint64_t>(slot)));
  return augment_pipeline(sample, aug, rng);
}

void Trainer::clip_gradients() const {
  if (cfg_.grad_clip_norm <= 0.0) return;
  // Norms are taken per branch group (t.* vs the rest): gradients never mix
  // across groups, and a shared norm would couple the branches' update
  // magnitudes, breaking the "cross-distill off trains the branch alone"
  // equivalence.
  for (int group = 0; group < 2; ++group) {
    double sq = 0.0;
    for (const auto& p : adam_->params()) {
      const bool is_t = p.name.rfind("t.", 0) == 0;
      if ((group == 0) != is_t) continue;
      Var var = p.var;
      if (!var.grad().defined()) continue;
      const double* g = var.grad().data();
      for (std::int64_t i = 0; i < var.grad().numel(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm <= cfg_.grad_clip_norm) continue;
    const double scale = cfg_.grad_clip_norm / norm;
    for (const auto& p : adam_->params()) {
      const bool is_t = p.name.rfind("t.", 0) == 0;
      if ((group == 0) != is_t) continue;
      Var var = p.var;
      if (!var.grad().defined()) continue;
      double* g = var.grad_buffer().data();
      for (std::int64_t i = 0; i < var.grad().numel(); ++i) g[i] *= scale;
    }
  }
}

LossBundle Trainer::train_step(const std::vector<Sample>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const std::int64_t n = static_cast<std::int64_t>(batch.size());
  const std::int64_t h = batch[0].image.height(), w = batch[0].image.width();

  std::vector<Tensor> images, depths;
  for (const auto& s : batch) {
    images.push_back(s.image.data());
    depths.push_back(s.gt_depth.data());
  }
  Var input(stack0(images), /*requires_grad=*/false);

  model_->zero_grads();

  TotalLossOptions loss_opts;
  loss_opts.cross_distill = cfg_.ablation.cross_distill && !cfg_.transformer_only;
  loss_opts.uncertainty_rectify = cfg_.ablation.uncertainty_rectify;
  loss_opts.urcd_on_valid_only = cfg_.urcd_on_valid_only;

  Var ssi_sum, urcd_sum, u_sum;
  BranchVars t_out;
  BranchVars c_out;
  if (cfg_.transformer_only) {
    t_out = model_->forward_transformer(input, /*training=*/true);
  } else {
    DualVars dual = model_->forward(input, /*training=*/true);
    t_out = dual.transformer;
    c_out = dual.cnn;
  }

  for (std::int64_t i = 0; i < n; ++i) {
    const Tensor gt = depths[static_cast<std::size_t>(i)];
    ValidMask mask = valid_mask_of(DepthMap(gt), cfg_.depth_range);
    if (mask.count() < 1)
      throw std::runtime_error("train_step: no valid pixels in sample " +
                               batch[static_cast<std::size_t>(i)].id);
    Var d_t = narrow0(t_out.depth, i);
    Var u_t = narrow0(t_out.uncertainty, i);

    LossTerms terms;
    if (cfg_.transformer_only) {
      terms.ssi = ssi_loss_single(d_t, gt, mask, cfg_.weights.kappa, cfg_.weights.eta);
      terms.urcd = Var(Tensor::scalar(0.0));
      terms.u = Var(Tensor::scalar(0.0));
    } else {
      Var d_c = narrow0(c_out.depth, i);
      Var u_c = narrow0(c_out.uncertainty, i);
      terms = total_loss(d_t, u_t, d_c, u_c, gt, mask, cfg_.weights, loss_opts);
    }
    ssi_sum = ssi_sum.defined() ? add(ssi_sum, terms.ssi) : terms.ssi;
    urcd_sum = urcd_sum.defined() ? add(urcd_sum, terms.urcd) : terms.urcd;
    u_sum = u_sum.defined() ? add(u_sum, terms.u) : terms.u;
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  LossTerms batch_terms;
  batch_terms.ssi = mul_scalar(ssi_sum, inv_n);
  batch_terms.urcd = mul_scalar(urcd_sum, inv_n);
  batch_terms.u = mul_scalar(u_sum, inv_n);
  batch_terms.total = add(add(batch_terms.ssi, mul_scalar(batch_terms.urcd, cfg_.weights.lambda1)),
                          mul_scalar(batch_terms.u, cfg_.weights.lambda2));

  LossBundle bundle = batch_terms.values();
  if (!std::isfinite(bundle.total)) {
    std::ostringstream ids;
    for (const auto& s : batch) ids << " " << s.id;
    throw std::runtime_error("non-finite loss at step " + std::to_string(step_) +
                             "; offending batch:" + ids.str());
  }

  batch_terms.total.backward();
  clip_gradients();
  // h/w unused beyond shape checks performed by the model itself.
  (void)h;
  (void)w;
  return bundle;
}

MetricReport Trainer::evaluate_samples(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate_samples: empty sample list");
  std::vector<MetricReport> reports;
  for (const auto& s : samples) {
    BranchOutput out = run_inference(*model_, s.image);
    ValidMask mask = valid_mask_of(s.gt_depth, cfg_.depth_range);
    reports.push_back(evaluate(out.depth, s.gt_depth, mask));
  }
  return aggregate(reports, Aggregation::kImageAveraged);
}

void Trainer::save_state(const std::filesystem::path& path, std::int64_t total_steps) {
  CheckpointMeta meta;
  meta.step = step_;
  meta.epoch = epoch_;
  meta.total_steps = total_steps;
  meta.seed = cfg_.seed;
  meta.best_val_abs_rel = best_val_abs_rel_;
  meta.model_config_json = serialize_model_config(cfg_.model);
  OptimSnapshot snap = adam_->snapshot();
  save_checkpoint(path, *model_, &snap, meta);
}

FitResult Trainer::fit(const std::filesystem::path& data_root, const DatasetManifest& manifest,
                       const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume_from) {
  std::vector<Sample> train = load_split(data_root, manifest, "train");
  if (train.empty()) throw std::runtime_error("fit: dataset empty");
  std::vector<Sample> val = load_split(data_root, manifest, "val");

  const std::int64_t n = static_cast<std::int64_t>(train.size());
  const std::int64_t batch = std::min<std::int64_t>(cfg_.batch_size, n);
  const std::int64_t steps_per_epoch = n / batch;
  const std::int64_t total_steps = cfg_.epochs * steps_per_epoch;

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path log_path = out_dir / "train_log.jsonl";
  const std::filesystem::path last_path = out_dir / "last.ckpt";
  const std::filesystem::path best_path = out_dir / "best.ckpt";

  bool resuming = false;
  if (resume_from.has_value()) {
    Checkpoint ck = read_checkpoint(*resume_from);
    if (ck.meta.seed != cfg_.seed)
      throw std::runtime_error("resume: checkpoint seed differs from config seed");
    load_into_model(*model_, ck, {"transformer", "cnn", "coupling"});
    auto snap = optim_from_checkpoint(ck);
    if (snap.has_value()) adam_->restore(*snap);
    step_ = ck.meta.step;
    epoch_ = ck.meta.epoch;
    best_val_abs_rel_ = ck.meta.best_val_abs_rel;
    resuming = true;
  }

  std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("fit: cannot write log at " + log_path.string());

  const std::int64_t eval_every =
      cfg_.eval_every_epochs > 0 ? cfg_.eval_every_epochs
                                 : std::max<std::int64_t>(1, cfg_.epochs / 20);

  std::vector<std::int64_t> order;
  std::int64_t order_epoch = -1;
  while (step_ < total_steps) {
    epoch_ = step_ / steps_per_epoch;
    const std::int64_t pos = step_ % steps_per_epoch;
    if (epoch_ != order_epoch) {
      order = epoch_order(cfg_.seed, epoch_, n);
      order_epoch = epoch_;
    }

    std::vector<Sample> batch_samples;
    for (std::int64_t slot = 0; slot < batch; ++slot) {
      const std::int64_t idx = order[static_cast<std::size_t>(pos * batch + slot)];
      batch_samples.push_back(augmented(train[static_cast<std::size_t>(idx)], step_, slot));
    }

    const double lr = lr_at(step_, total_steps, cfg_);
    LossBundle bundle = train_step(batch_samples);
    adam_->step(lr);

    json line;
    line["step"] = step_;
    line["lr"] = lr;
    line["ssi"] = bundle.ssi;
    line["urcd"] = bundle.urcd;
    line["u"] = bundle.u;
    line["total"] = bundle.total;
    log << line.dump() << "\n";

    ++step_;
    const bool epoch_end = (step_ % steps_per_epoch) == 0;
    if (epoch_end) {
      const std::int64_t finished_epoch = step_ / steps_per_epoch;
      if (!val.empty() &&
          (finished_epoch % eval_every == 0 || finished_epoch == cfg_.epochs)) {
        const MetricReport report = evaluate_samples(val);
        if (best_val_abs_rel_ < 0.0 || report.abs_rel < best_val_abs_rel_) {
          best_val_abs_rel_ = report.abs_rel;
          save_state(best_path, total_steps);
        }
      }
      save_state(last_path, total_steps);
    }
  }
  log.flush();
  save_state(last_path, total_steps);
  if (val.empty()) {
    // Without a val split the last state doubles as best.
    save_state(best_path, total_steps);
  } else if (!std::filesystem::exists(best_path)) {
    save_state(best_path, total_steps);
  }

  FitResult result;
  result.last_checkpoint = last_path;
  result.best_checkpoint = best_path;
  result.log_path = log_path;
  result.best_val_abs_rel = best_val_abs_rel_;
  result.steps_run = step_;
  return result;
}

}  // namespace crossdepth
