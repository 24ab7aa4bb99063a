#pragma once

#include "crossdepth/autograd.hpp"
#include "crossdepth/ops.hpp"
#include "crossdepth/types.hpp"

namespace crossdepth {

struct LossWeights {
  double lambda1 = 0.1;  // cross-distillation weight
  double lambda2 = 0.5;  // uncertainty-supervision weight
  double kappa = 10.0;   // SSI scale
  double eta = 0.85;     // SSI variance focus
  double b = 0.2;        // uncertainty-target error tolerance

  void validate() const;
};

// Per-step scalar loss values. Invariant: total == ssi + lambda1*urcd +
// lambda2*u with the bundle's own terms, computed in exactly that order.
struct LossBundle {
  double ssi = 0.0;
  double urcd = 0.0;
  double u = 0.0;
  double total = 0.0;
};

// Graph-side counterpart of LossBundle used while the tape is alive.
struct LossTerms {
  Var ssi;
  Var urcd;
  Var u;
  Var total;
  LossBundle values() const;
};

// Scaled scale-invariant loss for ONE branch prediction:
//   kappa * sqrt( (1/|T|) sum g^2 - (eta/|T|^2) (sum g)^2 ),  g = ln(pred) - ln(gt)
// over masked pixels. The two-branch objective is this called once per
// branch and added. pred is (1,H,W) and differentiable; gt is constant.
Var ssi_loss_single(const Var& pred, const Tensor& gt, const ValidMask& mask, double kappa,
                    double eta);

// Laplace-style uncertainty target: 1 - exp(-|pred - gt| / (b*(pred+gt)+eps))
// on masked pixels, 0 elsewhere. Plain tensors in and out: the target is a
// constant, no gradient flows through it.
Tensor uncertainty_target(const Tensor& pred, const Tensor& gt, const ValidMask& mask, double b);

// Mean L1 over masked pixels between each branch's uncertainty prediction and
// its constant target, summed over the two branches.
Var uncertainty_loss(const Var& u_t, const Var& u_c, const Tensor& target_t,
                     const Tensor& target_c, const ValidMask& mask);

// Uncertainty rectified cross-distillation:
//   mean_p (1 - stop(u_c)) |d_t - stop(d_c)| + mean_p (1 - stop(u_t)) |d_c - stop(d_t)|
// Term 1 propagates only into d_t, term 2 only into d_c; the uncertainty
// maps never receive gradient from this loss. The mean runs over ALL pixels
// unless valid_only is given, in which case it runs over masked pixels.
Var urcd_loss(const Var& d_t, const Var& d_c, const Var& u_t, const Var& u_c,
              const ValidMask* valid_only = nullptr);

// Plain cross-distillation with unit weights (ablation without uncertainty
// rectification): mean |d_t - stop(d_c)| + mean |d_c - stop(d_t)|.
Var urcd_loss_plain(const Var& d_t, const Var& d_c, const ValidMask* valid_only = nullptr);

struct TotalLossOptions {
  bool cross_distill = true;        // adds lambda1 * urcd (+ lambda2 * u)
  bool uncertainty_rectify = true;  // off: unit distillation weights, u term dropped
  bool urcd_on_valid_only = false;
};

// Full objective for one sample: ssi(transformer) + ssi(cnn)
// + lambda1*urcd + lambda2*u, with ablation switches applied.
LossTerms total_loss(const Var& d_t, const Var& u_t, const Var& d_c, const Var& u_c,
                     const Tensor& gt, const ValidMask& mask, const LossWeights& weights,
                     const TotalLossOptions& options = {});

}  // namespace crossdepth
