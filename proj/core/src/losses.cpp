#include "crossdepth/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace crossdepth {

namespace {

constexpr double kDenomEps = 1e-8;

void check_map_shapes(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

void check_mask_nonempty(const ValidMask& mask) {
  if (mask.count() < 1) throw std::invalid_argument("no valid pixels");
}

// Masked mean of |a - constant| built from primitive ops.
Var masked_l1_mean(const Var& a, const Tensor& target, const ValidMask& mask) {
  Var diff = sub(a, Var(target));
  Var weighted = mul(vabs(diff), Var(mask.data()));
  return mul_scalar(sum_all(weighted), 1.0 / static_cast<double>(mask.count()));
}

}  // namespace

void LossWeights::validate() const {
  if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("LossWeights: eta must be in [0,1]");
  if (!(b > 0.0)) throw std::invalid_argument("LossWeights: b must be > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0 || kappa < 0.0)
    throw std::invalid_argument("LossWeights: negative weight");
}

LossBundle LossTerms::values() const {
  LossBundle out;
  out.ssi = ssi.value()[0];
  out.urcd = urcd.value()[0];
  out.u = u.value()[0];
  out.total = total.value()[0];
  return out;
}

Var ssi_loss_single(const Var& pred, const Tensor& gt, const ValidMask& mask, double kappa,
                    double eta) {
  check_map_shapes(pred.value(), gt, "ssi_loss_single");
  check_map_shapes(pred.value(), mask.data(), "ssi_loss_single");
  check_mask_nonempty(mask);
  const std::int64_t count = mask.count();
  for (std::int64_t i = 0; i < gt.numel(); ++i) {
    if (mask.data()[i] != 0.0 && !(pred.value()[i] > 0.0))
      throw std::invalid_argument("ssi_loss_single: non-positive prediction on valid pixel");
  }

  // g is only evaluated on masked pixels; off-mask entries (where gt may be
  // the 0 sentinel and pred is unconstrained) are replaced by 1 before the
  // log so the graph stays finite, then re-zeroed by the mask.
  Tensor safe_gt = gt.clone();
  Tensor off_mask(mask.data().shape());
  for (std::int64_t i = 0; i < safe_gt.numel(); ++i) {
    if (mask.data()[i] == 0.0) {
      safe_gt[i] = 1.0;
      off_mask[i] = 1.0;
    }
  }
  Var masked_pred = add(mul(pred, Var(mask.data())), Var(std::move(off_mask)));
  Var g = mul(sub(vlog(masked_pred), vlog(Var(safe_gt))), Var(mask.data()));
  Var sum_g = sum_all(g);
  Var sum_g2 = sum_all(mul(g, g));
  const double inv_count = 1.0 / static_cast<double>(count);
  Var inner = sub(mul_scalar(sum_g2, inv_count),
                  mul_scalar(mul(sum_g, sum_g), eta * inv_count * inv_count));
  // inner >= (1-eta) * mean(g^2) analytically; relu guards the sqrt against
  // a tiny negative from rounding when g is constant.
  return mul_scalar(vsqrt(relu(inner)), kappa);
}

Tensor uncertainty_target(const Tensor& pred, const Tensor& gt, const ValidMask& mask, double b) {
  check_map_shapes(pred, gt, "uncertainty_target");
  check_map_shapes(pred, mask.data(), "uncertainty_target");
  if (!(b > 0.0)) throw std::invalid_argument("uncertainty_target: b must be > 0");
  Tensor out(pred.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    if (mask.data()[i] == 0.0) {
      out[i] = 0.0;
      continue;
    }
    const double p = pred[i];
    const double t = gt[i];
    if (!(p > 0.0) || !(t > 0.0))
      throw std::invalid_argument("uncertainty_target: non-positive depth on valid pixel");
    out[i] = 1.0 - std::exp(-std::fabs(p - t) / (b * (p + t) + kDenomEps));
  }
  return out;
}

Var uncertainty_loss(const Var& u_t, const Var& u_c, const Tensor& target_t,
                     const Tensor& target_c, const ValidMask& mask) {
  check_map_shapes(u_t.value(), u_c.value(), "uncertainty_loss");
  check_map_shapes(u_t.value(), target_t, "uncertainty_loss");
  check_map_shapes(u_c.value(), target_c, "uncertainty_loss");
  check_map_shapes(u_t.value(), mask.data(), "uncertainty_loss");
  check_mask_nonempty(mask);
  return add(masked_l1_mean(u_t, target_t, mask), masked_l1_mean(u_c, target_c, mask));
}

namespace {

Var distill_term(const Var& d_student, const Var& d_teacher, const Var* u_teacher,
                 const ValidMask* valid_only) {
  Var residual = vabs(sub(d_student, d_teacher.detach()));
  Var weighted = residual;
  if (u_teacher != nullptr)
    weighted = mul(affine(u_teacher->detach(), -1.0, 1.0), residual);
  if (valid_only != nullptr) {
    check_mask_nonempty(*valid_only);
    Var masked = mul(weighted, Var(valid_only->data()));
    return mul_scalar(sum_all(masked), 1.0 / static_cast<double>(valid_only->count()));
  }
  return mean_all(weighted);
}

}  // namespace

Var urcd_loss(const Var& d_t, const Var& d_c, const Var& u_t, const Var& u_c,
              const ValidMask* valid_only) {
  check_map_shapes(d_t.value(), d_c.value(), "urcd_loss");
  check_map_shapes(d_t.value(), u_t.value(), "urcd_loss");
  check_map_shapes(d_t.value(), u_c.value(), "urcd_loss");
  return add(distill_term(d_t, d_c, &u_c, valid_only),
             distill_term(d_c, d_t, &u_t, valid_only));
}

Var urcd_loss_plain(const Var& d_t, const Var& d_c, const ValidMask* valid_only) {
  check_map_shapes(d_t.value(), d_c.value(), "urcd_loss_plain");
  return add(distill_term(d_t, d_c, nullptr, valid_only),
             distill_term(d_c, d_t, nullptr, valid_only));
}

LossTerms total_loss(const Var& d_t, const Var& u_t, const Var& d_c, const Var& u_c,
                     const Tensor& gt, const ValidMask& mask, const LossWeights& weights,
                     const TotalLossOptions& options) {
  weights.validate();
  LossTerms terms;
  terms.ssi = add(ssi_loss_single(d_t, gt, mask, weights.kappa, weights.eta),
                  ssi_loss_single(d_c, gt, mask, weights.kappa, weights.eta));

  const ValidMask* distill_mask = options.urcd_on_valid_only ? &mask : nullptr;
  if (options.cross_distill) {
    if (options.uncertainty_rectify) {
      terms.urcd = urcd_loss(d_t, d_c, u_t, u_c, distill_mask);
      Tensor target_t = uncertainty_target(d_t.value(), gt, mask, weights.b);
      Tensor target_c = uncertainty_target(d_c.value(), gt, mask, weights.b);
      terms.u = uncertainty_loss(u_t, u_c, target_t, target_c, mask);
    } else {
      terms.urcd = urcd_loss_plain(d_t, d_c, distill_mask);
      terms.u = Var(Tensor::scalar(0.0));
    }
  } else {
    terms.urcd = Var(Tensor::scalar(0.0));
    terms.u = Var(Tensor::scalar(0.0));
  }
  terms.total = add(add(terms.ssi, mul_scalar(terms.urcd, weights.lambda1)),
                    mul_scalar(terms.u, weights.lambda2));
  return terms;
}

}  // namespace crossdepth
