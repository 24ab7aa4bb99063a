#include <doctest.h>

#include <cmath>
#include <vector>

#include "crossdepth/losses.hpp"
#include "crossdepth/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace crossdepth;
namespace oracle = crossdepth::testing;

namespace {

Tensor map_of(std::initializer_list<double> values, std::int64_t h, std::int64_t w) {
  return Tensor(std::vector<std::int64_t>{1, h, w}, std::vector<double>(values));
}

ValidMask all_true(std::int64_t h, std::int64_t w) {
  return ValidMask(Tensor::ones({1, h, w}));
}

std::vector<double> to_vec(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

std::vector<bool> mask_vec(const ValidMask& m) {
  std::vector<bool> out(static_cast<std::size_t>(m.data().numel()));
  for (std::int64_t i = 0; i < m.data().numel(); ++i) out[static_cast<std::size_t>(i)] = m.data()[i] != 0.0;
  return out;
}

// Random positive depth-like maps with residuals kept away from the |.| kink.
struct RandomPair {
  Tensor pred, gt;
};
RandomPair random_depth_pair(Rng& rng, std::int64_t h = 4, std::int64_t w = 4) {
  while (true) {
    Tensor pred({1, h, w});
    Tensor gt({1, h, w});
    bool ok = true;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
      pred[i] = rng.uniform(0.6, 9.0);
      gt[i] = rng.uniform(0.6, 9.0);
      if (std::fabs(pred[i] - gt[i]) < 1e-3) ok = false;
    }
    if (ok) return {pred, gt};
  }
}

Tensor random_unit_map(Rng& rng, std::int64_t h = 4, std::int64_t w = 4) {
  Tensor t({1, h, w});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.05, 0.95);
  return t;
}

}  // namespace

TEST_SUITE("losses") {

// --- scaled scale-invariant loss -------------------------------------------

TEST_CASE("ssi: zero for a perfect prediction") {
  Tensor gt = map_of({1.0, 2.0, 3.0, 4.0}, 2, 2);
  Var pred(gt.clone(), true);
  Var loss = ssi_loss_single(pred, gt, all_true(2, 2), 10.0, 0.85);
  CHECK(loss.value()[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ssi: constant log-residual closed form") {
  // pred = 2*gt on two masked pixels: g == ln 2, so the loss collapses to
  // kappa * |g| * sqrt(1 - eta).
  Tensor gt = map_of({1.0, 3.0}, 1, 2);
  Tensor pred = map_of({2.0, 6.0}, 1, 2);
  const double expected = 10.0 * std::log(2.0) * std::sqrt(0.15);
  CHECK(expected == doctest::Approx(2.6845).epsilon(1e-4));
  Var loss = ssi_loss_single(Var(pred), gt, all_true(1, 2), 10.0, 0.85);
  CHECK(std::fabs(loss.value()[0] - expected) < 1e-10);
}

TEST_CASE("ssi: joint rescaling of pred and gt leaves the value unchanged") {
  Rng rng(101);
  for (int rep = 0; rep < 20; ++rep) {
    auto [pred, gt] = random_depth_pair(rng);
    const double s = rng.uniform(0.1, 5.0);
    Tensor pred_s = pred.clone();
    Tensor gt_s = gt.clone();
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
      pred_s[i] *= s;
      gt_s[i] *= s;
    }
    const double a = ssi_loss_single(Var(pred), gt, all_true(4, 4), 10.0, 0.85).value()[0];
    const double b = ssi_loss_single(Var(pred_s), gt_s, all_true(4, 4), 10.0, 0.85).value()[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("ssi: matches the scalar oracle on random masked maps") {
  Rng rng(103);
  for (int rep = 0; rep < 50; ++rep) {
    auto [pred, gt] = random_depth_pair(rng);
    Tensor mask_t({1, 4, 4});
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < 16; ++i) {
      mask_t[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
      if (mask_t[i] != 0.0) ++count;
    }
    if (count == 0) mask_t[0] = 1.0;
    ValidMask mask(mask_t);
    const double got =
        ssi_loss_single(Var(pred), gt, mask, 10.0, 0.85).value()[0];
    const double want =
        oracle::ssi_oracle(to_vec(pred), to_vec(gt), mask_vec(mask), 10.0, 0.85);
    CHECK(std::fabs(got - want) < 1e-10);
  }
}

TEST_CASE("ssi: rejects empty masks and non-positive predictions") {
  Tensor gt = map_of({1.0, 2.0}, 1, 2);
  ValidMask empty(Tensor::zeros({1, 1, 2}));
  CHECK_THROWS_WITH_AS(ssi_loss_single(Var(gt), gt, empty, 10.0, 0.85), "no valid pixels",
                       std::invalid_argument);
  Tensor bad = map_of({-1.0, 2.0}, 1, 2);
  CHECK_THROWS_AS(ssi_loss_single(Var(bad), gt, all_true(1, 2), 10.0, 0.85),
                  std::invalid_argument);
}

// --- uncertainty target -----------------------------------------------------

TEST_CASE("uncertainty target: worked scalar values") {
  Tensor gt = map_of({2.0}, 1, 1);
  Tensor pred = map_of({1.0}, 1, 1);
  Tensor t = uncertainty_target(pred, gt, all_true(1, 1), 0.2);
  CHECK(std::fabs(t[0] - oracle::uncertainty_target_oracle(1.0, 2.0, 0.2)) < 1e-12);
  CHECK(t[0] == doctest::Approx(0.8111).epsilon(1e-4));

  // Same absolute error far away is much less uncertain.
  Tensor t2 = uncertainty_target(map_of({10.0}, 1, 1), map_of({11.0}, 1, 1), all_true(1, 1), 0.2);
  CHECK(t2[0] == doctest::Approx(0.2119).epsilon(1e-3));
  CHECK(t2[0] < t[0]);
}

TEST_CASE("uncertainty target: zero residual, off-mask zeros, range bound") {
  Tensor gt = map_of({1.0, 2.0, 3.0, 4.0}, 2, 2);
  Tensor mask_t = map_of({1.0, 0.0, 1.0, 1.0}, 2, 2);
  Tensor t = uncertainty_target(gt, gt, ValidMask(mask_t), 0.2);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(t[i] == 0.0);

  Rng rng(107);
  for (int rep = 0; rep < 100; ++rep) {
    auto [pred, gtr] = random_depth_pair(rng, 2, 2);
    Tensor u = uncertainty_target(pred, gtr, all_true(2, 2), 0.2);
    for (std::int64_t i = 0; i < 4; ++i) {
      CHECK(u[i] >= 0.0);
      CHECK(u[i] < 1.0);
    }
  }
}

TEST_CASE("uncertainty target: strictly increasing in |pred - gt| at fixed sum") {
  // Pairs with pred+gt == 10 and growing separation.
  double previous = -1.0;
  for (double delta : {0.1, 0.5, 1.0, 2.0, 4.0}) {
    Tensor pred = map_of({5.0 - delta / 2.0}, 1, 1);
    Tensor gt = map_of({5.0 + delta / 2.0}, 1, 1);
    Tensor u = uncertainty_target(pred, gt, all_true(1, 1), 0.2);
    CHECK(u[0] > previous);
    previous = u[0];
  }
}

// --- uncertainty loss --------------------------------------------------------

TEST_CASE("uncertainty loss: worked values and oracle agreement") {
  ValidMask m = all_true(1, 1);
  Tensor tt = map_of({0.8}, 1, 1);
  Tensor tc = map_of({0.2}, 1, 1);
  Var loss = uncertainty_loss(Var(map_of({0.5}, 1, 1)), Var(map_of({0.2}, 1, 1)), tt, tc, m);
  CHECK(std::fabs(loss.value()[0] - 0.3) < 1e-12);

  // Perfect approximation -> 0; maximal L1 on unit-bounded maps -> 2.
  Var zero = uncertainty_loss(Var(tt), Var(tc), tt, tc, m);
  CHECK(zero.value()[0] == 0.0);
  Var two = uncertainty_loss(Var(map_of({0.0}, 1, 1)), Var(map_of({0.0}, 1, 1)),
                             map_of({1.0}, 1, 1), map_of({1.0}, 1, 1), m);
  CHECK(two.value()[0] == 2.0);

  Rng rng(109);
  for (int rep = 0; rep < 30; ++rep) {
    Tensor u_t = random_unit_map(rng), u_c = random_unit_map(rng);
    Tensor g_t = random_unit_map(rng), g_c = random_unit_map(rng);
    Tensor mask_t({1, 4, 4});
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < 16; ++i) {
      mask_t[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
      count += mask_t[i] != 0.0;
    }
    if (count == 0) mask_t[3] = 1.0;
    ValidMask mask(mask_t);
    const double got = uncertainty_loss(Var(u_t), Var(u_c), g_t, g_c, mask).value()[0];
    const double want = oracle::uncertainty_loss_oracle(to_vec(u_t), to_vec(u_c), to_vec(g_t),
                                                        to_vec(g_c), mask_vec(mask));
    CHECK(std::fabs(got - want) < 1e-10);
  }
}

// --- cross-distillation loss -------------------------------------------------

TEST_CASE("urcd: hand-computed two-pixel example") {
  Tensor d_t = map_of({1.0, 2.0}, 1, 2);
  Tensor d_c = map_of({1.5, 1.5}, 1, 2);
  Tensor u_c = map_of({0.5, 0.0}, 1, 2);
  Tensor u_t = map_of({0.0, 0.5}, 1, 2);
  Var loss = urcd_loss(Var(d_t), Var(d_c), Var(u_t), Var(u_c));
  CHECK(std::fabs(loss.value()[0] - 0.75) < 1e-12);
}

TEST_CASE("urcd: zero residual or saturated uncertainty kill the loss") {
  Tensor d = map_of({1.0, 2.0, 3.0, 4.0}, 2, 2);
  Tensor u = map_of({0.3, 0.7, 0.1, 0.9}, 2, 2);
  CHECK(urcd_loss(Var(d), Var(d.clone()), Var(u), Var(u)).value()[0] == 0.0);

  Tensor ones = Tensor::ones({1, 2, 2});
  Tensor other = map_of({9.0, 8.0, 7.0, 6.0}, 2, 2);
  CHECK(urcd_loss(Var(d), Var(other), Var(ones), Var(ones)).value()[0] == 0.0);
}

TEST_CASE("urcd: matches oracle and is symmetric under branch swap") {
  Rng rng(113);
  for (int rep = 0; rep < 30; ++rep) {
    auto [d_t, d_c] = random_depth_pair(rng);
    Tensor u_t = random_unit_map(rng), u_c = random_unit_map(rng);
    const double got = urcd_loss(Var(d_t), Var(d_c), Var(u_t), Var(u_c)).value()[0];
    const double want = oracle::urcd_oracle(to_vec(d_t), to_vec(d_c), to_vec(u_t), to_vec(u_c));
    CHECK(std::fabs(got - want) < 1e-10);
    const double swapped = urcd_loss(Var(d_c), Var(d_t), Var(u_c), Var(u_t)).value()[0];
    CHECK(got == doctest::Approx(swapped).epsilon(1e-14));
  }
}

TEST_CASE("urcd: shape mismatch is rejected") {
  Tensor a = map_of({1.0, 2.0}, 1, 2);
  Tensor b = map_of({1.0}, 1, 1);
  CHECK_THROWS_AS(urcd_loss(Var(a), Var(b), Var(a), Var(a)), std::invalid_argument);
}

// --- total loss ---------------------------------------------------------------

TEST_CASE("total: zero at a perfect, certain prediction and exact weighting") {
  Tensor gt = map_of({1.0, 2.0, 3.0, 4.0}, 2, 2);
  ValidMask mask = all_true(2, 2);
  LossWeights w;
  Var d(gt.clone(), true);
  Var u(Tensor::zeros({1, 2, 2}), true);
  LossTerms terms = total_loss(d, u, Var(gt.clone(), true), Var(Tensor::zeros({1, 2, 2}), true),
                               gt, mask, w);
  LossBundle bundle = terms.values();
  CHECK(bundle.total == 0.0);
  CHECK(bundle.ssi == 0.0);
  CHECK(bundle.urcd == 0.0);
  CHECK(bundle.u == 0.0);
}

TEST_CASE("total: bundle invariant total == ssi + l1*urcd + l2*u, and 2.3 example") {
  // Arithmetic pinning of the weighted sum: 2 + 0.1*1 + 0.5*0.4 == 2.3.
  CHECK(2.0 + 0.1 * 1.0 + 0.5 * 0.4 == doctest::Approx(2.3).epsilon(1e-15));

  Rng rng(127);
  LossWeights w;
  for (int rep = 0; rep < 10; ++rep) {
    auto [d_t, gt] = random_depth_pair(rng);
    auto [d_c, unused] = random_depth_pair(rng);
    (void)unused;
    Tensor u_t = random_unit_map(rng), u_c = random_unit_map(rng);
    LossTerms terms =
        total_loss(Var(d_t, true), Var(u_t, true), Var(d_c, true), Var(u_c, true), gt,
                   all_true(4, 4), w);
    LossBundle b = terms.values();
    CHECK(b.total == b.ssi + w.lambda1 * b.urcd + w.lambda2 * b.u);
    CHECK(b.ssi >= 0.0);
    CHECK(b.urcd >= 0.0);
    CHECK(b.u >= 0.0);
  }
}

TEST_CASE("total: degenerate weights reduce the objective to ssi") {
  Rng rng(131);
  auto [d_t, gt] = random_depth_pair(rng);
  auto [d_c, u2] = random_depth_pair(rng);
  (void)u2;
  Tensor u_t = random_unit_map(rng), u_c = random_unit_map(rng);
  LossWeights w;
  w.lambda1 = 0.0;
  w.lambda2 = 0.0;
  LossTerms terms = total_loss(Var(d_t), Var(u_t), Var(d_c), Var(u_c), gt, all_true(4, 4), w);
  LossBundle b = terms.values();
  CHECK(b.total == b.ssi);
}

TEST_CASE("total: ablation switches") {
  Rng rng(137);
  auto [d_t, gt] = random_depth_pair(rng);
  auto [d_c, u2] = random_depth_pair(rng);
  (void)u2;
  Tensor u_t = random_unit_map(rng), u_c = random_unit_map(rng);
  LossWeights w;

  TotalLossOptions no_cd;
  no_cd.cross_distill = false;
  LossBundle base = total_loss(Var(d_t), Var(u_t), Var(d_c), Var(u_c), gt, all_true(4, 4), w,
                               no_cd)
                        .values();
  CHECK(base.urcd == 0.0);
  CHECK(base.u == 0.0);
  CHECK(base.total == base.ssi);

  TotalLossOptions plain;
  plain.uncertainty_rectify = false;
  LossBundle cd_only = total_loss(Var(d_t), Var(u_t), Var(d_c), Var(u_c), gt, all_true(4, 4), w,
                                  plain)
                           .values();
  CHECK(cd_only.u == 0.0);
  // Unit weights: the distillation term is the plain L1 cross term.
  long double t1 = 0.0L, t2 = 0.0L;
  for (std::int64_t i = 0; i < 16; ++i) {
    t1 += std::fabs(d_t[i] - d_c[i]);
    t2 += std::fabs(d_c[i] - d_t[i]);
  }
  CHECK(cd_only.urcd == doctest::Approx(static_cast<double>(t1 / 16.0L + t2 / 16.0L))
                            .epsilon(1e-12));
}

// --- gradients -----------------------------------------------------------------

TEST_CASE("gradients: ssi / urcd / uncertainty losses match finite differences") {
  Rng rng(139);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    auto [d_t, gt] = random_depth_pair(rng);
    auto [d_c, g2] = random_depth_pair(rng);
    (void)g2;
    Tensor u_t = random_unit_map(rng), u_c = random_unit_map(rng);
    ValidMask mask = all_true(4, 4);

    auto r1 = testing::gradcheck(
        [&](const std::vector<Var>& v) { return ssi_loss_single(v[0], gt, mask, 10.0, 0.85); },
        {d_t}, {true});
    worst = std::max(worst, r1.max_rel_err);

    // For the distillation loss the pseudo labels are cached constants, so
    // the finite-difference twin keeps them frozen at the base point while
    // the analytic gradient comes from the real loss (detach inside).
    Tensor d_t0 = d_t.clone(), d_c0 = d_c.clone(), u_t0 = u_t.clone(), u_c0 = u_c.clone();
    auto frozen_urcd = [&](const std::vector<Var>& v) {
      Var term1 = mul(affine(Var(u_c0), -1.0, 1.0), vabs(sub(v[0], Var(d_c0))));
      Var term2 = mul(affine(Var(u_t0), -1.0, 1.0), vabs(sub(v[1], Var(d_t0))));
      return add(mean_all(term1), mean_all(term2));
    };
    auto r2 = testing::gradcheck_against(
        [&](const std::vector<Var>& v) { return urcd_loss(v[0], v[1], Var(u_t0), Var(u_c0)); },
        frozen_urcd, {d_t, d_c}, {true, true});
    worst = std::max(worst, r2.max_rel_err);

    Tensor target_t = uncertainty_target(d_t, gt, mask, 0.2);
    Tensor target_c = uncertainty_target(d_c, gt, mask, 0.2);
    auto r3 = testing::gradcheck(
        [&](const std::vector<Var>& v) {
          return uncertainty_loss(v[0], v[1], target_t, target_c, mask);
        },
        {u_t, u_c}, {true, true});
    worst = std::max(worst, r3.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("stop-gradient: urcd term 1 never reaches d_c, u_c or u_t") {
  Rng rng(149);
  auto [d_t, d_c] = random_depth_pair(rng);
  Tensor u_t = random_unit_map(rng), u_c = random_unit_map(rng);

  Var vd_t(d_t, true), vd_c(d_c, true), vu_t(u_t, true), vu_c(u_c, true);
  Var term1 = mul(affine(vu_c.detach(), -1.0, 1.0), vabs(sub(vd_t, vd_c.detach())));
  mean_all(term1).backward();
  CHECK(vd_t.grad().defined());
  CHECK_FALSE(vd_c.grad().defined());
  CHECK_FALSE(vu_c.grad().defined());
  CHECK_FALSE(vu_t.grad().defined());

  // Full loss: neither uncertainty map receives gradient.
  Var vd_t2(d_t, true), vd_c2(d_c, true), vu_t2(u_t, true), vu_c2(u_c, true);
  urcd_loss(vd_t2, vd_c2, vu_t2, vu_c2).backward();
  CHECK(vd_t2.grad().defined());
  CHECK(vd_c2.grad().defined());
  CHECK_FALSE(vu_t2.grad().defined());
  CHECK_FALSE(vu_c2.grad().defined());
}

TEST_CASE("stop-gradient: uncertainty targets are constants w.r.t. depth") {
  Rng rng(151);
  auto [d_t, gt] = random_depth_pair(rng);
  Tensor u_t = random_unit_map(rng);
  Var vd(d_t, true);
  Var vu(u_t, true);
  // Target computed from values: building the loss must not link back to vd.
  Tensor target = uncertainty_target(vd.value(), gt, all_true(4, 4), 0.2);
  Var masked = mul(vabs(sub(vu, Var(target))), Var(Tensor::ones({1, 4, 4})));
  sum_all(masked).backward();
  CHECK(vu.grad().defined());
  CHECK_FALSE(vd.grad().defined());
}

}  // TEST_SUITE
