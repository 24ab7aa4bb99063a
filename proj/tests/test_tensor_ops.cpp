#include <doctest.h>

#include <cmath>

#include "crossdepth/nn.hpp"
#include "crossdepth/ops.hpp"
#include "crossdepth/rng.hpp"
#include "support/gradcheck.hpp"

using namespace crossdepth;
using crossdepth::testing::gradcheck;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps elementwise kinks (|.|, relu) away from the sampled points.
Tensor random_away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double v = rng.uniform(0.2, 1.0);
    if (rng.uniform() < 0.5) v = -v;
    t[i] = v;
  }
  return t;
}

constexpr double kGradTol = 1e-6;

}  // namespace

TEST_SUITE("tensor_ops") {

TEST_CASE("tensor reshape shares storage and stack0 concatenates") {
  Tensor t = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
  Tensor r = t.reshaped({3, 2});
  r[0] = 42.0;
  CHECK(t[0] == 42.0);
  Tensor c = t.clone();
  c[1] = -1.0;
  CHECK(t[1] == 2.0);

  Tensor s = stack0({Tensor::from({1, 2}, {2}), Tensor::from({3, 4}, {2})});
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s[2] == 3.0);
}

TEST_CASE("elementwise and scalar op gradients") {
  Rng rng(7);
  Tensor a = random_away_from_zero({2, 3}, rng);
  Tensor b = random_away_from_zero({2, 3}, rng);

  auto check2 = [&](const char* name, auto op) {
    auto r = gradcheck([&](const std::vector<Var>& v) { return sum_all(op(v[0], v[1])); },
                       {a, b}, {true, true});
    INFO(name);
    CHECK(r.max_rel_err < kGradTol);
  };
  check2("add", [](const Var& x, const Var& y) { return add(x, y); });
  check2("sub", [](const Var& x, const Var& y) { return sub(x, y); });
  check2("mul", [](const Var& x, const Var& y) { return mul(x, y); });
  check2("div", [](const Var& x, const Var& y) { return div(x, y); });

  auto r = gradcheck(
      [&](const std::vector<Var>& v) { return sum_all(affine(v[0], 2.5, -0.3)); }, {a}, {true});
  CHECK(r.max_rel_err < kGradTol);
}

TEST_CASE("unary op gradients") {
  Rng rng(11);
  Tensor x = random_away_from_zero({3, 4}, rng);
  Tensor pos = random_tensor({3, 4}, rng, 0.3, 2.0);

  auto check = [&](const char* name, auto op, const Tensor& input) {
    auto r = gradcheck([&](const std::vector<Var>& v) { return sum_all(op(v[0])); }, {input},
                       {true});
    INFO(name, " max_rel_err=", r.max_rel_err);
    CHECK(r.max_rel_err < kGradTol);
  };
  check("abs", [](const Var& v) { return vabs(v); }, x);
  check("exp", [](const Var& v) { return vexp(v); }, x);
  check("log", [](const Var& v) { return vlog(v); }, pos);
  check("sqrt", [](const Var& v) { return vsqrt(v); }, pos);
  check("sigmoid", [](const Var& v) { return sigmoid(v); }, x);
  check("relu", [](const Var& v) { return relu(v); }, x);
  check("gelu", [](const Var& v) { return gelu(v); }, x);
  check("mean", [](const Var& v) { return mean_all(v); }, x);
}

TEST_CASE("shape op gradients") {
  Rng rng(13);
  Tensor x = random_tensor({2, 3, 4, 5}, rng);

  auto scalar_of = [](const Var& v) {
    // Weighted sum so that permutation mistakes change the value.
    Tensor w(v.shape());
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = 0.01 * static_cast<double>(i % 17) + 0.1;
    return sum_all(mul(v, Var(w)));
  };

  auto check = [&](const char* name, auto op, const Tensor& input) {
    auto r = gradcheck([&](const std::vector<Var>& v) { return scalar_of(op(v[0])); }, {input},
                       {true});
    INFO(name, " max_rel_err=", r.max_rel_err);
    CHECK(r.max_rel_err < kGradTol);
  };

  check("reshape", [](const Var& v) { return reshape(v, {6, 20}); }, x);
  check("permute", [](const Var& v) { return permute(v, {2, 0, 3, 1}); }, x);
  check("narrow0", [](const Var& v) { return narrow0(v, 1); }, x);
  check("slice_channels", [](const Var& v) { return slice_channels(v, 1, 3); }, x);
  check("pad_hw", [](const Var& v) { return pad_hw(v, 1, 2, 0, 3); }, x);
  check("crop_hw", [](const Var& v) { return crop_hw(v, 1, 1, 2, 0); }, x);
  check("roll_hw", [](const Var& v) { return roll_hw(v, -2, 1); }, x);
  check("upsample", [](const Var& v) { return upsample_bilinear(v, 7, 9); }, x);
  check("downsample", [](const Var& v) { return upsample_bilinear(v, 3, 2); }, x);

  Tensor y = random_tensor({2, 2, 4, 5}, rng);
  auto r = gradcheck(
      [&](const std::vector<Var>& v) { return scalar_of(concat_channels(v[0], v[1])); }, {x, y},
      {true, true});
  CHECK(r.max_rel_err < kGradTol);
}

TEST_CASE("permute round trip and roll semantics") {
  Rng rng(17);
  Tensor x = random_tensor({2, 3, 4, 2}, rng);
  Var v(x, false);
  Var p = permute(permute(v, {3, 1, 0, 2}), {2, 1, 3, 0});
  CHECK(p.value().equals(x));

  Tensor img = Tensor::from({1, 2, 3, 4, 5, 6, 7, 8, 9}, {1, 1, 3, 3});
  Var rolled = roll_hw(Var(img), 1, 0);  // rows shift down by one
  CHECK(rolled.value()[0] == 7.0);
  CHECK(rolled.value()[3] == 1.0);
}

TEST_CASE("matmul family gradients") {
  Rng rng(19);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  auto r = gradcheck([&](const std::vector<Var>& v) { return sum_all(matmul(v[0], v[1])); },
                     {a, b}, {true, true});
  CHECK(r.max_rel_err < kGradTol);

  Tensor x = random_tensor({5, 3}, rng);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor bias = random_tensor({4}, rng);
  r = gradcheck(
      [&](const std::vector<Var>& v) { return sum_all(linear(v[0], v[1], v[2])); },
      {x, w, bias}, {true, true, true});
  CHECK(r.max_rel_err < kGradTol);

  for (const bool ta : {false, true}) {
    for (const bool tb : {false, true}) {
      Tensor ba = random_tensor(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, rng);
      Tensor bb = random_tensor(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, rng);
      auto rr = gradcheck(
          [&](const std::vector<Var>& v) { return sum_all(bmm(v[0], v[1], ta, tb)); }, {ba, bb},
          {true, true});
      INFO("bmm ta=", ta, " tb=", tb);
      CHECK(rr.max_rel_err < kGradTol);
    }
  }
}

TEST_CASE("softmax layernorm batchnorm gradients") {
  Rng rng(23);
  Tensor x = random_tensor({4, 6}, rng);
  auto weighted = [](const Var& v) {
    Tensor w(v.shape());
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = 0.3 + 0.05 * static_cast<double>(i % 7);
    return sum_all(mul(v, Var(w)));
  };
  auto r = gradcheck(
      [&](const std::vector<Var>& v) { return weighted(softmax_lastdim(v[0])); }, {x}, {true});
  CHECK(r.max_rel_err < kGradTol);

  Tensor gamma = random_tensor({6}, rng, 0.5, 1.5);
  Tensor beta = random_tensor({6}, rng, -0.2, 0.2);
  r = gradcheck(
      [&](const std::vector<Var>& v) { return weighted(layernorm_lastdim(v[0], v[1], v[2])); },
      {x, gamma, beta}, {true, true, true});
  CHECK(r.max_rel_err < kGradTol);

  Tensor nchw = random_tensor({2, 3, 4, 4}, rng);
  Tensor g3 = random_tensor({3}, rng, 0.5, 1.5);
  Tensor b3 = random_tensor({3}, rng, -0.2, 0.2);
  for (const bool training : {true, false}) {
    r = gradcheck(
        [&](const std::vector<Var>& v) {
          Tensor rm = Tensor::zeros({3});
          Tensor rv = Tensor::ones({3});
          return weighted(batchnorm2d(v[0], v[1], v[2], rm, rv, training));
        },
        {nchw, g3, b3}, {true, true, true});
    INFO("batchnorm training=", training, " err=", r.max_rel_err);
    CHECK(r.max_rel_err < kGradTol);
  }
}

TEST_CASE("batchnorm updates running stats in training mode only") {
  Rng rng(29);
  Tensor x = random_tensor({4, 2, 3, 3}, rng, 1.0, 3.0);
  Tensor gamma = Tensor::ones({2});
  Tensor beta = Tensor::zeros({2});
  Tensor rm = Tensor::zeros({2});
  Tensor rv = Tensor::ones({2});
  batchnorm2d(Var(x), Var(gamma), Var(beta), rm, rv, /*training=*/true);
  CHECK(rm[0] != 0.0);
  const double rm_after = rm[0];
  batchnorm2d(Var(x), Var(gamma), Var(beta), rm, rv, /*training=*/false);
  CHECK(rm[0] == rm_after);
}

TEST_CASE("conv2d gradients across kernel/stride/padding") {
  Rng rng(31);
  struct Case {
    Shape x, w;
    std::int64_t stride, pad;
  };
  const Case cases[] = {
      {{1, 2, 5, 6}, {3, 2, 3, 3}, 1, 1},
      {{2, 3, 6, 6}, {4, 3, 3, 3}, 2, 1},
      {{1, 4, 4, 4}, {2, 4, 1, 1}, 1, 0},
      {{1, 3, 8, 8}, {5, 3, 4, 4}, 4, 0},
      {{1, 2, 4, 4}, {2, 2, 2, 2}, 2, 0},
  };
  for (const auto& c : cases) {
    Tensor x = random_tensor(c.x, rng);
    Tensor w = random_tensor(c.w, rng, -0.5, 0.5);
    Tensor b = random_tensor({c.w[0]}, rng, -0.2, 0.2);
    auto r = gradcheck(
        [&](const std::vector<Var>& v) {
          Var y = conv2d(v[0], v[1], v[2], c.stride, c.pad);
          Tensor wt(y.value().shape());
          for (std::int64_t i = 0; i < wt.numel(); ++i)
            wt[i] = 0.2 + 0.03 * static_cast<double>(i % 11);
          return sum_all(mul(y, Var(wt)));
        },
        {x, w, b}, {true, true, true});
    INFO("conv k=", c.w[2], " s=", c.stride, " p=", c.pad, " err=", r.max_rel_err);
    CHECK(r.max_rel_err < kGradTol);
  }
}

TEST_CASE("detach stops gradients and NoGrad skips recording") {
  Rng rng(37);
  Tensor x = random_tensor({2, 2}, rng);
  Var v(x, true);
  Var y = sum_all(mul(v.detach(), v.detach()));
  y.backward();
  CHECK_FALSE(v.grad().defined());

  {
    NoGradGuard guard;
    Var z = mul(Var(x, true), Var(x, true));
    CHECK_FALSE(z.requires_grad());
    CHECK(z.node()->parents.empty());
  }
}

TEST_CASE("backward accumulation is deterministic across runs") {
  Rng rng(41);
  Tensor x = random_tensor({3, 3}, rng);

  auto run = [&]() {
    Var v(x.clone(), true);
    Var a = sigmoid(v);
    Var b = vexp(v);
    Var c = add(mul(a, b), sub(a, b));
    sum_all(c).backward();
    return v.grad().clone();
  };
  Tensor g1 = run();
  Tensor g2 = run();
  CHECK(g1.equals(g2));
}

TEST_CASE("bilinear resize is identity at the same size") {
  Rng rng(43);
  Tensor x = random_tensor({1, 2, 5, 7}, rng);
  Tensor y = bilinear_resize(x, 5, 7);
  CHECK(y.equals(x));
}

TEST_CASE("module registry walks the tree with dotted names") {
  Rng rng(47);
  ConvBnRelu block(2, 3, 3, 1, 1, rng);
  auto params = block.named_parameters();
  REQUIRE(params.size() == 4);  // conv w/b + bn gamma/beta
  CHECK(params[0].name == "conv.weight");
  CHECK(params[2].name == "bn.gamma");
  auto buffers = block.named_buffers();
  REQUIRE(buffers.size() == 2);
  CHECK(buffers[0].name == "bn.running_mean");
  CHECK(block.parameter_count() == 2 * 3 * 9 + 3 + 3 + 3);
}

}  // TEST_SUITE
