#include "crossdepth/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace crossdepth {

Var& Module::register_parameter(const std::string& name, Tensor init) {
  params_.emplace_back(name, Var(std::move(init), /*requires_grad=*/true));
  return params_.back().second;
}

Tensor& Module::register_buffer(const std::string& name, Tensor init) {
  buffers_.emplace_back(name, std::move(init));
  return buffers_.back().second;
}

void Module::register_module(const std::string& name, Module& child) {
  children_.emplace_back(name, &child);
}

void Module::collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) const {
  for (const auto& [name, var] : params_) out.push_back({prefix + name, var});
  for (const auto& [name, child] : children_) child->collect_parameters(prefix + name + ".", out);
}

void Module::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) const {
  for (auto& [name, tensor] : const_cast<Module*>(this)->buffers_)
    out.push_back({prefix + name, &tensor});
  for (const auto& [name, child] : children_) child->collect_buffers(prefix + name + ".", out);
}

std::vector<NamedParam> Module::named_parameters() const {
  std::vector<NamedParam> out;
  collect_parameters("", out);
  return out;
}

std::vector<NamedBuffer> Module::named_buffers() const {
  std::vector<NamedBuffer> out;
  collect_buffers("", out);
  return out;
}

std::int64_t Module::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : named_parameters()) n += p.var.value().numel();
  return n;
}

void Module::zero_grads() const {
  for (auto& p : named_parameters()) {
    Var v = p.var;
    v.zero_grad();
  }
}

Linear::Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng) {
  Tensor w({out_features, in_features});
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.trunc_normal(0.02);
  weight_ = register_parameter("weight", std::move(w));
  bias_ = register_parameter("bias", Tensor::zeros({out_features}));
}

Conv2d::Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, std::int64_t stride,
               std::int64_t padding, Rng& rng, bool zero_init)
    : stride_(stride), padding_(padding) {
  Tensor w({out_ch, in_ch, kernel, kernel});
  if (!zero_init) {
    const double fan_in = static_cast<double>(in_ch * kernel * kernel);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, stddev);
  }
  weight_ = register_parameter("weight", std::move(w));
  bias_ = register_parameter("bias", Tensor::zeros({out_ch}));
}

BatchNorm2d::BatchNorm2d(std::int64_t channels) {
  gamma_ = register_parameter("gamma", Tensor::ones({channels}));
  beta_ = register_parameter("beta", Tensor::zeros({channels}));
  running_mean_ = register_buffer("running_mean", Tensor::zeros({channels}));
  running_var_ = register_buffer("running_var", Tensor::ones({channels}));
}

LayerNorm::LayerNorm(std::int64_t dim) {
  gamma_ = register_parameter("gamma", Tensor::ones({dim}));
  beta_ = register_parameter("beta", Tensor::zeros({dim}));
}

ConvBnRelu::ConvBnRelu(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                       std::int64_t stride, std::int64_t padding, Rng& rng)
    : conv_(in_ch, out_ch, kernel, stride, padding, rng), bn_(out_ch) {
  register_module("conv", conv_);
  register_module("bn", bn_);
}

}  // namespace crossdepth
