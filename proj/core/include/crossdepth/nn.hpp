#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crossdepth/ops.hpp"
#include "crossdepth/rng.hpp"

namespace crossdepth {

struct NamedParam {
  std::string name;
  Var var;  // shared handle; mutating through it updates the module
};

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

// Minimal module tree: owns parameters (trainable Vars) and buffers
// (non-trainable tensors such as batchnorm running stats), and knows its
// children so the whole tree can be walked with dotted names.
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<NamedParam> named_parameters() const;
  std::vector<NamedBuffer> named_buffers() const;
  std::int64_t parameter_count() const;
  void zero_grads() const;

 protected:
  Var& register_parameter(const std::string& name, Tensor init);
  Tensor& register_buffer(const std::string& name, Tensor init);
  void register_module(const std::string& name, Module& child);

 private:
  void collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) const;

  std::vector<std::pair<std::string, Var>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

class Linear : public Module {
 public:
  Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng);
  Var forward(const Var& x) const { return linear(x, weight_, bias_); }

 private:
  Var weight_, bias_;
};

class Conv2d : public Module {
 public:
  Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, std::int64_t stride,
         std::int64_t padding, Rng& rng, bool zero_init = false);
  Var forward(const Var& x) const { return conv2d(x, weight_, bias_, stride_, padding_); }

 private:
  Var weight_, bias_;
  std::int64_t stride_, padding_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(std::int64_t channels);
  Var forward(const Var& x, bool training) {
    return batchnorm2d(x, gamma_, beta_, running_mean_, running_var_, training);
  }

 private:
  Var gamma_, beta_;
  Tensor running_mean_, running_var_;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(std::int64_t dim);
  Var forward(const Var& x) const { return layernorm_lastdim(x, gamma_, beta_); }

 private:
  Var gamma_, beta_;
};

// conv -> batchnorm -> relu
class ConvBnRelu : public Module {
 public:
  ConvBnRelu(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, std::int64_t stride,
             std::int64_t padding, Rng& rng);
  Var forward(const Var& x, bool training) { return relu(bn_.forward(conv_.forward(x), training)); }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
};

}  // namespace crossdepth
