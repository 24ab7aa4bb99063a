#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "crossdepth/model.hpp"

namespace crossdepth {

// Optimizer moments keyed by parameter name, stored alongside the model so
// training can resume exactly.
struct OptimSnapshot {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t t = 0;
};

struct CheckpointMeta {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::int64_t total_steps = 0;
  std::uint64_t seed = 0;
  double best_val_abs_rel = -1.0;  // negative = not evaluated yet
  std::string model_config_json;   // enough to rebuild the network at load time
};

// One tensor entry of the archive manifest. `group` marks ownership:
// transformer / cnn / coupling for model tensors, optim for moments.
struct TensorRecord {
  std::string name;
  std::string group;
  std::string kind;  // "param" | "buffer" | "optim"
  Shape shape;
  Tensor data;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
  bool has_group(const std::string& group) const;
};

// Maps a parameter/buffer name prefix (t. / c. / couple.) to its group tag.
std::string group_of(const std::string& tensor_name);

// Single-file archive: magic, JSON manifest, raw float64 payload.
void save_checkpoint(const std::filesystem::path& path, const DualModel& model,
                     const OptimSnapshot* optim, const CheckpointMeta& meta);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies tensor values into an existing model. Every parameter whose group
// is in `required_groups` must be present; tensors of other groups are
// loaded when available and left at initialization otherwise.
void load_into_model(DualModel& model, const Checkpoint& checkpoint,
                     const std::set<std::string>& required_groups);

std::optional<OptimSnapshot> optim_from_checkpoint(const Checkpoint& checkpoint);

// Rewrites an archive keeping only the listed groups (used to strip training
// branches from an inference artifact).
void filter_checkpoint(const std::filesystem::path& in, const std::filesystem::path& out,
                       const std::set<std::string>& keep_groups);

std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& json_text);

}  // namespace crossdepth
