#include "crossdepth/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace crossdepth {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'D', 'C', 'K', 'P', 'T', '0', '1'};

json meta_to_json(const CheckpointMeta& meta) {
  json j;
  j["step"] = meta.step;
  j["epoch"] = meta.epoch;
  j["total_steps"] = meta.total_steps;
  j["seed"] = meta.seed;
  j["best_val_abs_rel"] = meta.best_val_abs_rel;
  j["model"] = json::parse(meta.model_config_json.empty() ? "{}" : meta.model_config_json);
  return j;
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta meta;
  meta.step = j.at("step").get<std::int64_t>();
  meta.epoch = j.at("epoch").get<std::int64_t>();
  meta.total_steps = j.at("total_steps").get<std::int64_t>();
  meta.seed = j.at("seed").get<std::uint64_t>();
  meta.best_val_abs_rel = j.at("best_val_abs_rel").get<double>();
  meta.model_config_json = j.at("model").dump();
  return meta;
}

void write_archive(const std::filesystem::path& path, const CheckpointMeta& meta,
                   const std::vector<TensorRecord>& tensors) {
  json manifest;
  manifest["meta"] = meta_to_json(meta);
  json arr = json::array();
  std::int64_t offset = 0;
  for (const auto& rec : tensors) {
    arr.push_back({{"name", rec.name},
                   {"group", rec.group},
                   {"kind", rec.kind},
                   {"shape", rec.shape},
                   {"dtype", "f64"},
                   {"offset", offset},
                   {"count", rec.data.numel()}});
    offset += rec.data.numel();
  }
  manifest["tensors"] = arr;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& rec : tensors)
    out.write(reinterpret_cast<const char*>(rec.data.data()),
              static_cast<std::streamsize>(rec.data.numel() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing checkpoint payload: " + path.string());
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& rec : tensors)
    if (rec.name == name) return &rec;
  return nullptr;
}

bool Checkpoint::has_group(const std::string& group) const {
  for (const auto& rec : tensors)
    if (rec.group == group) return true;
  return false;
}

std::string group_of(const std::string& tensor_name) {
  if (tensor_name.rfind("t.", 0) == 0) return "transformer";
  if (tensor_name.rfind("c.", 0) == 0) return "cnn";
  if (tensor_name.rfind("couple.", 0) == 0) return "coupling";
  if (tensor_name.rfind("optim.", 0) == 0) return "optim";
  throw std::invalid_argument("tensor name outside known groups: " + tensor_name);
}

void save_checkpoint(const std::filesystem::path& path, const DualModel& model,
                     const OptimSnapshot* optim, const CheckpointMeta& meta) {
  std::vector<TensorRecord> records;
  for (const auto& p : model.named_parameters())
    records.push_back({p.name, group_of(p.name), "param", p.var.value().shape(), p.var.value()});
  for (const auto& b : model.named_buffers())
    records.push_back({b.name, group_of(b.name), "buffer", b.tensor->shape(), *b.tensor});
  if (optim != nullptr) {
    for (const auto& [name, tensor] : optim->m)
      records.push_back({"optim.m." + name, "optim", "optim", tensor.shape(), tensor});
    for (const auto& [name, tensor] : optim->v)
      records.push_back({"optim.v." + name, "optim", "optim", tensor.shape(), tensor});
    records.push_back({"optim.t", "optim", "optim", {1},
                       Tensor::scalar(static_cast<double>(optim->t))});
  }
  write_archive(path, meta, records);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint archive: " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len))
    throw std::runtime_error("truncated checkpoint manifest: " + path.string());

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint manifest: " + std::string(e.what()));
  }

  Checkpoint ck;
  ck.meta = meta_from_json(manifest.at("meta"));
  for (const auto& entry : manifest.at("tensors")) {
    TensorRecord rec;
    rec.name = entry.at("name").get<std::string>();
    rec.group = entry.at("group").get<std::string>();
    rec.kind = entry.at("kind").get<std::string>();
    rec.shape = entry.at("shape").get<Shape>();
    const auto count = entry.at("count").get<std::int64_t>();
    if (count != shape_numel(rec.shape))
      throw std::runtime_error("checkpoint manifest count/shape mismatch for " + rec.name);
    Tensor t(rec.shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
      throw std::runtime_error("truncated checkpoint payload at " + rec.name);
    rec.data = std::move(t);
    ck.tensors.push_back(std::move(rec));
  }
  return ck;
}

namespace {

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (!dst.same_shape(src))
    throw std::runtime_error("checkpoint shape mismatch for " + name + ": " + src.shape_str() +
                             " vs model " + dst.shape_str());
  std::memcpy(dst.data(), src.data(), static_cast<std::size_t>(dst.numel()) * sizeof(double));
}

}  // namespace

void load_into_model(DualModel& model, const Checkpoint& checkpoint,
                     const std::set<std::string>& required_groups) {
  for (auto& p : model.named_parameters()) {
    const TensorRecord* rec = checkpoint.find(p.name);
    const std::string group = group_of(p.name);
    if (rec == nullptr) {
      if (required_groups.count(group))
        throw std::runtime_error("checkpoint is missing required tensor " + p.name);
      continue;
    }
    Var var = p.var;
    copy_into(var.mutable_value(), rec->data, p.name);
  }
  for (auto& b : model.named_buffers()) {
    const TensorRecord* rec = checkpoint.find(b.name);
    const std::string group = group_of(b.name);
    if (rec == nullptr) {
      if (required_groups.count(group))
        throw std::runtime_error("checkpoint is missing required tensor " + b.name);
      continue;
    }
    copy_into(*b.tensor, rec->data, b.name);
  }
}

std::optional<OptimSnapshot> optim_from_checkpoint(const Checkpoint& checkpoint) {
  OptimSnapshot snap;
  bool any = false;
  for (const auto& rec : checkpoint.tensors) {
    if (rec.group != "optim") continue;
    any = true;
    if (rec.name == "optim.t") {
      snap.t = static_cast<std::int64_t>(rec.data[0]);
    } else if (rec.name.rfind("optim.m.", 0) == 0) {
      snap.m[rec.name.substr(8)] = rec.data;
    } else if (rec.name.rfind("optim.v.", 0) == 0) {
      snap.v[rec.name.substr(8)] = rec.data;
    }
  }
  if (!any) return std::nullopt;
  return snap;
}

void filter_checkpoint(const std::filesystem::path& in, const std::filesystem::path& out,
                       const std::set<std::string>& keep_groups) {
  Checkpoint ck = read_checkpoint(in);
  std::vector<TensorRecord> kept;
  for (auto& rec : ck.tensors)
    if (keep_groups.count(rec.group)) kept.push_back(std::move(rec));
  write_archive(out, ck.meta, kept);
}

std::string serialize_model_config(const ModelConfig& cfg) {
  json j;
  j["dims_t"] = cfg.dims_t;
  j["dims_c"] = cfg.dims_c;
  j["num_heads"] = cfg.num_heads;
  j["window_size"] = cfg.window_size;
  j["blocks_per_stage"] = cfg.blocks_per_stage;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["d_min"] = cfg.depth_range.d_min;
  j["d_max"] = cfg.depth_range.d_max;
  j["coupling_enabled"] = cfg.coupling_enabled;
  j["uncertainty_head_enabled"] = cfg.uncertainty_head_enabled;
  return j.dump();
}

ModelConfig parse_model_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed model config: " + std::string(e.what()));
  }
  ModelConfig cfg;
  if (j.contains("dims_t")) cfg.dims_t = j.at("dims_t").get<std::array<std::int64_t, 4>>();
  if (j.contains("dims_c")) cfg.dims_c = j.at("dims_c").get<std::array<std::int64_t, 4>>();
  if (j.contains("num_heads"))
    cfg.num_heads = j.at("num_heads").get<std::array<std::int64_t, 4>>();
  if (j.contains("window_size")) cfg.window_size = j.at("window_size").get<std::int64_t>();
  if (j.contains("blocks_per_stage"))
    cfg.blocks_per_stage = j.at("blocks_per_stage").get<std::int64_t>();
  if (j.contains("mlp_ratio")) cfg.mlp_ratio = j.at("mlp_ratio").get<std::int64_t>();
  cfg.depth_range = DepthRange(j.value("d_min", cfg.depth_range.d_min),
                               j.value("d_max", cfg.depth_range.d_max));
  if (j.contains("coupling_enabled"))
    cfg.coupling_enabled = j.at("coupling_enabled").get<bool>();
  if (j.contains("uncertainty_head_enabled"))
    cfg.uncertainty_head_enabled = j.at("uncertainty_head_enabled").get<bool>();
  cfg.validate();
  return cfg;
}

}  // namespace crossdepth
