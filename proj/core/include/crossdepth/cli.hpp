#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crossdepth/trainer.hpp"

namespace crossdepth {

// Exit codes: 0 success, 2 usage/config error, 3 artifact/content error.
struct CommandResult {
  int exit_code = 0;
  std::vector<std::filesystem::path> artifacts_written;
};

struct SynthDataArgs {
  std::filesystem::path out_dir;
  std::int64_t train = 64;
  std::int64_t val = 16;
  std::int64_t test = 0;
  std::int64_t height = 96;
  std::int64_t width = 128;
  std::uint64_t seed = 0;
  double d_min = 0.5;
  double d_max = 10.0;
  double invalid_fraction = 0.05;
  std::int64_t primitives = 4;
};

struct TrainArgs {
  std::filesystem::path config_path;  // empty = all defaults
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  std::string split = "val";
  std::filesystem::path report_path;
  bool pixel_weighted = false;
};

struct AblateArgs {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::string grid = "1,2,7";        // row ids or '+'-joined flag sets
  std::filesystem::path config_path;  // optional base config
  std::uint64_t seed = 0;
};

struct PreviewArgs {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::int64_t count = 4;
  std::uint64_t seed = 0;
  std::string split = "train";
  double cutflip_prob = 0.5;
};

CommandResult cmd_synth_data(const SynthDataArgs& args, std::ostream& out, std::ostream& err);
CommandResult cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
CommandResult cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
CommandResult cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err);
CommandResult cmd_augment_preview(const PreviewArgs& args, std::ostream& out, std::ostream& err);

// JSON <-> TrainConfig. Parsing rejects unknown keys by name; serialization
// emits every field with defaults filled (the resolved-config echo).
TrainConfig parse_train_config(const std::string& json_text);
std::string serialize_train_config(const TrainConfig& cfg);

// Ablation grid parsing: each comma-separated token is either a row id (1-7)
// or a '+'-joined subset of {cd, up, cu, cf} ("none" for the baseline).
struct AblationRow {
  std::string label;
  AblationFlags flags;
};
std::vector<AblationRow> parse_ablation_grid(const std::string& grid);

}  // namespace crossdepth
