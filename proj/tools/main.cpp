#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "crossdepth/cli.hpp"

namespace {

// Parses "HxW" into (height, width).
bool parse_size(const std::string& text, std::int64_t& h, std::int64_t& w) {
  const auto x = text.find('x');
  if (x == std::string::npos) return false;
  try {
    h = std::stoll(text.substr(0, x));
    w = std::stoll(text.substr(x + 1));
  } catch (const std::exception&) {
    return false;
  }
  return h > 0 && w > 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crossdepth: two-branch cross-distilled monocular depth estimation"};
  app.require_subcommand(1);

  crossdepth::SynthDataArgs synth;
  std::string synth_size = "96x128";
  auto* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic RGB-D dataset");
  synth_cmd->add_option("--out", synth.out_dir, "output dataset directory")->required();
  synth_cmd->add_option("--train", synth.train, "number of training samples");
  synth_cmd->add_option("--val", synth.val, "number of validation samples");
  synth_cmd->add_option("--test", synth.test, "number of test samples");
  synth_cmd->add_option("--size", synth_size, "sample size as HxW");
  synth_cmd->add_option("--seed", synth.seed, "generation seed");
  synth_cmd->add_option("--d-min", synth.d_min, "lower depth cap (m)");
  synth_cmd->add_option("--d-max", synth.d_max, "upper depth cap (m)");
  synth_cmd->add_option("--invalid-frac", synth.invalid_fraction, "fraction of invalid pixels");
  synth_cmd->add_option("--primitives", synth.primitives, "random primitives per scene");

  crossdepth::TrainArgs train;
  std::string resume_path;
  auto* train_cmd = app.add_subcommand("train", "train the two-branch model");
  train_cmd->add_option("--config", train.config_path, "JSON training config");
  train_cmd->add_option("--data", train.data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", train.out_dir, "run output directory")->required();
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

  crossdepth::EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "transformer-only evaluation of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint archive")->required();
  eval_cmd->add_option("--data", eval.data_dir, "dataset directory")->required();
  eval_cmd->add_option("--split", eval.split, "split to evaluate (train/val/test)");
  eval_cmd->add_option("--report", eval.report_path, "metric report JSON path")->required();
  eval_cmd->add_flag("--pixel-weighted", eval.pixel_weighted,
                     "aggregate metrics weighted by valid-pixel count");

  crossdepth::AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "train a grid of component combinations");
  ablate_cmd->add_option("--data", ablate.data_dir, "dataset directory")->required();
  ablate_cmd->add_option("--out", ablate.out_dir, "output directory")->required();
  ablate_cmd->add_option("--grid", ablate.grid, "rows: ids 1-7 or '+'-joined {cd,up,cu,cf}");
  ablate_cmd->add_option("--config", ablate.config_path, "base JSON training config");
  ablate_cmd->add_option("--seed", ablate.seed, "shared seed for every row");

  crossdepth::PreviewArgs preview;
  auto* preview_cmd = app.add_subcommand("augment-preview", "write before/after CutFlip pairs");
  preview_cmd->add_option("--data", preview.data_dir, "dataset directory")->required();
  preview_cmd->add_option("--out", preview.out_dir, "output directory")->required();
  preview_cmd->add_option("--n", preview.count, "number of samples");
  preview_cmd->add_option("--seed", preview.seed, "draw seed");
  preview_cmd->add_option("--split", preview.split, "source split");
  preview_cmd->add_option("--cutflip-prob", preview.cutflip_prob, "application probability");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  crossdepth::CommandResult result;
  if (synth_cmd->parsed()) {
    if (!parse_size(synth_size, synth.height, synth.width)) {
      std::cerr << "error: --size must look like 96x128\n";
      return 2;
    }
    result = crossdepth::cmd_synth_data(synth, std::cout, std::cerr);
  } else if (train_cmd->parsed()) {
    if (!resume_path.empty()) train.resume = resume_path;
    result = crossdepth::cmd_train(train, std::cout, std::cerr);
  } else if (eval_cmd->parsed()) {
    result = crossdepth::cmd_eval(eval, std::cout, std::cerr);
  } else if (ablate_cmd->parsed()) {
    result = crossdepth::cmd_ablate(ablate, std::cout, std::cerr);
  } else if (preview_cmd->parsed()) {
    result = crossdepth::cmd_augment_preview(preview, std::cout, std::cerr);
  }
  return result.exit_code;
}
