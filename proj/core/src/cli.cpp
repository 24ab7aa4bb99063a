#include "crossdepth/cli.hpp"

#include <json.hpp>

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace crossdepth {

namespace {

using nlohmann::json;

void check_known_keys(const json& obj, const std::set<std::string>& known,
                      const std::string& scope) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!known.count(key))
      throw std::invalid_argument("unknown config key: " + (scope.empty() ? key : scope + "." + key));
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed config JSON: " + std::string(e.what()));
  }
  static const std::set<std::string> known = {
      "epochs",        "batch_size",     "lr_start",         "lr_end",
      "poly_power",    "lambda1",        "lambda2",          "kappa",
      "eta",           "b",              "cross_distill",    "uncertainty_rectify",
      "coupling",      "cutflip",        "seed",             "d_min",
      "d_max",         "urcd_on_valid_only", "grad_clip_norm", "eval_every_epochs",
      "cutflip_prob",  "hflip_prob",     "color_jitter_strength",
      "crop_h",        "crop_w",         "model"};
  check_known_keys(j, known, "");

  TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr_start = j.value("lr_start", cfg.lr_start);
  cfg.lr_end = j.value("lr_end", cfg.lr_end);
  cfg.poly_power = j.value("poly_power", cfg.poly_power);
  cfg.weights.lambda1 = j.value("lambda1", cfg.weights.lambda1);
  cfg.weights.lambda2 = j.value("lambda2", cfg.weights.lambda2);
  cfg.weights.kappa = j.value("kappa", cfg.weights.kappa);
  cfg.weights.eta = j.value("eta", cfg.weights.eta);
  cfg.weights.b = j.value("b", cfg.weights.b);
  cfg.ablation.cross_distill = j.value("cross_distill", cfg.ablation.cross_distill);
  cfg.ablation.uncertainty_rectify =
      j.value("uncertainty_rectify", cfg.ablation.uncertainty_rectify);
  cfg.ablation.coupling = j.value("coupling", cfg.ablation.coupling);
  cfg.ablation.cutflip = j.value("cutflip", cfg.ablation.cutflip);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.depth_range = DepthRange(j.value("d_min", cfg.depth_range.d_min),
                               j.value("d_max", cfg.depth_range.d_max));
  cfg.urcd_on_valid_only = j.value("urcd_on_valid_only", cfg.urcd_on_valid_only);
  cfg.grad_clip_norm = j.value("grad_clip_norm", cfg.grad_clip_norm);
  cfg.eval_every_epochs = j.value("eval_every_epochs", cfg.eval_every_epochs);
  cfg.augment.cutflip_prob = j.value("cutflip_prob", cfg.augment.cutflip_prob);
  cfg.augment.hflip_prob = j.value("hflip_prob", cfg.augment.hflip_prob);
  cfg.augment.color_jitter_strength =
      j.value("color_jitter_strength", cfg.augment.color_jitter_strength);
  cfg.augment.crop_h = j.value("crop_h", cfg.augment.crop_h);
  cfg.augment.crop_w = j.value("crop_w", cfg.augment.crop_w);

  if (j.contains("model")) {
    static const std::set<std::string> model_known = {
        "dims_t", "dims_c", "num_heads", "window_size", "blocks_per_stage",
        "mlp_ratio", "uncertainty_head_enabled"};
    check_known_keys(j.at("model"), model_known, "model");
    const json& m = j.at("model");
    if (m.contains("dims_t")) cfg.model.dims_t = m.at("dims_t").get<std::array<std::int64_t, 4>>();
    if (m.contains("dims_c")) cfg.model.dims_c = m.at("dims_c").get<std::array<std::int64_t, 4>>();
    if (m.contains("num_heads"))
      cfg.model.num_heads = m.at("num_heads").get<std::array<std::int64_t, 4>>();
    cfg.model.window_size = m.value("window_size", cfg.model.window_size);
    cfg.model.blocks_per_stage = m.value("blocks_per_stage", cfg.model.blocks_per_stage);
    cfg.model.mlp_ratio = m.value("mlp_ratio", cfg.model.mlp_ratio);
    cfg.model.uncertainty_head_enabled =
        m.value("uncertainty_head_enabled", cfg.model.uncertainty_head_enabled);
  }
  cfg.resolve();
  return cfg;
}

std::string serialize_train_config(const TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr_start"] = cfg.lr_start;
  j["lr_end"] = cfg.lr_end;
  j["poly_power"] = cfg.poly_power;
  j["lambda1"] = cfg.weights.lambda1;
  j["lambda2"] = cfg.weights.lambda2;
  j["kappa"] = cfg.weights.kappa;
  j["eta"] = cfg.weights.eta;
  j["b"] = cfg.weights.b;
  j["cross_distill"] = cfg.ablation.cross_distill;
  j["uncertainty_rectify"] = cfg.ablation.uncertainty_rectify;
  j["coupling"] = cfg.ablation.coupling;
  j["cutflip"] = cfg.ablation.cutflip;
  j["seed"] = cfg.seed;
  j["d_min"] = cfg.depth_range.d_min;
  j["d_max"] = cfg.depth_range.d_max;
  j["urcd_on_valid_only"] = cfg.urcd_on_valid_only;
  j["grad_clip_norm"] = cfg.grad_clip_norm;
  j["eval_every_epochs"] = cfg.eval_every_epochs;
  j["cutflip_prob"] = cfg.augment.cutflip_prob;
  j["hflip_prob"] = cfg.augment.hflip_prob;
  j["color_jitter_strength"] = cfg.augment.color_jitter_strength;
  j["crop_h"] = cfg.augment.crop_h;
  j["crop_w"] = cfg.augment.crop_w;
  j["model"] = {{"dims_t", cfg.model.dims_t},
                {"dims_c", cfg.model.dims_c},
                {"num_heads", cfg.model.num_heads},
                {"window_size", cfg.model.window_size},
                {"blocks_per_stage", cfg.model.blocks_per_stage},
                {"mlp_ratio", cfg.model.mlp_ratio},
                {"uncertainty_head_enabled", cfg.model.uncertainty_head_enabled}};
  return j.dump();
}

std::vector<AblationRow> parse_ablation_grid(const std::string& grid) {
  static const std::array<std::pair<const char*, AblationFlags>, 7> presets = {{
      {"1", {false, false, false, false}},
      {"2", {true, false, false, false}},
      {"3", {true, true, false, false}},
      {"4", {true, false, true, false}},
      {"5", {true, true, true, false}},
      {"6", {false, false, false, true}},
      {"7", {true, true, true, true}},
  }};
  std::vector<AblationRow> rows;
  std::stringstream ss(grid);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    AblationRow row;
    bool preset_hit = false;
    for (const auto& [id, flags] : presets) {
      if (token == id) {
        row.flags = flags;
        row.label = std::string("id") + id;
        preset_hit = true;
        break;
      }
    }
    if (!preset_hit) {
      AblationFlags flags{false, false, false, false};
      if (token != "none") {
        std::stringstream fs(token);
        std::string flag;
        while (std::getline(fs, flag, '+')) {
          if (flag == "cd") flags.cross_distill = true;
          else if (flag == "up") flags.uncertainty_rectify = true;
          else if (flag == "cu") flags.coupling = true;
          else if (flag == "cf") flags.cutflip = true;
          else throw std::invalid_argument("unknown ablation token: " + flag);
        }
      }
      row.flags = flags;
      row.label = token;
    }
    if (row.flags.uncertainty_rectify && !row.flags.cross_distill)
      throw std::invalid_argument("invalid ablation combination (up requires cd): " + token);
    rows.push_back(row);
  }
  if (rows.empty()) throw std::invalid_argument("empty ablation grid");
  return rows;
}

// ---------------------------------------------------------------------------
// Commands

CommandResult cmd_synth_data(const SynthDataArgs& args, std::ostream& out, std::ostream& err) {
  CommandResult result;
  try {
    if (args.train <= 0) {
      err << "error: empty split (--train must be >= 1)\n";
      result.exit_code = 2;
      return result;
    }
    SynthDatasetOptions options;
    options.train_count = args.train;
    options.val_count = args.val;
    options.test_count = args.test;
    options.scene.height = args.height;
    options.scene.width = args.width;
    options.scene.seed = args.seed;
    options.scene.depth_range = DepthRange(args.d_min, args.d_max);
    options.scene.invalid_fraction = args.invalid_fraction;
    options.scene.num_primitives = args.primitives;
    options.scene.validate();

    json resolved;
    resolved["out"] = args.out_dir.string();
    resolved["train"] = args.train;
    resolved["val"] = args.val;
    resolved["test"] = args.test;
    resolved["size"] = std::to_string(args.height) + "x" + std::to_string(args.width);
    resolved["seed"] = args.seed;
    resolved["d_min"] = args.d_min;
    resolved["d_max"] = args.d_max;
    resolved["invalid_fraction"] = args.invalid_fraction;
    resolved["primitives"] = args.primitives;
    out << "resolved_config: " << resolved.dump() << "\n";

    std::filesystem::create_directories(args.out_dir);
    DatasetManifest manifest = generate_dataset(args.out_dir, options);
    result.artifacts_written.push_back(args.out_dir / "manifest.json");
    out << "wrote " << manifest.train.size() << " train / " << manifest.val.size() << " val / "
        << manifest.test.size() << " test samples under " << args.out_dir.string() << "\n";
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = 2;  // generation failures here are config/environment problems
  }
  return result;
}

CommandResult cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  CommandResult result;
  TrainConfig cfg;
  try {
    if (!args.config_path.empty()) cfg = parse_train_config(read_text_file(args.config_path));
    else cfg.resolve();
    if (!std::filesystem::exists(args.data_dir / "manifest.json")) {
      err << "error: missing dataset manifest in " << args.data_dir.string() << "\n";
      result.exit_code = 2;
      return result;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = 2;
    return result;
  }

  try {
    out << "resolved_config: " << serialize_train_config(cfg) << "\n";
    std::filesystem::create_directories(args.out_dir);
    {
      std::ofstream rc(args.out_dir / "resolved_config.json");
      rc << serialize_train_config(cfg) << "\n";
    }
    result.artifacts_written.push_back(args.out_dir / "resolved_config.json");

    DatasetManifest manifest = read_manifest(args.data_dir);
    Trainer trainer(cfg);
    FitResult fit = trainer.fit(args.data_dir, manifest, args.out_dir, args.resume);
    result.artifacts_written.push_back(fit.log_path);
    result.artifacts_written.push_back(fit.last_checkpoint);
    result.artifacts_written.push_back(fit.best_checkpoint);
    out << "trained " << fit.steps_run << " steps; best val abs_rel = " << fit.best_val_abs_rel
        << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = 3;
  }
  return result;
}

namespace {

void write_metric_csv_header(std::ostream& os) {
  os << "id";
  MetricReport dummy;
  for (const auto& [name, value] : metric_entries(dummy)) {
    (void)value;
    os << "," << name;
  }
  os << ",pixel_count\n";
}

void write_metric_csv_row(std::ostream& os, const std::string& id, const MetricReport& r) {
  os << id;
  char buf[32];
  for (const auto& [name, value] : metric_entries(r)) {
    (void)name;
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    os << "," << buf;
  }
  os << "," << r.pixel_count << "\n";
}

}  // namespace

CommandResult cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  CommandResult result;
  if (!std::filesystem::exists(args.checkpoint)) {
    err << "error: missing checkpoint " << args.checkpoint.string() << "\n";
    result.exit_code = 2;
    return result;
  }
  if (!std::filesystem::exists(args.data_dir / "manifest.json")) {
    err << "error: missing dataset manifest in " << args.data_dir.string() << "\n";
    result.exit_code = 2;
    return result;
  }

  json resolved;
  resolved["checkpoint"] = args.checkpoint.string();
  resolved["data"] = args.data_dir.string();
  resolved["split"] = args.split;
  resolved["report"] = args.report_path.string();
  resolved["pixel_weighted"] = args.pixel_weighted;
  out << "resolved_config: " << resolved.dump() << "\n";

  try {
    Checkpoint ck = read_checkpoint(args.checkpoint);
    if (!ck.has_group("transformer")) {
      err << "error: checkpoint lacks the transformer subset\n";
      result.exit_code = 3;
      return result;
    }
    ModelConfig model_cfg = parse_model_config(ck.meta.model_config_json);
    Rng rng(Rng::mix(ck.meta.seed, 0x1417ull));
    DualModel model(model_cfg, rng);
    load_into_model(model, ck, {"transformer"});

    DatasetManifest manifest = read_manifest(args.data_dir);
    std::vector<Sample> samples = load_split(args.data_dir, manifest, args.split);
    if (samples.empty()) {
      err << "error: empty split " << args.split << "\n";
      result.exit_code = 2;
      return result;
    }

    std::vector<MetricReport> reports;
    std::filesystem::path csv_path = args.report_path;
    csv_path.replace_extension(".csv");
    std::ofstream csv(csv_path);
    write_metric_csv_header(csv);
    for (const auto& s : samples) {
      BranchOutput pred = run_inference(model, s.image);
      ValidMask mask = valid_mask_of(s.gt_depth, model_cfg.depth_range);
      reports.push_back(evaluate(pred.depth, s.gt_depth, mask));
      write_metric_csv_row(csv, s.id, reports.back());
    }
    const MetricReport agg = aggregate(
        reports, args.pixel_weighted ? Aggregation::kPixelWeighted : Aggregation::kImageAveraged);

    json report;
    for (const auto& [name, value] : metric_entries(agg)) report[name] = value;
    report["pixel_count"] = agg.pixel_count;
    report["images"] = reports.size();
    std::ofstream rp(args.report_path);
    rp << report.dump(2) << "\n";
    result.artifacts_written.push_back(args.report_path);
    result.artifacts_written.push_back(csv_path);
    out << "eval " << args.split << ": abs_rel=" << agg.abs_rel << " rmse=" << agg.rmse
        << " delta1=" << agg.delta1 << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = 3;
  }
  return result;
}

CommandResult cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err) {
  CommandResult result;
  std::vector<AblationRow> rows;
  TrainConfig base;
  try {
    rows = parse_ablation_grid(args.grid);
    if (!args.config_path.empty()) base = parse_train_config(read_text_file(args.config_path));
    else base.resolve();
    if (!std::filesystem::exists(args.data_dir / "manifest.json"))
      throw std::invalid_argument("missing dataset manifest in " + args.data_dir.string());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = 2;
    return result;
  }

  try {
    json resolved;
    resolved["grid"] = args.grid;
    resolved["seed"] = args.seed;
    resolved["base_config"] = json::parse(serialize_train_config(base));
    out << "resolved_config: " << resolved.dump() << "\n";

    std::filesystem::create_directories(args.out_dir);
    DatasetManifest manifest = read_manifest(args.data_dir);
    if (manifest.val.empty()) throw std::invalid_argument("ablation needs a non-empty val split");

    const std::filesystem::path csv_path = args.out_dir / "ablation.csv";
    std::ofstream csv(csv_path);
    csv << "row,label,cd,up,cu,cf,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,silog\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      TrainConfig cfg = base;
      cfg.ablation = rows[i].flags;
      cfg.seed = args.seed;
      cfg.resolve();
      Trainer trainer(cfg);
      const std::filesystem::path run_dir = args.out_dir / ("row_" + std::to_string(i) + "_" +
                                                            rows[i].label);
      trainer.fit(args.data_dir, manifest, run_dir);
      std::vector<Sample> val = load_split(args.data_dir, manifest, "val");
      const MetricReport report = trainer.evaluate_samples(val);
      char buf[512];
      std::snprintf(buf, sizeof(buf), "%zu,%s,%d,%d,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f",
                    i, rows[i].label.c_str(), rows[i].flags.cross_distill ? 1 : 0,
                    rows[i].flags.uncertainty_rectify ? 1 : 0, rows[i].flags.coupling ? 1 : 0,
                    rows[i].flags.cutflip ? 1 : 0, report.abs_rel, report.sq_rel, report.rmse,
                    report.rmse_log, report.delta1, report.delta2, report.delta3, report.silog);
      csv << buf << "\n";
      out << "row " << i << " (" << rows[i].label << "): val abs_rel=" << report.abs_rel
          << " rmse=" << report.rmse << "\n";
    }
    result.artifacts_written.push_back(csv_path);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = 3;
  }
  return result;
}

CommandResult cmd_augment_preview(const PreviewArgs& args, std::ostream& out, std::ostream& err) {
  CommandResult result;
  if (!std::filesystem::exists(args.data_dir / "manifest.json")) {
    err << "error: missing dataset manifest in " << args.data_dir.string() << "\n";
    result.exit_code = 2;
    return result;
  }
  try {
    json resolved;
    resolved["data"] = args.data_dir.string();
    resolved["out"] = args.out_dir.string();
    resolved["n"] = args.count;
    resolved["seed"] = args.seed;
    resolved["split"] = args.split;
    resolved["cutflip_prob"] = args.cutflip_prob;
    out << "resolved_config: " << resolved.dump() << "\n";

    DatasetManifest manifest = read_manifest(args.data_dir);
    std::vector<Sample> samples = load_split(args.data_dir, manifest, args.split);
    if (samples.empty()) throw std::invalid_argument("empty split " + args.split);

    std::filesystem::create_directories(args.out_dir);
    json sidecar = json::array();
    const std::int64_t n = std::min<std::int64_t>(args.count,
                                                  static_cast<std::int64_t>(samples.size()));
    for (std::int64_t i = 0; i < n; ++i) {
      const Sample& s = samples[static_cast<std::size_t>(i)];
      Rng rng(Rng::mix(args.seed, static_cast<std::uint64_t>(i)));
      CutFlipResult cf = cutflip(s.image, s.gt_depth, args.cutflip_prob, rng);
      write_ppm(args.out_dir / (s.id + "_before.ppm"), s.image);
      write_pfm(args.out_dir / (s.id + "_before.pfm"), s.gt_depth);
      write_ppm(args.out_dir / (s.id + "_after.ppm"), cf.image);
      write_pfm(args.out_dir / (s.id + "_after.pfm"), cf.gt);
      json entry;
      entry["id"] = s.id;
      entry["applied"] = cf.applied;
      entry["height"] = s.image.height();
      if (cf.cut_row.has_value()) entry["cut_row"] = *cf.cut_row;
      sidecar.push_back(entry);
    }
    const std::filesystem::path sidecar_path = args.out_dir / "preview.json";
    std::ofstream sp(sidecar_path);
    sp << sidecar.dump(2) << "\n";
    result.artifacts_written.push_back(sidecar_path);
    out << "wrote " << n << " before/after pairs under " << args.out_dir.string() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = 3;
  }
  return result;
}

}  // namespace crossdepth
