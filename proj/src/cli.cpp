/*
 * longiseg: longitudinal MS lesion segmentation toolkit
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "longiseg/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "longiseg/dataset.hpp"
#include "longiseg/infer.hpp"
#include "longiseg/metrics.hpp"
#include "longiseg/nn/checkpoint.hpp"
#include "longiseg/plot.hpp"
#include "longiseg/trainer.hpp"
#include "longiseg/volume_io.hpp"

namespace fs = std::filesystem;

namespace longiseg::cli {

namespace {

double now_unix() {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct CommonOpts {
  std::string config;
  std::string out;
  std::string device = "cpu";
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool config_required) {
  auto* cfg = cmd->add_option("--config", o.config, "JSON config file");
  if (config_required) cfg->required();
  cmd->add_option("--out", o.out, "output run directory")->required();
  cmd->add_option("--device", o.device,
                  "compute device (env LONGISEG_DEVICE overrides the default)");
  cmd->add_option("--seed", o.seed, "override the config seed")
      ->each([&o](const std::string&) { o.seed_given = true; });
  cmd->add_flag("--force", o.force, "allow writing into an existing run directory");
}

void check_device(const CommonOpts& o) {
  std::string device = o.device;
  if (const char* env = std::getenv("LONGISEG_DEVICE"); env && o.device == "cpu") {
    device = env;
  }
  if (device != "cpu") {
    throw ConfigError("device '" + device + "' is not available; this build is CPU-only");
  }
}

/// Claims the run directory; throws unless it is fresh or --force was given.
void claim_run_dir(const CommonOpts& o) {
  const fs::path manifest = fs::path(o.out) / "manifest.json";
  if (fs::exists(manifest) && !o.force) {
    throw ConfigError("run directory " + o.out +
                      " already contains a manifest; pass --force to overwrite");
  }
  fs::create_directories(o.out);
}

class ManifestWriter {
 public:
  ManifestWriter(const std::string& out_dir, const std::string& command,
                 const CommonOpts& opts, nlohmann::json config_echo)
      : path_(fs::path(out_dir) / "manifest.json") {
    j_["command"] = command;
    j_["config"] = std::move(config_echo);
    j_["seed"] = opts.seed_given ? nlohmann::json(opts.seed) : j_["config"].value("seed", nlohmann::json(0));
    j_["device"] = "cpu";
    j_["code_version"] = kCodeVersion;
    j_["started_unix"] = now_unix();
    j_["outputs"] = nlohmann::json::array();
    flush();
  }

  void add_output(const std::string& rel) { j_["outputs"].push_back(rel); }
  void set(const std::string& key, const nlohmann::json& v) { j_[key] = v; }

  void finish() {
    j_["finished_unix"] = now_unix();
    flush();
  }

 private:
  void flush() {
    std::ofstream out(path_);
    if (!out) throw std::runtime_error("cannot write " + path_.string());
    out << j_.dump(2) << "\n";
  }

  fs::path path_;
  nlohmann::json j_;
};

// -------------------------------------------------------------------------
// generate

int cmd_generate(const CommonOpts& opts) {
  check_device(opts);
  SynthConfig cfg = parse_synth_config(read_text_file(opts.config));
  if (opts.seed_given) cfg.seed = opts.seed;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  claim_run_dir(opts);
  ManifestWriter manifest(opts.out, "generate", opts,
                          nlohmann::json::parse(synth_config_json(cfg)));
  const DatasetManifest ds = write_dataset(opts.out, cfg);
  manifest.set("n_subjects", ds.n_subjects);
  manifest.set("split", {{"train", ds.train}, {"val", ds.val}, {"test", ds.test}});
  manifest.add_output("manifest.json");
  for (int i = 0; i < ds.n_subjects; ++i) manifest.add_output(subject_name(i));
  manifest.finish();
  std::cout << "generated " << ds.n_subjects << " subjects under " << opts.out
            << " (train " << ds.train.size() << " / val " << ds.val.size()
            << " / test " << ds.test.size() << ")\n";
  return 0;
}

// -------------------------------------------------------------------------
// train

struct TrainOpts {
  CommonOpts common;
  std::string data;
  std::string variant;
  std::string resume;
  int epochs = -1;
};

int cmd_train(const TrainOpts& t) {
  check_device(t.common);
  TrainConfig cfg;
  try {
    cfg = TrainConfig::from_json(read_text_file(t.common.config));
    if (!t.variant.empty()) {
      cfg.variant = nn::variant_from_string(t.variant);
      cfg.backbone.in_channels = nn::variant_input_channels(cfg.variant);
    }
    if (t.common.seed_given) cfg.seed = t.common.seed;
    if (t.epochs > 0) cfg.epochs = t.epochs;
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  if (!fs::exists(fs::path(t.data) / "manifest.json")) {
    throw std::runtime_error("dataset not found at " + t.data +
                             " (missing manifest.json); run generate first");
  }
  claim_run_dir(t.common);

  std::vector<LongitudinalSample> train_split = load_split(t.data, SplitName::train);
  std::vector<LongitudinalSample> val_split = load_split(t.data, SplitName::val);

  ManifestWriter manifest(t.common.out, "train", t.common,
                          nlohmann::json::parse(cfg.to_json()));
  manifest.set("data", t.data);
  if (!t.resume.empty()) manifest.set("resumed_from", t.resume);

  Trainer trainer(std::move(train_split), std::move(val_split), cfg);
  if (!t.resume.empty()) trainer.resume_from(t.resume);
  const Trainer::RunResult result = trainer.run(t.common.out);

  manifest.add_output("history.csv");
  manifest.add_output("val_history.csv");
  manifest.add_output("checkpoints/best.ckpt");
  manifest.add_output("checkpoints/last.ckpt");
  manifest.set("best_val_overall", result.best_val_overall);
  manifest.set("steps", trainer.step_index());
  manifest.finish();
  std::cout << "trained " << nn::to_string(cfg.variant) << " for "
            << trainer.step_index() << " steps; best validation overall score "
            << result.best_val_overall << "\n";
  return 0;
}

// -------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
  CommonOpts common;
  std::string data;
  std::string split = "test";
  std::vector<std::string> checkpoints;
  std::string expect_variant;
  double tau = 0.5;
  bool save_masks = false;
};

struct CheckpointEval {
  std::string path;
  std::string variant;
  MetricReport mean;
};

int cmd_evaluate(const EvaluateOpts& e) {
  check_device(e.common);
  if (e.checkpoints.empty()) throw ConfigError("evaluate: give at least one --checkpoint");
  const SplitName split = split_from_string(e.split);
  const DatasetManifest ds = read_manifest(e.data);
  const std::vector<std::string>& subjects = ds.split(split);
  if (subjects.empty()) throw std::runtime_error("split '" + e.split + "' is empty");
  claim_run_dir(e.common);

  nlohmann::json echo;
  echo["data"] = e.data;
  echo["split"] = e.split;
  echo["tau"] = e.tau;
  echo["checkpoints"] = e.checkpoints;
  echo["seed"] = 0;
  ManifestWriter manifest(e.common.out, "evaluate", e.common, echo);

  std::vector<LongitudinalSample> samples;
  for (const auto& id : subjects) {
    LongitudinalSample s = load_sample(e.data, id);
    normalize_sample(s);
    samples.push_back(std::move(s));
  }

  std::vector<CheckpointEval> rows;
  std::set<std::string> used_stems;
  for (const auto& ckpt_path : e.checkpoints) {
    nn::LoadedCheckpoint loaded = nn::load_checkpoint(ckpt_path);
    if (!e.expect_variant.empty() &&
        nn::variant_from_string(e.expect_variant) != loaded.model.variant()) {
      throw std::runtime_error("checkpoint " + ckpt_path + " holds variant '" +
                               nn::to_string(loaded.model.variant()) +
                               "', expected '" + e.expect_variant + "'");
    }
    ModelSliceNet net(loaded.model);
    std::string stem = fs::path(ckpt_path).stem().string() + "_" +
                       nn::to_string(loaded.model.variant());
    for (int suffix = 2; !used_stems.insert(stem).second; ++suffix) {
      stem = fs::path(ckpt_path).stem().string() + "_" +
             nn::to_string(loaded.model.variant()) + "_" + std::to_string(suffix);
    }
    const fs::path report_dir = fs::path(e.common.out) / "reports" / stem;
    fs::create_directories(report_dir);

    std::vector<MetricReport> reports;
    for (size_t i = 0; i < samples.size(); ++i) {
      const SegmentationResult seg = segment_subject(net, samples[i], e.tau);
      reports.push_back(compute_report(seg.mask, samples[i].gt_mask_ti));
      std::ofstream rj(report_dir / (subjects[i] + ".json"));
      rj << reports.back().to_json() << "\n";
      if (e.save_masks) {
        const fs::path mask_dir = fs::path(e.common.out) / "masks" / stem;
        fs::create_directories(mask_dir);
        write_mask_nifti((mask_dir / (subjects[i] + "_pred.nii.gz")).string(),
                         seg.mask);
        write_volume_nifti((mask_dir / (subjects[i] + "_prob.nii.gz")).string(),
                           seg.fused.data);
      }
    }
    std::ofstream csv(fs::path(e.common.out) / ("aggregate_" + stem + ".csv"));
    csv << reports_to_csv(subjects, reports);
    manifest.add_output("aggregate_" + stem + ".csv");

    rows.push_back({ckpt_path, nn::to_string(loaded.model.variant()),
                    average_reports(reports)});
  }

  std::stable_sort(rows.begin(), rows.end(),
                   [](const CheckpointEval& a, const CheckpointEval& b) {
                     return a.mean.overall > b.mean.overall;
                   });
  std::ostringstream table;
  table << "evaluated split '" << e.split << "' (" << subjects.size()
        << " subjects, tau=" << e.tau << "); metrics averaged per subject\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %-9s %-8s %-8s %-8s %-8s %-8s %s\n",
                "variant", "overall", "dsc", "ppv", "ltpr", "lfpr", "vd",
                "checkpoint");
  table << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line),
                  "%-12s %-9.4f %-8.4f %-8.4f %-8.4f %-8.4f %-8.4f %s\n",
                  r.variant.c_str(), r.mean.overall, r.mean.dsc, r.mean.ppv,
                  r.mean.ltpr, r.mean.lfpr, r.mean.vd, r.path.c_str());
    table << line;
  }
  std::ofstream tf(fs::path(e.common.out) / "comparison.txt");
  tf << table.str();
  manifest.add_output("comparison.txt");
  manifest.finish();
  std::cout << table.str();
  return 0;
}

// -------------------------------------------------------------------------
// segment

struct SegmentOpts {
  CommonOpts common;
  std::string data;
  std::string subject;
  std::string checkpoint;
  double tau = 0.5;
};

int cmd_segment(const SegmentOpts& s) {
  check_device(s.common);
  LongitudinalSample sample = load_sample(s.data, s.subject);
  normalize_sample(sample);
  nn::LoadedCheckpoint loaded = nn::load_checkpoint(s.checkpoint);
  claim_run_dir(s.common);

  nlohmann::json echo;
  echo["data"] = s.data;
  echo["subject"] = s.subject;
  echo["checkpoint"] = s.checkpoint;
  echo["tau"] = s.tau;
  echo["seed"] = 0;
  ManifestWriter manifest(s.common.out, "segment", s.common, echo);

  ModelSliceNet net(loaded.model);
  const SegmentationResult result = segment_subject(net, sample, s.tau);
  write_mask_nifti((fs::path(s.common.out) / "pred_mask.nii.gz").string(),
                   result.mask);
  write_volume_nifti((fs::path(s.common.out) / "fused_prob.nii.gz").string(),
                     result.fused.data);
  std::ofstream timing(fs::path(s.common.out) / "timing.json");
  timing << result.timing_json();
  manifest.add_output("pred_mask.nii.gz");
  manifest.add_output("fused_prob.nii.gz");
  manifest.add_output("timing.json");
  manifest.finish();
  std::cout << "segmented " << s.subject << " in " << result.seconds_total
            << " s\n";
  return 0;
}

// -------------------------------------------------------------------------
// plot

struct PlotOpts {
  std::string run;
  std::string out;
  bool force = false;
};

std::vector<LossPoint> parse_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<LossPoint> points;
  std::string header;
  std::getline(in, header);
  std::string row;
  while (std::getline(in, row)) {
    if (row.empty()) continue;
    LossPoint p;
    std::istringstream rs(row);
    std::string cell;
    std::getline(rs, cell, ',');
    p.step = std::stol(cell);
    std::getline(rs, cell, ',');
    p.total = std::stod(cell);
    std::getline(rs, cell, ',');
    p.seg = std::stod(cell);
    std::getline(rs, cell, ',');
    p.sim = std::stod(cell);
    std::getline(rs, cell, ',');
    p.smooth = std::stod(cell);
    points.push_back(p);
  }
  return points;
}

/// Axial slice index with the largest ground-truth area.
int best_gt_slice(const MaskVolume& gt) {
  int best = gt.depth() / 2;
  long best_area = -1;
  for (int d = 0; d < gt.depth(); ++d) {
    long area = 0;
    for (int h = 0; h < gt.height(); ++h)
      for (int w = 0; w < gt.width(); ++w) area += gt(d, h, w);
    if (area > best_area) {
      best_area = area;
      best = d;
    }
  }
  return best;
}

int cmd_plot(const PlotOpts& p) {
  const fs::path run(p.run);
  const fs::path out_dir = p.out.empty() ? run / "plots" : fs::path(p.out);
  if (!fs::exists(run / "manifest.json")) {
    throw std::runtime_error("no manifest.json in " + p.run);
  }
  nlohmann::json run_manifest;
  {
    std::ifstream mf(run / "manifest.json");
    mf >> run_manifest;
  }
  fs::create_directories(out_dir);
  int emitted = 0;

  if (fs::exists(run / "history.csv")) {
    const auto points = parse_history_csv((run / "history.csv").string());
    if (points.empty()) {
      throw std::runtime_error("history.csv in " + p.run + " has no steps");
    }
    write_loss_curve_png((out_dir / "loss_curve.png").string(), points);
    ++emitted;
  }

  // bar chart across the aggregate CSVs of an evaluation run
  std::vector<std::string> groups;
  std::vector<std::vector<double>> values;
  std::vector<std::string> metric_names = {"DSC", "PPV", "LTPR", "LFPR", "VD", "OS"};
  std::vector<fs::path> aggregates;
  for (const auto& entry : fs::directory_iterator(run)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("aggregate_", 0) == 0 && entry.path().extension() == ".csv") {
      aggregates.push_back(entry.path());
    }
  }
  std::sort(aggregates.begin(), aggregates.end());
  for (const auto& agg : aggregates) {
    std::ifstream in(agg);
    std::string row, mean_row;
    std::getline(in, row);  // header
    while (std::getline(in, row)) {
      if (row.rfind("mean,", 0) == 0) mean_row = row;
    }
    if (mean_row.empty()) continue;
    std::istringstream rs(mean_row);
    std::string cell;
    std::getline(rs, cell, ',');  // "mean"
    std::vector<double> vals;
    while (std::getline(rs, cell, ',')) vals.push_back(std::stod(cell));
    // csv order: dsc,ppv,ltpr,lfpr,vd,overall
    groups.push_back(agg.stem().string().substr(std::string("aggregate_").size()));
    values.push_back(vals);
  }
  if (!groups.empty()) {
    write_metric_bars_png((out_dir / "metric_bars.png").string(), groups,
                          metric_names, values);
    ++emitted;
  }

  // qualitative overlay for segment runs
  if (fs::exists(run / "pred_mask.nii.gz") && run_manifest.contains("config") &&
      run_manifest["config"].contains("data") &&
      run_manifest["config"].contains("subject")) {
    const std::string data = run_manifest["config"]["data"].get<std::string>();
    const std::string subject = run_manifest["config"]["subject"].get<std::string>();
    const LongitudinalSample sample = load_sample(data, subject);
    const MaskVolume pred = read_mask_nifti((run / "pred_mask.nii.gz").string());
    const int d = best_gt_slice(sample.gt_mask_ti);
    write_overlay_png((out_dir / "overlay.png").string(),
                      volume_slice(sample.flair_ti, SlicePlane::axial, d),
                      volume_slice(sample.gt_mask_ti, SlicePlane::axial, d),
                      volume_slice(pred, SlicePlane::axial, d));
    ++emitted;
  }

  if (emitted == 0) {
    throw std::runtime_error("nothing to plot in " + p.run +
                             " (no history.csv, aggregate CSVs or predictions)");
  }
  std::cout << "wrote " << emitted << " plot(s) to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args) {
  CLI::App app{"longiseg: longitudinal MS lesion segmentation toolkit"};
  app.require_subcommand(1);

  CommonOpts gen_opts;
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  add_common(gen, gen_opts, /*config_required=*/true);

  TrainOpts train_opts;
  auto* train = app.add_subcommand("train", "train a model variant");
  add_common(train, train_opts.common, /*config_required=*/true);
  train->add_option("--data", train_opts.data, "dataset directory")->required();
  train->add_option("--variant", train_opts.variant,
                    "static|longitudinal|multitask|siamese (overrides config)");
  train->add_option("--epochs", train_opts.epochs, "override epoch count");
  train->add_option("--resume", train_opts.resume, "checkpoint to resume from");

  EvaluateOpts eval_opts;
  auto* eval = app.add_subcommand("evaluate", "evaluate checkpoints on a split");
  add_common(eval, eval_opts.common, /*config_required=*/false);
  eval->add_option("--data", eval_opts.data, "dataset directory")->required();
  eval->add_option("--checkpoint", eval_opts.checkpoints, "checkpoint file (repeatable)")
      ->required();
  eval->add_option("--split", eval_opts.split, "train|val|test (default test)");
  eval->add_option("--tau", eval_opts.tau, "fusion threshold (default 0.5)");
  eval->add_option("--variant", eval_opts.expect_variant,
                   "fail unless checkpoints hold this variant");
  eval->add_flag("--save-masks", eval_opts.save_masks,
                 "write predicted masks and fused probabilities");

  SegmentOpts seg_opts;
  auto* segment = app.add_subcommand("segment", "segment one subject");
  add_common(segment, seg_opts.common, /*config_required=*/false);
  segment->add_option("--data", seg_opts.data, "dataset directory")->required();
  segment->add_option("--subject", seg_opts.subject, "subject id")->required();
  segment->add_option("--checkpoint", seg_opts.checkpoint, "checkpoint file")
      ->required();
  segment->add_option("--tau", seg_opts.tau, "fusion threshold (default 0.5)");

  PlotOpts plot_opts;
  auto* plot = app.add_subcommand("plot", "emit plots for a run directory");
  plot->add_option("--run", plot_opts.run, "run directory to plot")->required();
  plot->add_option("--out", plot_opts.out, "plot output directory (default <run>/plots)");
  plot->add_flag("--force", plot_opts.force, "accepted for interface symmetry");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_opts);
    if (train->parsed()) return cmd_train(train_opts);
    if (eval->parsed()) return cmd_evaluate(eval_opts);
    if (segment->parsed()) return cmd_segment(seg_opts);
    if (plot->parsed()) return cmd_plot(plot_opts);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace longiseg::cli
