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

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "longiseg/cli.hpp"
#include "longiseg/metrics.hpp"
#include "longiseg/plot.hpp"
#include "test_helpers.hpp"

using namespace longiseg;
using longiseg::testing::TempDir;

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

const char* kGenConfig = R"({
  "shape": [24, 24, 24], "n_subjects": 3,
  "lesion_count_range": [1, 2], "lesion_radius_range_vox": [1.2, 1.8],
  "noise_sigma": 0.02, "warp_amplitude_vox": 0.75, "seed": 5
})";

const char* kTrainConfig = R"({
  "variant": "multitask",
  "backbone": {"first_conv_channels": 8, "growth_rate": 4,
               "layers_per_dense_block": 1, "n_pool": 2,
               "dropout_rate": 0.1, "bottleneck_layers": 1},
  "loss": {"lambda_smooth": 0.01, "seg_loss": "mse", "beta": 1.5},
  "learning_rate": 1e-3, "batch_size": 2, "epochs": 1, "steps_per_epoch": 4,
  "seed": 3, "val_every": 1, "slice_sampling": "lesion_biased", "threshold": 0.5
})";

/// One shared pipeline fixture: dataset + one short multitask training run.
struct Pipeline {
  TempDir tmp{"cli"};
  std::string data, run;

  Pipeline() {
    data = tmp.sub("data");
    run = tmp.sub("run");
    write_file(tmp.sub("gen.json"), kGenConfig);
    write_file(tmp.sub("train.json"), kTrainConfig);
    REQUIRE(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out", data}) == 0);
    REQUIRE(cli::run({"train", "--config", tmp.sub("train.json"), "--data", data,
                      "--out", run}) == 0);
  }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("generate writes the dataset, the split and a manifest") {
  TempDir tmp("cli_gen");
  write_file(tmp.sub("gen.json"), kGenConfig);
  CHECK(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out",
                  tmp.sub("data")}) == 0);
  for (const char* f :
       {"manifest.json", "subj000/t0/T1.nii.gz", "subj000/t0/FLAIR.nii.gz",
        "subj000/t1/T1.nii.gz", "subj001/gt_mask_t0.nii.gz",
        "subj002/gt_field.raw"}) {
    CHECK(std::filesystem::exists(tmp.path() / "data" / f));
  }
  const auto manifest = nlohmann::json::parse(read_file(tmp.sub("data/manifest.json")));
  CHECK(manifest["split"]["train"].size() == 1);
  CHECK(manifest["split"]["val"].size() == 1);
  CHECK(manifest["split"]["test"].size() == 1);
}

TEST_CASE("generate with an all-defaults config yields 7 subjects split 3/1/3") {
  TempDir tmp("cli_defaults");
  write_file(tmp.sub("gen.json"), "{}");
  REQUIRE(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out",
                    tmp.sub("data")}) == 0);
  const auto manifest = nlohmann::json::parse(read_file(tmp.sub("data/manifest.json")));
  CHECK(manifest["n_subjects"].get<int>() == 7);
  CHECK(manifest["split"]["train"].size() == 3);
  CHECK(manifest["split"]["val"].size() == 1);
  CHECK(manifest["split"]["test"].size() == 3);
  int subject_dirs = 0;
  for (const auto& e : std::filesystem::directory_iterator(tmp.sub("data"))) {
    subject_dirs += e.is_directory();
  }
  CHECK(subject_dirs == 7);
}

TEST_CASE("generate is deterministic: same seed, identical bytes") {
  TempDir tmp("cli_det");
  write_file(tmp.sub("gen.json"), kGenConfig);
  REQUIRE(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out",
                    tmp.sub("a")}) == 0);
  REQUIRE(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out",
                    tmp.sub("b")}) == 0);
  for (const char* f : {"subj000/t0/T1.nii.gz", "subj001/t1/FLAIR.nii.gz",
                        "subj002/gt_mask_t0.nii.gz", "subj000/gt_field.raw"}) {
    CHECK(read_file((tmp.path() / "a" / f).string()) ==
          read_file((tmp.path() / "b" / f).string()));
  }
}

TEST_CASE("generate rejects an invalid change profile with exit code 2") {
  TempDir tmp("cli_bad");
  write_file(tmp.sub("gen.json"), R"({
    "shape": [24, 24, 24], "n_subjects": 3,
    "change_profile": {"grow": 0.5, "shrink": 0.5, "appear": 0.2,
                        "disappear": 0.0, "static": 0.0}
  })");
  CHECK(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out",
                  tmp.sub("data")}) == 2);
}

TEST_CASE("a run directory is never overwritten without --force") {
  TempDir tmp("cli_force");
  write_file(tmp.sub("gen.json"), kGenConfig);
  REQUIRE(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out",
                    tmp.sub("d")}) == 0);
  CHECK(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out",
                  tmp.sub("d")}) == 2);
  CHECK(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out",
                  tmp.sub("d"), "--force"}) == 0);
}

TEST_CASE("training against a missing dataset is a runtime failure") {
  TempDir tmp("cli_miss");
  write_file(tmp.sub("train.json"), kTrainConfig);
  CHECK(cli::run({"train", "--config", tmp.sub("train.json"), "--data",
                  tmp.sub("nowhere"), "--out", tmp.sub("run")}) == 1);
}

TEST_CASE("unknown device is a config failure") {
  TempDir tmp("cli_dev");
  write_file(tmp.sub("gen.json"), kGenConfig);
  CHECK(cli::run({"generate", "--config", tmp.sub("gen.json"), "--out",
                  tmp.sub("d"), "--device", "cuda:0"}) == 2);
}

TEST_CASE("the full pipeline: train, evaluate, segment, plot") {
  Pipeline p;

  SUBCASE("history has one row per step and the multitask loss columns") {
    const std::string hist = read_file(p.run + "/history.csv");
    CHECK(hist.rfind("step,L_total,L_seg,L_sim,L_smooth\n", 0) == 0);
    CHECK(count_lines(hist) == 1 + 4);  // header + steps
  }

  SUBCASE("resume continues the step counter") {
    const std::string resumed = p.tmp.sub("resumed");
    write_file(p.tmp.sub("train2.json"), kTrainConfig);
    REQUIRE(cli::run({"train", "--config", p.tmp.sub("train2.json"), "--data",
                      p.data, "--out", resumed, "--resume",
                      p.run + "/checkpoints/last.ckpt", "--epochs", "2"}) == 0);
    std::ifstream hist(resumed + "/history.csv");
    std::string header, first;
    std::getline(hist, header);
    std::getline(hist, first);
    CHECK(first.rfind("5,", 0) == 0);  // picks up after the 4 completed steps
  }

  SUBCASE("evaluate writes sorted comparison, reports and a consistent mean") {
    const std::string eval_dir = p.tmp.sub("eval");
    REQUIRE(cli::run({"evaluate", "--data", p.data, "--split", "test", "--out",
                      eval_dir, "--checkpoint", p.run + "/checkpoints/best.ckpt",
                      "--checkpoint", p.run + "/checkpoints/last.ckpt"}) == 0);
    const std::string table = read_file(eval_dir + "/comparison.txt");
    CHECK(count_lines(table) == 2 + 2);  // two header lines + one row per checkpoint
    {
      // rows are sorted by overall score, descending
      std::istringstream ts(table);
      std::string line;
      std::getline(ts, line);
      std::getline(ts, line);
      std::vector<double> overalls;
      while (std::getline(ts, line)) {
        std::istringstream row(line);
        std::string variant;
        double overall = 0;
        row >> variant >> overall;
        overalls.push_back(overall);
      }
      REQUIRE(overalls.size() == 2);
      CHECK(overalls[0] >= overalls[1]);
    }

    // the aggregate mean row equals the hand-average of the per-subject JSONs
    std::vector<std::string> aggs;
    for (const auto& e : std::filesystem::directory_iterator(eval_dir)) {
      if (e.path().filename().string().rfind("aggregate_", 0) == 0) {
        aggs.push_back(e.path().string());
      }
    }
    REQUIRE(aggs.size() == 2);
    for (const auto& agg : aggs) {
      const std::string stem =
          std::filesystem::path(agg).stem().string().substr(10);
      double mean_overall = -1;
      {
        std::ifstream in(agg);
        std::string row;
        while (std::getline(in, row)) {
          if (row.rfind("mean,", 0) == 0) {
            mean_overall = std::stod(row.substr(row.rfind(',') + 1));
          }
        }
      }
      REQUIRE(mean_overall >= 0);
      double acc = 0;
      int n = 0;
      for (const auto& e : std::filesystem::directory_iterator(
               std::filesystem::path(eval_dir) / "reports" / stem)) {
        acc += MetricReport::from_json(read_file(e.path().string())).overall;
        ++n;
      }
      REQUIRE(n == 1);  // one test subject in this dataset
      CHECK(mean_overall == doctest::Approx(acc / n).epsilon(1e-9));
    }
  }

  SUBCASE("checkpoint variant assertion fails loudly") {
    CHECK(cli::run({"evaluate", "--data", p.data, "--out", p.tmp.sub("eval2"),
                    "--checkpoint", p.run + "/checkpoints/best.ckpt",
                    "--variant", "static"}) == 1);
  }

  SUBCASE("segment emits mask, probabilities and timing") {
    const std::string seg_dir = p.tmp.sub("seg");
    REQUIRE(cli::run({"segment", "--data", p.data, "--subject", "subj002",
                      "--checkpoint", p.run + "/checkpoints/best.ckpt", "--out",
                      seg_dir}) == 0);
    CHECK(std::filesystem::exists(seg_dir + "/pred_mask.nii.gz"));
    CHECK(std::filesystem::exists(seg_dir + "/fused_prob.nii.gz"));
    const auto timing = nlohmann::json::parse(read_file(seg_dir + "/timing.json"));
    CHECK(timing["seconds_total"].get<double>() > 0.0);
    CHECK(timing["seconds_per_orientation"].size() == 3);

    // plots for a segmentation run: the qualitative overlay
    REQUIRE(cli::run({"plot", "--run", seg_dir}) == 0);
    CHECK(std::filesystem::exists(seg_dir + "/plots/overlay.png"));
  }

  SUBCASE("plot on the training run emits the loss curve with every step") {
    REQUIRE(cli::run({"plot", "--run", p.run}) == 0);
    const auto sidecar = nlohmann::json::parse(
        read_file(p.run + "/plots/loss_curve.png.json"));
    CHECK(sidecar["n_points"].get<int>() == 4);
    CHECK(std::filesystem::exists(p.run + "/plots/loss_curve.png"));
  }

  SUBCASE("plot on an evaluation run emits grouped metric bars") {
    const std::string eval_dir = p.tmp.sub("evalp");
    REQUIRE(cli::run({"evaluate", "--data", p.data, "--split", "test", "--out",
                      eval_dir, "--checkpoint", p.run + "/checkpoints/best.ckpt",
                      "--checkpoint", p.run + "/checkpoints/last.ckpt"}) == 0);
    REQUIRE(cli::run({"plot", "--run", eval_dir}) == 0);
    const auto sidecar = nlohmann::json::parse(
        read_file(eval_dir + "/plots/metric_bars.png.json"));
    CHECK(sidecar["groups"].size() == 2);
    CHECK(sidecar["metrics"].size() == 6);
    CHECK(sidecar["values"][0].size() == 6);
  }

  SUBCASE("plot on an empty directory fails") {
    const std::string empty = p.tmp.sub("empty_run");
    std::filesystem::create_directories(empty);
    write_file(empty + "/manifest.json", "{}");
    CHECK(cli::run({"plot", "--run", empty}) == 1);
  }
}

TEST_CASE("a perfect prediction renders identical contours in the overlay") {
  TempDir tmp("cli_overlay");
  std::mt19937_64 rng(3);
  const TensorF background = testing::random_tensor(1, 24, 24, rng, 0, 1);
  Tensor<std::uint8_t> mask(1, 24, 24);
  for (int y = 8; y < 16; ++y)
    for (int x = 9; x < 15; ++x) mask(0, y, x) = 1;
  write_overlay_png(tmp.sub("overlay.png"), background, mask, mask);
  const auto sidecar =
      nlohmann::json::parse(read_file(tmp.sub("overlay.png.json")));
  const long gt = sidecar["gt_contour_pixels"].get<long>();
  const long pred = sidecar["pred_contour_pixels"].get<long>();
  const long shared = sidecar["shared_contour_pixels"].get<long>();
  CHECK(gt > 0);
  CHECK(gt == pred);
  CHECK(shared == gt);  // contours coincide pixel for pixel
}

TEST_CASE("the installed binary honours the exit code contract") {
  TempDir tmp("cli_spawn");
  write_file(tmp.sub("gen.json"), kGenConfig);
  const std::string bin = LONGISEG_CLI_BIN;
  auto shell = [&](const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  CHECK(shell(bin + " generate --config " + tmp.sub("gen.json") + " --out " +
              tmp.sub("d") + " >/dev/null 2>&1") == 0);
  CHECK(shell(bin + " generate --config " + tmp.sub("gen.json") + " --out " +
              tmp.sub("d") + " >/dev/null 2>&1") == 2);
  CHECK(shell(bin + " train --config /nonexistent.json --data x --out " +
              tmp.sub("r") + " >/dev/null 2>&1") == 2);
  CHECK(shell(bin + " --help >/dev/null 2>&1") == 0);
}

}  // TEST_SUITE
