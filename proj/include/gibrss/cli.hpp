#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gibrss/dataset.hpp"
#include "gibrss/metrics.hpp"
#include "gibrss/segnet.hpp"

// Command implementations behind the gibrss executable.
namespace gibrss::cli {

namespace fs = std::filesystem;

// Flat key=value file. Besides the model keys (see seg::model_config_keys):
//   data         manifest.json of a training set; empty = synthetic
//   synth_count  synthetic training images (default 8)
//   synth_seed   synthetic training seed (default 0)
//   test_data    manifest.json of a held-out set; empty = synthetic
//   test_count   synthetic held-out images (default 8)
//   test_seed    synthetic held-out seed (default 1)
//   out          output directory (default "run")
struct RunConfig {
  seg::SegModelConfig model;
  std::string data;
  int synth_count = 8;
  std::uint64_t synth_seed = 0;
  std::string test_data;
  int test_count = 8;
  std::uint64_t test_seed = 1;
  std::string out = "run";
};

// '#' starts a comment; blank lines are skipped. Unknown keys and malformed
// lines throw ContractError naming the key or line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const fs::path& path);
std::string config_text(const RunConfig& cfg);

data::Dataset training_set(const RunConfig& cfg);
data::Dataset test_set(const RunConfig& cfg);
// Accepts a manifest file or a directory holding manifest.json.
data::Dataset load_dataset(const fs::path& path);

// Fixed RGB table; class c uses row c % 16.
const std::array<std::array<std::uint8_t, 3>, 16>& palette();
Image colorize(const LabelMap& labels);
// 0.5 * image + 0.5 * palette color.
Image overlay(const Image& image, const LabelMap& labels);

struct EvalReport {
  eval::ConfusionMatrix cm;
  eval::Metrics metrics;
  std::string text;  // per-class IoU / F1 table plus OA, meanF1, mIoU
  std::string csv;   // class,iou,f1,present rows then mean rows
};

EvalReport evaluate(const seg::SegModel& model, const data::Dataset& ds);

struct TrainResult {
  seg::SegModel model;
  seg::TrainLog log;
  EvalReport report;
};

TrainResult run_training(const RunConfig& cfg);

// Writes checkpoint.gibrss, train_log.csv, config.txt and metrics.txt into
// out_dir. Files are staged in a sibling directory and renamed into place;
// an existing out_dir is an error unless overwrite is set.
void cmd_train(const RunConfig& cfg, const fs::path& out_dir, bool overwrite);
EvalReport cmd_eval(const fs::path& checkpoint, const fs::path& data, const std::optional<fs::path>& out_dir);
// labels.pgm, color.ppm, overlay.ppm
void cmd_segment(const fs::path& checkpoint, const fs::path& image, const fs::path& out_dir);

// One list per axis, e.g. "conv = gat, sage" or "k = 3, 6, 9". Axes:
// conv, k, node_mask, edge_mask, gib, seeds. Missing axes take the base
// config's value (seeds: the base seed).
struct SweepSpec {
  std::vector<gnn::ConvVariant> conv;
  std::vector<int> k;
  std::vector<bool> node_mask;
  std::vector<bool> edge_mask;
  std::vector<bool> gib;
  std::vector<std::uint64_t> seeds;
};

SweepSpec parse_sweep(const std::string& text, const RunConfig& base);

struct SweepRow {
  gnn::ConvVariant conv;
  int k;
  bool node_mask, edge_mask, gib;
  double miou, oa, mean_f1;  // medians over seeds on the held-out set
  std::vector<double> miou_per_seed;
};

// Every configuration is validated before the first one trains.
std::vector<SweepRow> run_sweep(const RunConfig& base, const SweepSpec& sweep);
std::string sweep_csv(const std::vector<SweepRow>& rows);

// JSON array with one entry per stage (encoder then decoder); edge weights are
// the head-averaged attention of the stage's last block.
std::string graph_dump(const seg::SegModel& model, const Image& image);

double median(std::vector<double> v);

}  // namespace gibrss::cli
