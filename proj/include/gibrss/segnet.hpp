#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gibrss/gib_loss.hpp"
#include "gibrss/gnn_block.hpp"
#include "gibrss/image.hpp"
#include "gibrss/masking.hpp"
#include "gibrss/patch_graph.hpp"
#include "gibrss/tape.hpp"

// U-shaped patch-graph segmentation network and its training loop.
namespace gibrss::seg {

struct SegModelConfig {
  // architecture
  int image_size = 64;  // square training size; sizes the mask parameters
  int in_channels = 3;
  int patch_size = 8;
  int dim = 32;
  int stages = 2;
  int blocks_per_stage = 1;
  int k = 8;
  int heads = 4;
  gnn::ConvVariant variant = gnn::ConvVariant::GAT;
  int classes = 3;
  double leaky_slope = 0.2;
  // masked views and bottleneck
  bool node_mask = true;
  bool edge_mask = true;
  bool gib = true;
  bool gib_all_stages = false;  // default: deepest encoder stage only
  double beta = 0.1;
  double tau = 0.5;
  double mask_init = 2.0;
  int mixture = 2;
  // training
  int epochs = 80;
  int batch_size = 32;
  double lr = 5e-4;
  double l2 = 1e-4;  // coefficient of the ||theta|| term in the loss
  bool l2_squared = false;
  double adamw_decay = 0.0;
  std::uint64_t seed = 0;
  bool flip = true;

  // Throws ContractError naming the offending field or stage.
  void validate() const;
  // Patch grid of every encoder stage for an image_size input.
  std::vector<graph::GridDims> stage_grids() const;
  bool views_enabled() const { return node_mask || edge_mask || gib; }
};

// Flat key=value form of the config. set_model_key returns false for keys it
// does not own and throws ContractError for values it cannot parse.
bool set_model_key(SegModelConfig& cfg, const std::string& key, const std::string& value);
std::string model_config_text(const SegModelConfig& cfg);
std::vector<std::string> model_config_keys();

struct EncoderStage {
  std::vector<gnn::GeBlockParams> blocks;
  bool has_down = false;
  ParamId down_kernel = 0, down_bias = 0;
};

struct DecoderStage {
  ParamId merge_w = 0, merge_b = 0;  // concat(upsampled, skip) 2D -> D
  std::vector<gnn::GeBlockParams> blocks;
};

struct StageViews {
  int stage = 0;
  mask::MaskParams masks;
  gib::GibHeads heads;
};

struct SegModel {
  SegModelConfig cfg;
  ParameterSet params;
  ParamId projection = 0;
  std::vector<EncoderStage> encoder;
  std::vector<DecoderStage> decoder;  // decoder[i] refines encoder stage stages-2-i
  ParamId node_w = 0, node_b = 0;
  ParamId out_kernel = 0, out_bias = 0;  // 3x3 over [node logits ; image]
  std::vector<StageViews> views;
};

// Parameters are kept on the float32 grid (after init and every optimizer
// step) so a checkpoint stores them exactly; all arithmetic stays float64.
SegModel build_model(const SegModelConfig& cfg);
void round_params_to_float32(ParameterSet& ps);

struct StageTrace {
  std::unique_ptr<graph::PatchGraph> graph;
  Var input;
  Var output;
  std::vector<gnn::Attention> attention;  // last block of the stage
};

struct StageViewResult {
  int stage = 0;
  mask::ViewEncodings encodings;
  std::vector<gib::ViewObjective> objectives;
};

struct ForwardResult {
  Var pixel_logits;  // (H*W) x C, row-major pixels
  Var node_logits;   // stage-0 nodes x C
  int height = 0, width = 0;
  std::vector<StageTrace> encoder;
  std::vector<StageTrace> decoder;
  std::vector<StageViewResult> views;
};

// With labels and rng the masked views and their objectives are evaluated as
// well; without them only the plain segmentation path runs.
ForwardResult forward(const ParamBinder& bind, const SegModel& model, const Image& image,
                      const LabelMap* labels = nullptr, RngStream* rng = nullptr);

// Pixel (y, x) -> stage-0 node (y / ps, x / ps).
std::vector<std::uint32_t> pixel_node_index(int height, int width, int patch_size, graph::GridDims grid);
// Majority label of the pixels under every node of a stage `shift`
// downsamplings below the patch grid; ties to the smaller class.
std::vector<std::int32_t> node_majority_labels(const LabelMap& labels, int patch_size, graph::GridDims grid,
                                               int shift, int classes);

// Mean pixel CE plus the joint view loss of every stage with views.
Var sample_loss(Var pixel_logits, std::span<const std::int32_t> labels, std::span<const StageViewResult> views);
// lambda * ||theta||_2 (or lambda * ||theta||^2) over regularized parameters.
double l2_penalty(const ParameterSet& ps, double lambda, bool squared);
void add_l2_gradient(const ParameterSet& ps, double lambda, bool squared, Gradients& grads);

struct LossParts {
  double total = 0.0;  // ce + view terms (per sample) or batch mean + l2 (per step)
  double ce = 0.0;
  double aib = 0.0;
  double xib = 0.0;
};

struct SampleResult {
  LossParts loss;
  Gradients grads;
};

// One independent tape: forward, loss and (optionally) backward.
SampleResult run_sample(const SegModel& model, const Image& image, const LabelMap& labels, RngStream rng,
                        bool backward);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double aib = 0.0;
  double xib = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
  double oa = 0.0;
  double miou = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  // epoch,loss,ce,aib,xib,lr,oa,miou with shortest round-trip doubles
  std::string to_csv() const;
  static TrainLog from_csv(const std::string& text);
};

struct FlipDecision {
  bool horizontal = false;
  bool vertical = false;
};

struct TrainHooks {
  // Replaces the random flip draws (sample index into the dataset).
  std::function<FlipDecision(int epoch, std::size_t sample)> flip_override;
  std::function<void(const EpochRecord&)> on_epoch;
  // Training-set OA / mIoU after every epoch.
  bool epoch_metrics = true;
};

TrainLog train(SegModel& model, std::span<const LabeledImage> data, const TrainHooks& hooks = {});

// (H*W) x C logits without views.
Tensor predict_logits(const SegModel& model, const Image& image);
// Per-pixel argmax, ties to the smaller class.
LabelMap argmax_labels(const Tensor& logits, int height, int width);
LabelMap predict(const SegModel& model, const Image& image);

void save_checkpoint(const SegModel& model, const std::filesystem::path& path);
SegModel load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const SegModel& model);
SegModel checkpoint_from_bytes(const std::string& bytes);

}  // namespace gibrss::seg
