#include "gibrss/segnet.hpp"

#include <algorithm>
#include <cmath>

#include "gibrss/errors.hpp"
#include "gibrss/ops.hpp"

namespace gibrss::seg {

using graph::GridDims;

void SegModelConfig::validate() const {
  require(image_size > 0, "config: image_size must be positive");
  require(in_channels > 0, "config: in_channels must be positive");
  require(patch_size > 0 && patch_size <= image_size, "config: patch_size must be in [1, image_size]");
  require(dim > 0, "config: dim must be positive");
  require(stages >= 1, "config: stages must be >= 1");
  require(blocks_per_stage >= 1, "config: blocks_per_stage must be >= 1");
  require(k >= 1, "config: k must be >= 1");
  require(classes >= 2, "config: classes must be >= 2");
  require(heads >= 1, "config: heads must be >= 1");
  require(variant != gnn::ConvVariant::GAT || dim % heads == 0,
          "config: heads (" + std::to_string(heads) + ") must divide dim (" + std::to_string(dim) + ")");
  require(leaky_slope > 0.0 && leaky_slope < 1.0, "config: leaky_slope must be in (0, 1)");
  require(beta >= 0.0, "config: beta must be >= 0");
  require(tau > 0.0, "config: tau must be > 0");
  require(mixture >= 1, "config: mixture must be >= 1");
  require(epochs >= 0, "config: epochs must be >= 0");
  require(batch_size >= 1, "config: batch_size must be >= 1");
  require(lr >= 0.0, "config: lr must be >= 0");
  require(l2 >= 0.0, "config: l2 must be >= 0");
  require(adamw_decay >= 0.0, "config: adamw_decay must be >= 0");
  const auto grids = stage_grids();
  for (std::size_t s = 0; s + 1 < grids.size(); ++s)
    require(grids[s].rows >= 3 && grids[s].cols >= 3,
            "config: encoder stage " + std::to_string(s + 1) + " grid " + std::to_string(grids[s].rows) + "x" +
                std::to_string(grids[s].cols) + " is too small to downsample");
  require(grids.back().rows >= 2 && grids.back().cols >= 2,
          "config: deepest stage grid " + std::to_string(grids.back().rows) + "x" + std::to_string(grids.back().cols) +
              " is below 2x2");
}

std::vector<GridDims> SegModelConfig::stage_grids() const {
  const auto side = static_cast<std::size_t>((image_size + patch_size - 1) / patch_size);
  std::vector<GridDims> g{{side, side}};
  for (int s = 1; s < stages; ++s) g.push_back(graph::conv_output_grid(g.back(), 2));
  return g;
}

SegModel build_model(const SegModelConfig& cfg) {
  cfg.validate();
  SegModel m;
  m.cfg = cfg;
  auto& ps = m.params;
  RngStream rng(cfg.seed, 0x6d6f64656cULL);
  const auto d = static_cast<std::size_t>(cfg.dim);
  const auto patch_in = static_cast<std::size_t>(cfg.patch_size * cfg.patch_size * cfg.in_channels);
  m.projection = ps.add("embed.projection", gnn::xavier_uniform(patch_in, d, rng));

  auto blocks = [&](const std::string& prefix) {
    std::vector<gnn::GeBlockParams> out;
    for (int b = 0; b < cfg.blocks_per_stage; ++b)
      out.push_back(gnn::make_ge_block(ps, prefix + ".block" + std::to_string(b), d, cfg.heads, cfg.variant,
                                       cfg.leaky_slope, rng));
    return out;
  };

  for (int s = 0; s < cfg.stages; ++s) {
    const std::string prefix = "enc" + std::to_string(s);
    EncoderStage st;
    st.blocks = blocks(prefix);
    if (s + 1 < cfg.stages) {
      st.has_down = true;
      st.down_kernel = ps.add(prefix + ".down.kernel", gnn::xavier_uniform(9 * d, d, rng));
      st.down_bias = ps.add(prefix + ".down.bias", Tensor({1, d}));
    }
    m.encoder.push_back(std::move(st));
  }
  for (int s = cfg.stages - 2; s >= 0; --s) {
    const std::string prefix = "dec" + std::to_string(s);
    DecoderStage st;
    st.merge_w = ps.add(prefix + ".merge.w", gnn::xavier_uniform(2 * d, d, rng));
    st.merge_b = ps.add(prefix + ".merge.b", Tensor({1, d}));
    st.blocks = blocks(prefix);
    m.decoder.push_back(std::move(st));
  }
  const auto c = static_cast<std::size_t>(cfg.classes);
  m.node_w = ps.add("head.node.w", gnn::xavier_uniform(d, c, rng));
  m.node_b = ps.add("head.node.b", Tensor({1, c}));
  const std::size_t conv_in = c + static_cast<std::size_t>(cfg.in_channels);
  m.out_kernel = ps.add("head.conv.kernel", gnn::xavier_uniform(9 * conv_in, c, rng));
  m.out_bias = ps.add("head.conv.bias", Tensor({1, c}));

  if (cfg.views_enabled()) {
    const auto grids = cfg.stage_grids();
    const int first = cfg.gib_all_stages ? 0 : cfg.stages - 1;
    for (int s = first; s < cfg.stages; ++s) {
      const std::size_t n = grids[static_cast<std::size_t>(s)].size();
      const std::size_t k_eff = std::min<std::size_t>(static_cast<std::size_t>(cfg.k), n - 1);
      const std::string prefix = "view" + std::to_string(s);
      StageViews v;
      v.stage = s;
      v.masks = mask::make_mask_params(ps, prefix + ".mask", n, n * k_eff, cfg.mask_init, cfg.tau);
      v.heads = gib::make_gib_heads(ps, prefix + ".gib", d, cfg.classes, cfg.mixture, rng);
      m.views.push_back(v);
    }
  }
  round_params_to_float32(m.params);
  return m;
}

void round_params_to_float32(ParameterSet& ps) {
  for (ParamId id = 0; id < ps.size(); ++id)
    for (double& v : ps.value(id).data()) v = static_cast<double>(static_cast<float>(v));
}

std::vector<std::uint32_t> pixel_node_index(int height, int width, int patch_size, GridDims grid) {
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto r = static_cast<std::size_t>(y / patch_size), c = static_cast<std::size_t>(x / patch_size);
      require(r < grid.rows && c < grid.cols, "pixel_node_index: pixel outside the patch grid");
      idx[static_cast<std::size_t>(y) * width + x] = static_cast<std::uint32_t>(r * grid.cols + c);
    }
  return idx;
}

std::vector<std::int32_t> node_majority_labels(const LabelMap& labels, int patch_size, GridDims grid, int shift,
                                               int classes) {
  std::vector<std::uint32_t> counts(grid.size() * static_cast<std::size_t>(classes), 0);
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x) {
      const auto r = static_cast<std::size_t>((y / patch_size) >> shift);
      const auto c = static_cast<std::size_t>((x / patch_size) >> shift);
      require(r < grid.rows && c < grid.cols, "node_majority_labels: label map larger than the grid");
      const auto l = labels.at(y, x);
      require(l >= 0 && l < classes, "node_majority_labels: label " + std::to_string(l) + " out of range");
      ++counts[(r * grid.cols + c) * static_cast<std::size_t>(classes) + static_cast<std::size_t>(l)];
    }
  std::vector<std::int32_t> out(grid.size(), 0);
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const auto* row = &counts[n * static_cast<std::size_t>(classes)];
    out[n] = static_cast<std::int32_t>(std::max_element(row, row + classes) - row);
  }
  return out;
}

namespace {

struct BlockStack {
  Var out;
  std::vector<mask::ViewLayer> layers;
};

BlockStack run_blocks(const ParamBinder& bind, Var x, const graph::PatchGraph& g,
                      const std::vector<gnn::GeBlockParams>& blocks) {
  BlockStack st;
  gnn::GraphView view{&g, std::nullopt};
  for (const auto& b : blocks) {
    mask::ViewLayer layer;
    layer.input = x;
    layer.view = view;
    auto r = gnn::ge_block(bind, x, view, b);
    layer.out = r.out;
    layer.attention = std::move(r.attention);
    x = r.out;
    st.layers.push_back(std::move(layer));
  }
  st.out = x;
  return st;
}

}  // namespace

ForwardResult forward(const ParamBinder& bind, const SegModel& model, const Image& image, const LabelMap* labels,
                      RngStream* rng) {
  const auto& cfg = model.cfg;
  if (image.channels != cfg.in_channels)
    throw DimensionError("forward: image has " + std::to_string(image.channels) + " channels, model expects " +
                         std::to_string(cfg.in_channels));
  if (labels && (labels->height != image.height || labels->width != image.width))
    throw DimensionError("forward: label map size differs from the image");
  Tape& tape = bind.tape;
  ForwardResult res;
  res.height = image.height;
  res.width = image.width;

  const graph::PatchSet patches = graph::split_patches(image, cfg.patch_size);
  Var x = graph::embed_patches(tape, patches, bind(model.projection));
  auto g = std::make_unique<graph::PatchGraph>(graph::knn_graph(x.value(), cfg.k, patches.grid));
  std::vector<GridDims> grids;
  const bool with_views = labels != nullptr && rng != nullptr;

  for (int s = 0; s < cfg.stages; ++s) {
    const auto& stage = model.encoder[static_cast<std::size_t>(s)];
    StageTrace tr;
    tr.graph = std::move(g);
    tr.input = x;
    grids.push_back(tr.graph->grid);
    BlockStack st = run_blocks(bind, x, *tr.graph, stage.blocks);
    tr.output = st.out;
    tr.attention = st.layers.back().attention;
    x = st.out;

    const auto vit = std::find_if(model.views.begin(), model.views.end(), [&](const StageViews& v) { return v.stage == s; });
    if (with_views && vit != model.views.end()) {
      StageViewResult vr;
      vr.stage = s;
      RngStream stage_rng = rng->split(100 + static_cast<std::uint64_t>(s));
      RngStream enc_rng = stage_rng.split(1);
      vr.encodings = mask::encode_views(bind, tr.input, *tr.graph, vit->masks, stage.blocks, enc_rng,
                                        mask::ViewOptions{cfg.node_mask, cfg.edge_mask});
      const auto node_labels = node_majority_labels(*labels, cfg.patch_size, tr.graph->grid, s, cfg.classes);
      gib::GibConfig gcfg;
      gcfg.beta = cfg.gib ? cfg.beta : 0.0;
      gcfg.mixture = cfg.mixture;
      auto objective = [&](const mask::EncodedView& ev, std::uint64_t key) {
        RngStream r = stage_rng.split(key);
        vr.objectives.push_back(gib::view_objective(bind, vit->heads, ev, node_labels, gcfg, r));
      };
      if (vr.encodings.node_view) objective(*vr.encodings.node_view, 2);
      if (vr.encodings.edge_view) objective(*vr.encodings.edge_view, 3);
      if (!cfg.node_mask && !cfg.edge_mask && cfg.gib) {
        mask::EncodedView plain;
        plain.out = st.out;
        plain.layers = std::move(st.layers);
        objective(plain, 4);
      }
      res.views.push_back(std::move(vr));
    }

    if (stage.has_down) {
      auto d = graph::downsample_graph(*tr.graph, x, bind(stage.down_kernel), bind(stage.down_bias));
      x = d.features;
      g = std::make_unique<graph::PatchGraph>(std::move(d.graph));
    }
    res.encoder.push_back(std::move(tr));
  }

  for (std::size_t i = 0; i < model.decoder.size(); ++i) {
    const auto s = static_cast<std::size_t>(cfg.stages) - 2 - i;
    const auto& stage = model.decoder[i];
    Var up = graph::upsample_nodes(x, grids[s + 1], grids[s]);
    Var skip = res.encoder[s].output;
    Var merged = add_row(matmul(concat_cols(std::vector<Var>{up, skip}), bind(stage.merge_w)), bind(stage.merge_b));
    StageTrace tr;
    tr.graph = std::make_unique<graph::PatchGraph>(graph::knn_graph(merged.value(), cfg.k, grids[s]));
    tr.input = merged;
    BlockStack st = run_blocks(bind, merged, *tr.graph, stage.blocks);
    tr.output = st.out;
    tr.attention = st.layers.back().attention;
    x = st.out;
    res.decoder.push_back(std::move(tr));
  }

  res.node_logits = add_row(matmul(x, bind(model.node_w)), bind(model.node_b));
  Var per_pixel = gather_rows(res.node_logits, pixel_node_index(image.height, image.width, cfg.patch_size, grids[0]));
  const auto hw = static_cast<std::size_t>(image.height) * static_cast<std::size_t>(image.width);
  Var pixels = tape.constant(Tensor({hw, static_cast<std::size_t>(image.channels)}, image.pixels));
  Var conv_in = concat_cols(std::vector<Var>{per_pixel, pixels});
  res.pixel_logits = graph::grid_conv3x3(
      conv_in, GridDims{static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width)},
      bind(model.out_kernel), bind(model.out_bias), 1);
  return res;
}

Var sample_loss(Var pixel_logits, std::span<const std::int32_t> labels, std::span<const StageViewResult> views) {
  Var loss = cross_entropy(pixel_logits, labels);
  for (const auto& v : views)
    if (!v.objectives.empty()) loss = add(loss, gib::joint_view_loss(v.objectives));
  return loss;
}

double l2_penalty(const ParameterSet& ps, double lambda, bool squared) {
  double sq = 0.0;
  for (ParamId id = 0; id < ps.size(); ++id)
    if (ps.regularized(id))
      for (double v : ps.value(id).data()) sq += v * v;
  return lambda * (squared ? sq : std::sqrt(sq));
}

void add_l2_gradient(const ParameterSet& ps, double lambda, bool squared, Gradients& grads) {
  if (lambda == 0.0) return;
  double factor = 2.0 * lambda;
  if (!squared) {
    const double norm = l2_penalty(ps, 1.0, false);
    if (norm == 0.0) return;  // subgradient 0 at the origin
    factor = lambda / norm;
  }
  for (ParamId id = 0; id < ps.size(); ++id) {
    if (!ps.regularized(id)) continue;
    Tensor g = ps.value(id);
    for (auto& v : g.data()) v *= factor;
    grads.add(id, g);
  }
}

SampleResult run_sample(const SegModel& model, const Image& image, const LabelMap& labels, RngStream rng,
                        bool backward) {
  Tape tape;
  ParamBinder bind{tape, model.params};
  ForwardResult fr = forward(bind, model, image, &labels, &rng);
  Var ce = cross_entropy(fr.pixel_logits, labels.labels);
  Var loss = ce;
  SampleResult out{LossParts{}, Gradients(model.params)};
  for (const auto& v : fr.views) {
    if (v.objectives.empty()) continue;
    loss = add(loss, gib::joint_view_loss(v.objectives));
    for (const auto& o : v.objectives) {
      for (const auto& a : o.aib) out.loss.aib += a.value().item();
      for (const auto& x : o.xib) out.loss.xib += x.value().item();
    }
  }
  out.loss.ce = ce.value().item();
  out.loss.total = loss.value().item();
  if (backward) {
    tape.backward(loss);
    tape.collect(out.grads);
  }
  return out;
}

Tensor predict_logits(const SegModel& model, const Image& image) {
  Tape tape;
  ParamBinder bind{tape, model.params};
  return forward(bind, model, image).pixel_logits.value();
}

LabelMap argmax_labels(const Tensor& logits, int height, int width) {
  const auto n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  if (logits.rows() != n) throw DimensionError("argmax_labels: logits rows do not match the image");
  const std::size_t c = logits.cols();
  LabelMap out(height, width);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out.labels[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

LabelMap predict(const SegModel& model, const Image& image) {
  return argmax_labels(predict_logits(model, image), image.height, image.width);
}

}  // namespace gibrss::seg
