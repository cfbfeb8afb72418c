#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gibrss/gnn_block.hpp"
#include "gibrss/patch_graph.hpp"
#include "gibrss/rng.hpp"
#include "gibrss/tape.hpp"

// Learnable node-masked and edge-masked graph views.
namespace gibrss::mask {

// Keep-probabilities are sigmoid(logit). Edge logits are indexed like the
// graph's edge list (destination-major, nearest-first).
struct MaskParams {
  ParamId node_logits = 0;  // N x 1
  ParamId edge_logits = 0;  // E x 1
  double tau = 0.5;
};

MaskParams make_mask_params(ParameterSet& ps, const std::string& prefix, std::size_t num_nodes,
                            std::size_t num_edges, double init_logit = 2.0, double tau = 0.5);

struct MaskSample {
  Tensor hard;     // exact 0/1 values
  Tensor relaxed;  // sigmoid((logit + g) / tau)
  Var gate;        // hard values forward, relaxed-sigmoid gradient backward
  std::uint64_t stream = 0;
};

// Binary-concrete sample with logistic noise g drawn from rng.
MaskSample sample_mask(Var logits, double tau, RngStream& rng);
// Constant mask with the given hard values (no gradient path).
MaskSample fixed_mask(Tape& tape, const Tensor& values);

struct NodeMaskedView {
  const graph::PatchGraph* graph = nullptr;
  Var features;
};

// Node features multiplied row-wise by the mask; edges unchanged.
NodeMaskedView node_masked_view(const graph::PatchGraph& g, Var x, const MaskSample& m);
// Edges with a zero mask entry drop out of message passing.
gnn::GraphView edge_masked_view(const graph::PatchGraph& g, const MaskSample& m);

struct ViewLayer {
  Var input;  // features entering the layer (after node masking for the ND view)
  Var out;
  gnn::GraphView view;
  std::vector<gnn::Attention> attention;
  MaskSample mask;
};

struct EncodedView {
  Var out;
  std::vector<ViewLayer> layers;
};

struct ViewOptions {
  bool node_mask = true;
  bool edge_mask = true;
};

struct ViewEncodings {
  std::optional<EncodedView> node_view;
  std::optional<EncodedView> edge_view;
};

// Runs both views through the encoder stack with masks redrawn per layer.
// With an empty stack the node view is the masked input and the edge view the
// input itself.
ViewEncodings encode_views(const ParamBinder& bind, Var x, const graph::PatchGraph& g, const MaskParams& masks,
                           std::span<const gnn::GeBlockParams> encoder, RngStream& rng, ViewOptions opts = {});

// Same, with caller-provided masks per layer (identity and surgery checks).
EncodedView encode_node_view(const ParamBinder& bind, Var x, const graph::PatchGraph& g,
                             std::span<const MaskSample> masks, std::span<const gnn::GeBlockParams> encoder);
EncodedView encode_edge_view(const ParamBinder& bind, Var x, const graph::PatchGraph& g,
                             std::span<const MaskSample> masks, std::span<const gnn::GeBlockParams> encoder);

}  // namespace gibrss::mask
