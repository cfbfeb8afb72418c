#include "gibrss/masking.hpp"

#include <cmath>

#include "gibrss/errors.hpp"
#include "gibrss/ops.hpp"

namespace gibrss::mask {

MaskParams make_mask_params(ParameterSet& ps, const std::string& prefix, std::size_t num_nodes,
                            std::size_t num_edges, double init_logit, double tau) {
  require(tau > 0.0, "mask temperature must be > 0");
  MaskParams m;
  m.node_logits = ps.add(prefix + ".node_logits", Tensor({num_nodes, 1}, init_logit), false);
  m.edge_logits = ps.add(prefix + ".edge_logits", Tensor({num_edges, 1}, init_logit), false);
  m.tau = tau;
  return m;
}

MaskSample sample_mask(Var logits, double tau, RngStream& rng) {
  require(tau > 0.0, "sample_mask: temperature must be > 0");
  const Tensor& l = logits.value();
  Tensor noise(l.shape());
  for (auto& g : noise.data()) g = rng.logistic();
  MaskSample s;
  s.stream = rng.stream();
  s.relaxed = Tensor(l.shape());
  for (std::size_t i = 0; i < l.size(); ++i) {
    const double a = (l[i] + noise[i]) / tau;
    s.relaxed[i] = a >= 0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
  }
  s.gate = straight_through_bernoulli(logits, noise, tau);
  s.hard = s.gate.value();
  return s;
}

MaskSample fixed_mask(Tape& tape, const Tensor& values) {
  for (double v : values.data()) require(v == 0.0 || v == 1.0, "fixed_mask: entries must be 0 or 1");
  MaskSample s;
  s.hard = values;
  s.relaxed = values;
  s.gate = tape.constant(values);
  return s;
}

NodeMaskedView node_masked_view(const graph::PatchGraph& g, Var x, const MaskSample& m) {
  if (m.hard.size() != g.num_nodes())
    throw DimensionError("node_masked_view: mask has " + std::to_string(m.hard.size()) + " entries for " +
                         std::to_string(g.num_nodes()) + " nodes");
  return {&g, row_scale(x, m.gate)};
}

gnn::GraphView edge_masked_view(const graph::PatchGraph& g, const MaskSample& m) {
  if (m.hard.size() != g.num_edges())
    throw DimensionError("edge_masked_view: mask has " + std::to_string(m.hard.size()) + " entries for " +
                         std::to_string(g.num_edges()) + " edges");
  return {&g, m.gate};
}

EncodedView encode_node_view(const ParamBinder& bind, Var x, const graph::PatchGraph& g,
                             std::span<const MaskSample> masks, std::span<const gnn::GeBlockParams> encoder) {
  const std::size_t layers = std::max<std::size_t>(encoder.size(), 1);
  require(masks.size() >= layers, "encode_node_view: need one mask per layer");
  EncodedView v;
  Var cur = x;
  if (encoder.empty()) {
    v.out = node_masked_view(g, cur, masks[0]).features;
    return v;
  }
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    ViewLayer layer;
    layer.mask = masks[l];
    layer.input = node_masked_view(g, cur, masks[l]).features;
    layer.view = gnn::GraphView{&g, std::nullopt};
    auto r = gnn::ge_block(bind, layer.input, layer.view, encoder[l]);
    layer.out = r.out;
    layer.attention = std::move(r.attention);
    cur = layer.out;
    v.layers.push_back(std::move(layer));
  }
  v.out = cur;
  return v;
}

EncodedView encode_edge_view(const ParamBinder& bind, Var x, const graph::PatchGraph& g,
                             std::span<const MaskSample> masks, std::span<const gnn::GeBlockParams> encoder) {
  require(masks.size() >= encoder.size(), "encode_edge_view: need one mask per layer");
  EncodedView v;
  Var cur = x;
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    ViewLayer layer;
    layer.mask = masks[l];
    layer.input = cur;
    layer.view = edge_masked_view(g, masks[l]);
    auto r = gnn::ge_block(bind, cur, layer.view, encoder[l]);
    layer.out = r.out;
    layer.attention = std::move(r.attention);
    cur = layer.out;
    v.layers.push_back(std::move(layer));
  }
  v.out = cur;
  return v;
}

ViewEncodings encode_views(const ParamBinder& bind, Var x, const graph::PatchGraph& g, const MaskParams& masks,
                           std::span<const gnn::GeBlockParams> encoder, RngStream& rng, ViewOptions opts) {
  Var node_logits = bind(masks.node_logits);
  Var edge_logits = bind(masks.edge_logits);
  if (node_logits.value().size() != g.num_nodes() || edge_logits.value().size() != g.num_edges())
    throw DimensionError("encode_views: mask parameters sized for " + std::to_string(node_logits.value().size()) +
                         " nodes / " + std::to_string(edge_logits.value().size()) + " edges, graph has " +
                         std::to_string(g.num_nodes()) + " / " + std::to_string(g.num_edges()));
  const std::size_t layers = std::max<std::size_t>(encoder.size(), 1);
  ViewEncodings out;
  if (opts.node_mask) {
    RngStream nr = rng.split(0x4e44);
    std::vector<MaskSample> ms;
    for (std::size_t l = 0; l < layers; ++l) {
      RngStream lr = nr.split(l);
      ms.push_back(sample_mask(node_logits, masks.tau, lr));
    }
    out.node_view = encode_node_view(bind, x, g, ms, encoder);
  }
  if (opts.edge_mask) {
    RngStream er = rng.split(0x4544);
    std::vector<MaskSample> ms;
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      RngStream lr = er.split(l);
      ms.push_back(sample_mask(edge_logits, masks.tau, lr));
    }
    out.edge_view = encode_edge_view(bind, x, g, ms, encoder);
  }
  return out;
}

}  // namespace gibrss::mask
