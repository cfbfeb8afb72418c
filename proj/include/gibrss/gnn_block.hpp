#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gibrss/ops.hpp"
#include "gibrss/patch_graph.hpp"
#include "gibrss/rng.hpp"
#include "gibrss/tape.hpp"

// GE block: attention-weighted graph convolution with a residual projection
// and a per-node feed-forward map, plus the EdgeConv / GIN / GraphSAGE
// alternatives used in ablations.
namespace gibrss::gnn {

enum class ConvVariant { GAT, EdgeConv, GIN, GraphSAGE };

std::string to_string(ConvVariant v);
// Accepts gat, edgeconv, gin, sage / graphsage (case-insensitive).
ConvVariant parse_conv_variant(const std::string& s);

struct HeadParams {
  ParamId theta_nbr;   // neighbor message weights, dh x dh
  ParamId theta_self;  // self message weights, dh x dh
  ParamId attn_dst;    // edge score, destination half, dh x 1
  ParamId attn_src;    // edge score, source half, dh x 1
  ParamId update;      // per-head output map, dh x dh
};

struct GeBlockParams {
  std::size_t dim = 0;
  int heads = 1;
  ConvVariant variant = ConvVariant::GAT;
  double leaky_slope = 0.2;
  double gin_eps = 0.0;
  ParamId w_in = 0, w_out = 0;
  ParamId ffn_w1 = 0, ffn_b1 = 0, ffn_w2 = 0, ffn_b2 = 0;
  std::vector<HeadParams> head;  // GAT only
  ParamId variant_w = 0, variant_b = 0;  // EdgeConv / GIN / GraphSAGE only

  std::size_t head_dim() const { return dim / static_cast<std::size_t>(heads); }
};

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng);

// Registers a block's parameters under `prefix`. Throws if heads does not divide dim.
GeBlockParams make_ge_block(ParameterSet& ps, const std::string& prefix, std::size_t dim, int heads,
                            ConvVariant variant, double leaky_slope, RngStream& rng);

// The graph a block runs on, with an optional straight-through edge gate
// (E x 1, hard 0/1 values). A gated-out edge takes no part in messages or
// in the neighborhood size.
struct GraphView {
  const graph::PatchGraph* graph = nullptr;
  std::optional<Var> edge_gate;
};

// Number of kept in-edges per node.
std::vector<double> kept_in_degree(const GraphView& view);

struct Attention {
  Var edge;  // E x 1
  Var self;  // N x 1; unbound for variants without a self weight
};

// Softmax over {self} and the kept in-neighborhood of every node, with score
// W [x_i ; x_j] split as x_i . attn_dst + x_j . attn_src.
Attention edge_attention(Var x, const GraphView& view, Var attn_dst, Var attn_src);

// LeakyReLU( sum_{j in N(i)} (1/|N(i)|) (w_ij x_j Wn + w_ii x_i Ws) ). The self
// term is summed |N(i)| times and divided by |N(i)|, so it is applied once;
// a node whose edges are all gated out keeps just its self term.
Var aggregate_update(Var x, const GraphView& view, const Attention& att, Var theta_nbr, Var theta_self, double slope);

struct ConvOutput {
  Var out;
  std::vector<Attention> attention;  // one per head (GAT) or one uniform entry
};

// Per-head attention + aggregation on contiguous feature slices, each head
// mapped by its own update matrix, heads concatenated.
ConvOutput multi_head_update(const ParamBinder& bind, Var x, const GraphView& view, const GeBlockParams& p);

// GraphConv under the block's variant; GAT delegates to multi_head_update.
ConvOutput conv_variant_forward(const ParamBinder& bind, Var x, const GraphView& view, const GeBlockParams& p);

// Y = LeakyReLU(GraphConv(X W_in)) W_out + X
ConvOutput ge_residual(const ParamBinder& bind, Var x, const GraphView& view, const GeBlockParams& p);

// Y' = LeakyReLU(Y W_1 + b_1) W_2 + b_2 + Y
Var ffn(const ParamBinder& bind, Var y, const GeBlockParams& p);

// ffn(ge_residual(x)).
ConvOutput ge_block(const ParamBinder& bind, Var x, const GraphView& view, const GeBlockParams& p);

}  // namespace gibrss::gnn
