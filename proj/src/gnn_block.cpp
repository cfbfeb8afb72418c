#include "gibrss/gnn_block.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "gibrss/errors.hpp"

namespace gibrss::gnn {

std::string to_string(ConvVariant v) {
  switch (v) {
    case ConvVariant::GAT: return "gat";
    case ConvVariant::EdgeConv: return "edgeconv";
    case ConvVariant::GIN: return "gin";
    case ConvVariant::GraphSAGE: return "sage";
  }
  throw ContractError("unknown conv variant");
}

ConvVariant parse_conv_variant(const std::string& s) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
  if (l == "gat") return ConvVariant::GAT;
  if (l == "edgeconv") return ConvVariant::EdgeConv;
  if (l == "gin") return ConvVariant::GIN;
  if (l == "sage" || l == "graphsage") return ConvVariant::GraphSAGE;
  throw ContractError("unknown conv variant '" + s + "' (expected gat, edgeconv, gin or sage)");
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (auto& v : t.data()) v = rng.uniform(-a, a);
  return t;
}

GeBlockParams make_ge_block(ParameterSet& ps, const std::string& prefix, std::size_t dim, int heads,
                            ConvVariant variant, double leaky_slope, RngStream& rng) {
  require(dim > 0, prefix + ": feature dimension must be positive");
  require(heads >= 1 && dim % static_cast<std::size_t>(heads) == 0,
          prefix + ": head count " + std::to_string(heads) + " does not divide dimension " + std::to_string(dim));
  GeBlockParams p;
  p.dim = dim;
  p.heads = heads;
  p.variant = variant;
  p.leaky_slope = leaky_slope;
  p.w_in = ps.add(prefix + ".w_in", xavier_uniform(dim, dim, rng));
  if (variant == ConvVariant::GAT) {
    const std::size_t dh = p.head_dim();
    for (int h = 0; h < heads; ++h) {
      const std::string hp = prefix + ".head" + std::to_string(h);
      HeadParams hd{};
      hd.theta_nbr = ps.add(hp + ".theta_nbr", xavier_uniform(dh, dh, rng));
      hd.theta_self = ps.add(hp + ".theta_self", xavier_uniform(dh, dh, rng));
      hd.attn_dst = ps.add(hp + ".attn_dst", xavier_uniform(dh, 1, rng));
      hd.attn_src = ps.add(hp + ".attn_src", xavier_uniform(dh, 1, rng));
      hd.update = ps.add(hp + ".update", xavier_uniform(dh, dh, rng));
      p.head.push_back(hd);
    }
  } else {
    const std::size_t fan_in = variant == ConvVariant::GIN ? dim : 2 * dim;
    p.variant_w = ps.add(prefix + "." + to_string(variant) + ".w", xavier_uniform(fan_in, dim, rng));
    p.variant_b = ps.add(prefix + "." + to_string(variant) + ".b", Tensor({1, dim}));
  }
  p.w_out = ps.add(prefix + ".w_out", xavier_uniform(dim, dim, rng));
  p.ffn_w1 = ps.add(prefix + ".ffn_w1", xavier_uniform(dim, 4 * dim, rng));
  p.ffn_b1 = ps.add(prefix + ".ffn_b1", Tensor({1, 4 * dim}));
  p.ffn_w2 = ps.add(prefix + ".ffn_w2", xavier_uniform(4 * dim, dim, rng));
  p.ffn_b2 = ps.add(prefix + ".ffn_b2", Tensor({1, dim}));
  return p;
}

std::vector<double> kept_in_degree(const GraphView& view) {
  const auto& e = view.graph->edges;
  std::vector<double> deg(e.num_nodes, 0.0);
  for (std::size_t i = 0; i < e.num_nodes; ++i)
    for (std::size_t k = e.offsets[i]; k < e.offsets[i + 1]; ++k)
      if (!view.edge_gate || view.edge_gate->value()[k] != 0.0) deg[i] += 1.0;
  return deg;
}

namespace {

std::vector<double> inverse(std::vector<double> v) {
  for (auto& d : v) d = d > 0.0 ? 1.0 / d : 0.0;
  return v;
}

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

Var edge_ones_or_gate(Tape& tape, const GraphView& view) {
  if (view.edge_gate) return *view.edge_gate;
  return tape.constant(Tensor({view.graph->num_edges(), 1}, 1.0));
}

}  // namespace

Attention edge_attention(Var x, const GraphView& view, Var attn_dst, Var attn_src) {
  require(view.graph != nullptr, "edge_attention: no graph");
  const auto& e = view.graph->edges;
  if (x.rows() != e.num_nodes) throw DimensionError("edge_attention: feature rows do not match graph nodes");
  Var p = matmul(x, attn_dst);
  Var q = matmul(x, attn_src);
  const Var* gate = view.edge_gate ? &*view.edge_gate : nullptr;
  Var w = segment_attention_softmax(p, q, e, gate, /*include_self=*/true);
  std::vector<std::uint32_t> edge_idx(e.num_edges()), self_idx(e.num_nodes);
  for (std::size_t k = 0; k < edge_idx.size(); ++k) edge_idx[k] = static_cast<std::uint32_t>(k);
  for (std::size_t k = 0; k < self_idx.size(); ++k) self_idx[k] = static_cast<std::uint32_t>(e.num_edges() + k);
  Attention att;
  att.self = gather_rows(w, self_idx);
  if (!edge_idx.empty()) att.edge = gather_rows(w, edge_idx);
  return att;
}

Var aggregate_update(Var x, const GraphView& view, const Attention& att, Var theta_nbr, Var theta_self, double slope) {
  const auto& e = view.graph->edges;
  const auto inv_deg = inverse(kept_in_degree(view));
  Var self_term = row_scale(matmul(x, theta_self), att.self);
  if (e.num_edges() == 0) return leaky_relu(self_term, slope);
  Var nbr = segment_weighted_sum(att.edge, matmul(x, theta_nbr), e, inv_deg);
  return leaky_relu(add(nbr, self_term), slope);
}

ConvOutput multi_head_update(const ParamBinder& bind, Var x, const GraphView& view, const GeBlockParams& p) {
  require(p.heads >= 1 && p.dim % static_cast<std::size_t>(p.heads) == 0,
          "multi_head_update: " + std::to_string(p.heads) + " heads do not divide dimension " + std::to_string(p.dim));
  if (x.cols() != p.dim)
    throw DimensionError("multi_head_update: input has " + std::to_string(x.cols()) + " columns, block expects " +
                         std::to_string(p.dim));
  require(p.head.size() == static_cast<std::size_t>(p.heads), "multi_head_update: block has no attention heads");
  const std::size_t dh = p.head_dim();
  ConvOutput out;
  std::vector<Var> heads;
  for (int h = 0; h < p.heads; ++h) {
    const auto& hp = p.head[static_cast<std::size_t>(h)];
    Var xs = p.heads == 1 ? x : slice_cols(x, h * dh, (h + 1) * dh);
    Attention att = edge_attention(xs, view, bind(hp.attn_dst), bind(hp.attn_src));
    Var agg = aggregate_update(xs, view, att, bind(hp.theta_nbr), bind(hp.theta_self), p.leaky_slope);
    heads.push_back(matmul(agg, bind(hp.update)));
    out.attention.push_back(att);
  }
  out.out = heads.size() == 1 ? heads[0] : concat_cols(heads);
  return out;
}

ConvOutput conv_variant_forward(const ParamBinder& bind, Var x, const GraphView& view, const GeBlockParams& p) {
  if (p.variant == ConvVariant::GAT) return multi_head_update(bind, x, view, p);
  const auto& e = view.graph->edges;
  Tape& tape = bind.tape;
  Var gate = edge_ones_or_gate(tape, view);
  const auto deg = kept_in_degree(view);
  ConvOutput out;
  out.attention.push_back(Attention{gate, Var{}});
  switch (p.variant) {
    case ConvVariant::GIN: {
      Var nsum = segment_weighted_sum(gate, x, e, ones(e.num_nodes));
      Var h = add(scale(x, 1.0 + p.gin_eps), nsum);
      out.out = leaky_relu(add_row(matmul(h, bind(p.variant_w)), bind(p.variant_b)), p.leaky_slope);
      return out;
    }
    case ConvVariant::GraphSAGE: {
      Var nmean = segment_weighted_sum(gate, x, e, inverse(deg));
      Var cat = concat_cols(std::vector<Var>{x, nmean});
      out.out = leaky_relu(add_row(matmul(cat, bind(p.variant_w)), bind(p.variant_b)), p.leaky_slope);
      return out;
    }
    case ConvVariant::EdgeConv: {
      std::vector<std::uint32_t> dst(e.dst.begin(), e.dst.end()), src(e.src.begin(), e.src.end());
      Var xi = gather_rows(x, dst);
      Var xj = gather_rows(x, src);
      Var msg_in = concat_cols(std::vector<Var>{xi, sub(xj, xi)});
      Var msg = add_row(matmul(msg_in, bind(p.variant_w)), bind(p.variant_b));
      std::vector<double> keep(e.num_edges(), 1.0);
      if (view.edge_gate) std::copy(view.edge_gate->value().data().begin(), view.edge_gate->value().data().end(), keep.begin());
      out.out = leaky_relu(segment_max(msg, e, keep), p.leaky_slope);
      return out;
    }
    case ConvVariant::GAT: break;
  }
  throw ContractError("conv_variant_forward: unsupported variant");
}

ConvOutput ge_residual(const ParamBinder& bind, Var x, const GraphView& view, const GeBlockParams& p) {
  ConvOutput conv = conv_variant_forward(bind, matmul(x, bind(p.w_in)), view, p);
  conv.out = add(matmul(leaky_relu(conv.out, p.leaky_slope), bind(p.w_out)), x);
  return conv;
}

Var ffn(const ParamBinder& bind, Var y, const GeBlockParams& p) {
  Var hidden = leaky_relu(add_row(matmul(y, bind(p.ffn_w1)), bind(p.ffn_b1)), p.leaky_slope);
  return add(add_row(matmul(hidden, bind(p.ffn_w2)), bind(p.ffn_b2)), y);
}

ConvOutput ge_block(const ParamBinder& bind, Var x, const GraphView& view, const GeBlockParams& p) {
  ConvOutput r = ge_residual(bind, x, view, p);
  r.out = ffn(bind, r.out, p);
  return r;
}

}  // namespace gibrss::gnn
