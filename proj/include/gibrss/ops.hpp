#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "gibrss/tape.hpp"

// Differentiable operations over Tape-resident values. Every op records its
// own backward rule; all of them are covered by finite-difference checks.
namespace gibrss {

// Destination-sorted directed edges with CSR offsets: the in-edges of node i
// are [offsets[i], offsets[i+1]).
struct InEdges {
  std::size_t num_nodes = 0;
  std::vector<std::uint32_t> src;
  std::vector<std::uint32_t> dst;
  std::vector<std::size_t> offsets;

  std::size_t num_edges() const noexcept { return src.size(); }
  std::size_t in_degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  // Stable-sorts (src, dst) pairs by destination.
  static InEdges from_pairs(std::size_t num_nodes, std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs);
};

// Linear algebra
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// a[m x n] + bias broadcast over rows (bias has n elements).
Var add_row(Var a, Var bias);
// Row i of a[m x n] times s[i] (s has m elements).
Var row_scale(Var a, Var s);
Var reshape(Var a, Shape shape);

// Elementwise nonlinearities
Var leaky_relu(Var x, double slope);
Var sigmoid(Var x);
Var softplus(Var x);

// Row-wise softmax family; max-subtracted. NaN input is a NumericError.
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
// Mean over rows of -log softmax(logits)[label]. Labels must lie in [0, cols).
Var cross_entropy(Var logits, std::span<const std::int32_t> labels);

// Reductions
Var sum(Var x);
Var mean(Var x);
Var sum_squares(Var x);

// Layout
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
// out[r] = x[index[r]]; backward scatter-adds.
Var gather_rows(Var x, std::span<const std::uint32_t> index);

// Graph attention scores. With s_e = p[dst] + q[src] and s_ii = p[i] + q[i],
// returns an (E + N) x 1 column: E edge weights followed by N self weights,
// each destination's {self (if include_self), gated edges} softmax-normalized.
// gate (E x 1, optional) multiplies each exp score; a zero gate removes the
// edge. A destination with an empty set gets all-zero weights.
Var segment_attention_softmax(Var p, Var q, const InEdges& edges, const Var* gate, bool include_self);

// out[i] = node_scale[i] * sum_{e into i} w[e] * msg[src[e]].
Var segment_weighted_sum(Var w, Var msg, const InEdges& edges, std::span<const double> node_scale);

// out[i][c] = max over in-edges e of i with keep[e] != 0 of msg[e][c]; 0 for
// a node without kept edges. msg is E x d, one row per edge.
Var segment_max(Var msg, const InEdges& edges, std::span<const double> keep);

// phi[e] = w[e] / sum of w over e's destination group (0 for an all-zero group).
Var segment_normalize(Var w, const InEdges& edges);

// sum_v sum_{e into v} phi[e] * ln(phi[e] * group_size[v]), 0 ln 0 = 0.
// Each nonzero group must sum to 1 within 1e-6.
Var categorical_kl_uniform(Var phi, const InEdges& edges, std::span<const double> group_size);

// Hard Bernoulli sample 1[sigmoid((logit + noise) / tau) > 0.5] in the
// forward pass; backward uses the derivative of the relaxed sigmoid.
Var straight_through_bernoulli(Var logits, const Tensor& noise, double tau);

// Per-row diagonal Gaussian log density: sum_d log N(z[v,d]; mu[v,d], sigma[v,d]^2).
Var gaussian_log_density(Var z, Var mu, Var sigma);
// Per-row log sum_i exp(log_w[i]) N(z_v; means[i], diag(sigmas[i]^2)).
Var mixture_log_density(Var z, Var means, Var sigmas, Var log_weights);

}  // namespace gibrss
