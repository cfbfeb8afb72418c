#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gibrss/gnn_block.hpp"
#include "gibrss/masking.hpp"
#include "gibrss/rng.hpp"
#include "gibrss/tape.hpp"

// Graph information bottleneck objective: a categorical KL structure term
// (AIB), a Gaussian-mixture feature term (XIB), and a cross-entropy task term.
namespace gibrss::gib {

// ---- value-level estimators ------------------------------------------------

// sum over groups of KL(Cat(phi) || Uniform(group_size)), 0 ln 0 = 0.
// Every group must sum to 1 within 1e-6.
double aib_term(std::span<const std::vector<double>> phi, std::span<const double> group_sizes);

struct MixturePrior {
  std::vector<double> weights;  // m, positive, summing to 1
  Tensor means;                 // m x D
  Tensor sigmas;                // m x D, positive
};

// sum_v [ log N(z_v; mu_v, sigma_v^2) - log sum_i w_i N(z_v; mu0_i, sigma0_i^2) ].
double xib_term(const Tensor& z, const Tensor& mu, const Tensor& sigma, const MixturePrior& prior);

// sum over 1-based layer indices in s_a of aib + sum over s_x of xib.
double structure_mi_estimate(std::span<const double> aib_per_layer, std::span<const double> xib_per_layer,
                             std::span<const int> s_a, std::span<const int> s_x);

// -sum_v CE(softmax(logits_v), y_v): the lower-bound estimate of I(Y;Z).
double task_mi_estimate(const Tensor& logits, std::span<const std::int32_t> labels);

// mean_ce + beta * structure.
double gib_objective(double mean_ce, double structure, double beta);

// Exact I(Y;Z) in nats of a joint probability table (|Y|, |Z| <= 8).
double exact_mi_oracle(const Tensor& joint);

// ---- learnable objective -------------------------------------------------

struct GibConfig {
  double beta = 0.1;
  // 1-based encoder layer indices; empty selects every layer.
  std::vector<int> s_a;
  std::vector<int> s_x;
  int mixture = 2;
};

struct GibHeads {
  std::size_t dim = 0;
  int classes = 0;
  int mixture = 0;
  ParamId mu_w = 0, mu_b = 0;
  ParamId sigma_w = 0, sigma_b = 0;
  ParamId prior_means = 0, prior_sigma_raw = 0, prior_logits = 0;
  ParamId classifier_w = 0, classifier_b = 0;
};

GibHeads make_gib_heads(ParameterSet& ps, const std::string& prefix, std::size_t dim, int classes, int mixture,
                        RngStream& rng);

struct Posterior {
  Var mu;
  Var sigma;
  Var z;
};

// mu = E W_mu + b_mu, sigma = softplus(E W_s + b_s) + 1e-6, z = mu + sigma * eps.
Posterior reparameterize(const ParamBinder& bind, const GibHeads& heads, Var features, RngStream& rng);

// Prior parameters after the softmax / softplus maps.
MixturePrior current_prior(const ParameterSet& ps, const GibHeads& heads);

// AIB of one layer: head-averaged attention renormalized over each node's
// kept neighbors, compared with the uniform distribution over its candidate
// neighborhood (all KNN in-edges).
Var aib_layer(const gnn::GraphView& view, std::span<const gnn::Attention> attention);

Var xib_layer(const ParamBinder& bind, const GibHeads& heads, const Posterior& post);

struct ViewObjective {
  Var total;  // mean CE + beta * (sum AIB + sum XIB)
  Var ce;
  std::vector<Var> aib;  // one per encoder layer
  std::vector<Var> xib;
};

// Objective of one encoded view; node_labels index the graph's nodes.
ViewObjective view_objective(const ParamBinder& bind, const GibHeads& heads, const mask::EncodedView& view,
                             std::span<const std::int32_t> node_labels, const GibConfig& cfg, RngStream& rng);

// Sum of the per-view objectives.
Var joint_view_loss(std::span<const ViewObjective> views);

struct GibTerms {
  std::vector<double> aib_per_layer;
  std::vector<double> xib_per_layer;
  double task_ce = 0.0;
  double total = 0.0;
  double beta = 0.0;
};

GibTerms summarize(const ViewObjective& v, double beta);

}  // namespace gibrss::gib
