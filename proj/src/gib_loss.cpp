#include "gibrss/gib_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gibrss/errors.hpp"
#include "gibrss/ops.hpp"

namespace gibrss::gib {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kSigmaFloor = 1e-6;

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

double log_normal(double z, double mu, double sigma) {
  const double r = (z - mu) / sigma;
  return -0.5 * kLog2Pi - std::log(sigma) - 0.5 * r * r;
}

bool selected(std::span<const int> set, std::size_t layer_index0) {
  if (set.empty()) return true;
  return std::find(set.begin(), set.end(), static_cast<int>(layer_index0 + 1)) != set.end();
}
}  // namespace

double aib_term(std::span<const std::vector<double>> phi, std::span<const double> group_sizes) {
  if (phi.size() != group_sizes.size()) throw DimensionError("aib_term: one group size per distribution");
  double total = 0.0;
  for (std::size_t v = 0; v < phi.size(); ++v) {
    double s = 0.0;
    for (double p : phi[v]) {
      require(p >= 0.0, "aib_term: negative probability");
      s += p;
    }
    require(std::abs(s - 1.0) <= 1e-6, "aib_term: distribution " + std::to_string(v) + " sums to " + std::to_string(s));
    require(group_sizes[v] >= static_cast<double>(phi[v].size()) && group_sizes[v] > 0,
            "aib_term: group size smaller than the distribution support");
    for (double p : phi[v])
      if (p > 0.0) total += p * std::log(p * group_sizes[v]);
  }
  return total;
}

double xib_term(const Tensor& z, const Tensor& mu, const Tensor& sigma, const MixturePrior& prior) {
  const std::size_t n = z.rows(), d = z.cols(), m = prior.weights.size();
  if (mu.size() != z.size() || sigma.size() != z.size()) throw DimensionError("xib_term: z, mu, sigma shapes differ");
  if (prior.means.rows() != m || prior.means.cols() != d || prior.sigmas.rows() != m || prior.sigmas.cols() != d)
    throw DimensionError("xib_term: prior shapes do not match");
  for (double s : sigma.data()) require(s > 0.0, "xib_term: sigma must be > 0");
  for (double s : prior.sigmas.data()) require(s > 0.0, "xib_term: prior sigma must be > 0");
  double total = 0.0;
  std::vector<double> comp(m);
  for (std::size_t v = 0; v < n; ++v) {
    double post = 0.0;
    for (std::size_t c = 0; c < d; ++c) post += log_normal(z.at(v, c), mu.at(v, c), sigma.at(v, c));
    for (std::size_t i = 0; i < m; ++i) {
      comp[i] = std::log(prior.weights[i]);
      for (std::size_t c = 0; c < d; ++c) comp[i] += log_normal(z.at(v, c), prior.means.at(i, c), prior.sigmas.at(i, c));
    }
    const double mx = *std::max_element(comp.begin(), comp.end());
    double s = 0.0;
    for (double cv : comp) s += std::exp(cv - mx);
    total += post - (mx + std::log(s));
  }
  return total;
}

double structure_mi_estimate(std::span<const double> aib_per_layer, std::span<const double> xib_per_layer,
                             std::span<const int> s_a, std::span<const int> s_x) {
  double total = 0.0;
  for (int l : s_a) {
    require(l >= 1 && static_cast<std::size_t>(l) <= aib_per_layer.size(),
            "structure_mi_estimate: S_A layer " + std::to_string(l) + " out of range");
    total += aib_per_layer[static_cast<std::size_t>(l - 1)];
  }
  for (int l : s_x) {
    require(l >= 1 && static_cast<std::size_t>(l) <= xib_per_layer.size(),
            "structure_mi_estimate: S_X layer " + std::to_string(l) + " out of range");
    total += xib_per_layer[static_cast<std::size_t>(l - 1)];
  }
  return total;
}

double task_mi_estimate(const Tensor& logits, std::span<const std::int32_t> labels) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw DimensionError("task_mi_estimate: one label per node");
  double total = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    const auto y = labels[v];
    require(y >= 0 && static_cast<std::size_t>(y) < c, "task_mi_estimate: label " + std::to_string(y) + " out of range");
    double mx = logits.at(v, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(v, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(logits.at(v, j) - mx);
    total -= mx + std::log(s) - logits.at(v, static_cast<std::size_t>(y));
  }
  return total;
}

double gib_objective(double mean_ce, double structure, double beta) {
  require(beta >= 0.0, "gib_objective: beta must be >= 0");
  return mean_ce + beta * structure;
}

double exact_mi_oracle(const Tensor& joint) {
  const std::size_t ny = joint.rows(), nz = joint.cols();
  require(ny >= 1 && ny <= 8 && nz >= 1 && nz <= 8, "exact_mi_oracle: table must be at most 8x8");
  double total = 0.0;
  for (double p : joint.data()) {
    require(p >= 0.0, "exact_mi_oracle: negative probability");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-9, "exact_mi_oracle: table sums to " + std::to_string(total));
  std::vector<double> py(ny, 0.0), pz(nz, 0.0);
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t z = 0; z < nz; ++z) {
      py[y] += joint.at(y, z);
      pz[z] += joint.at(y, z);
    }
  double mi = 0.0;
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t z = 0; z < nz; ++z) {
      const double p = joint.at(y, z);
      if (p > 0.0) mi += p * std::log(p / (py[y] * pz[z]));
    }
  return mi;
}

GibHeads make_gib_heads(ParameterSet& ps, const std::string& prefix, std::size_t dim, int classes, int mixture,
                        RngStream& rng) {
  require(mixture >= 1, "mixture size must be >= 1");
  require(classes >= 2, "need at least 2 classes");
  GibHeads h;
  h.dim = dim;
  h.classes = classes;
  h.mixture = mixture;
  h.mu_w = ps.add(prefix + ".mu_w", gnn::xavier_uniform(dim, dim, rng));
  h.mu_b = ps.add(prefix + ".mu_b", Tensor({1, dim}));
  h.sigma_w = ps.add(prefix + ".sigma_w", gnn::xavier_uniform(dim, dim, rng));
  h.sigma_b = ps.add(prefix + ".sigma_b", Tensor({1, dim}, softplus_inverse(0.5)));
  const auto m = static_cast<std::size_t>(mixture);
  Tensor means({m, dim});
  for (auto& v : means.data()) v = 0.5 * rng.normal();
  h.prior_means = ps.add(prefix + ".prior_means", std::move(means), false);
  h.prior_sigma_raw = ps.add(prefix + ".prior_sigma_raw", Tensor({m, dim}, softplus_inverse(1.0)), false);
  h.prior_logits = ps.add(prefix + ".prior_logits", Tensor({1, m}), false);
  h.classifier_w = ps.add(prefix + ".classifier_w", gnn::xavier_uniform(dim, static_cast<std::size_t>(classes), rng));
  h.classifier_b = ps.add(prefix + ".classifier_b", Tensor({1, static_cast<std::size_t>(classes)}));
  return h;
}

namespace {
Var floor_sigma(Tape& tape, Var raw) {
  return add_row(softplus(raw), tape.constant(Tensor({1, raw.cols()}, kSigmaFloor)));
}
}  // namespace

Posterior reparameterize(const ParamBinder& bind, const GibHeads& heads, Var features, RngStream& rng) {
  Posterior p;
  p.mu = add_row(matmul(features, bind(heads.mu_w)), bind(heads.mu_b));
  p.sigma = floor_sigma(bind.tape, add_row(matmul(features, bind(heads.sigma_w)), bind(heads.sigma_b)));
  Tensor eps(p.mu.shape());
  for (auto& e : eps.data()) e = rng.normal();
  p.z = add(p.mu, mul(p.sigma, bind.tape.constant(std::move(eps))));
  return p;
}

MixturePrior current_prior(const ParameterSet& ps, const GibHeads& heads) {
  MixturePrior prior;
  const Tensor& logits = ps.value(heads.prior_logits);
  const double mx = *std::max_element(logits.data().begin(), logits.data().end());
  double s = 0.0;
  for (double l : logits.data()) s += std::exp(l - mx);
  for (double l : logits.data()) prior.weights.push_back(std::exp(l - mx) / s);
  prior.means = ps.value(heads.prior_means);
  prior.sigmas = ps.value(heads.prior_sigma_raw);
  for (auto& v : prior.sigmas.data()) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) + kSigmaFloor;
  return prior;
}

Var aib_layer(const gnn::GraphView& view, std::span<const gnn::Attention> attention) {
  require(!attention.empty(), "aib_layer: no attention");
  const auto& edges = view.graph->edges;
  Var avg;
  for (const auto& a : attention) {
    Var phi = segment_normalize(a.edge, edges);
    avg = avg.valid() ? add(avg, phi) : phi;
  }
  if (attention.size() > 1) avg = scale(avg, 1.0 / static_cast<double>(attention.size()));
  std::vector<double> group(edges.num_nodes);
  for (std::size_t i = 0; i < edges.num_nodes; ++i) group[i] = static_cast<double>(edges.in_degree(i));
  return categorical_kl_uniform(avg, edges, group);
}

Var xib_layer(const ParamBinder& bind, const GibHeads& heads, const Posterior& post) {
  Var log_post = gaussian_log_density(post.z, post.mu, post.sigma);
  Var log_w = log_softmax_rows(bind(heads.prior_logits));
  Var sig0 = floor_sigma(bind.tape, bind(heads.prior_sigma_raw));
  Var log_prior = mixture_log_density(post.z, bind(heads.prior_means), sig0, log_w);
  return sum(sub(log_post, log_prior));
}

ViewObjective view_objective(const ParamBinder& bind, const GibHeads& heads, const mask::EncodedView& view,
                             std::span<const std::int32_t> node_labels, const GibConfig& cfg, RngStream& rng) {
  require(cfg.beta >= 0.0, "view_objective: beta must be >= 0");
  ViewObjective out;
  Posterior last;
  if (view.layers.empty()) {
    RngStream r = rng.split(0);
    last = reparameterize(bind, heads, view.out, r);
    out.xib.push_back(xib_layer(bind, heads, last));
  }
  for (std::size_t l = 0; l < view.layers.size(); ++l) {
    const auto& layer = view.layers[l];
    RngStream r = rng.split(l);
    last = reparameterize(bind, heads, layer.out, r);
    out.xib.push_back(xib_layer(bind, heads, last));
    if (layer.view.graph && layer.view.graph->num_edges() > 0) out.aib.push_back(aib_layer(layer.view, layer.attention));
  }
  Var logits = add_row(matmul(last.z, bind(heads.classifier_w)), bind(heads.classifier_b));
  out.ce = cross_entropy(logits, node_labels);
  Var structure;
  auto accumulate = [&](const std::vector<Var>& terms, const std::vector<int>& set) {
    for (std::size_t l = 0; l < terms.size(); ++l)
      if (selected(set, l)) structure = structure.valid() ? add(structure, terms[l]) : terms[l];
  };
  accumulate(out.aib, cfg.s_a);
  accumulate(out.xib, cfg.s_x);
  out.total = structure.valid() && cfg.beta > 0.0 ? add(out.ce, scale(structure, cfg.beta)) : out.ce;
  return out;
}

Var joint_view_loss(std::span<const ViewObjective> views) {
  require(!views.empty(), "joint_view_loss: no views");
  Var total = views[0].total;
  for (std::size_t i = 1; i < views.size(); ++i) total = add(total, views[i].total);
  return total;
}

GibTerms summarize(const ViewObjective& v, double beta) {
  GibTerms t;
  for (const auto& a : v.aib) t.aib_per_layer.push_back(a.value().item());
  for (const auto& x : v.xib) t.xib_per_layer.push_back(x.value().item());
  t.task_ce = v.ce.value().item();
  t.total = v.total.value().item();
  t.beta = beta;
  return t;
}

}  // namespace gibrss::gib
