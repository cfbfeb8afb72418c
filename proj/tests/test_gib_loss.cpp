#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gibrss/errors.hpp"
#include "gibrss/gib_loss.hpp"
#include "support.hpp"

using namespace gibrss;
using namespace gibrss::gib;
using gibrss::testing::random_tensor;

namespace {

constexpr double kLn2 = std::numbers::ln2;

double normal_pdf(double x, double mu, double sigma) {
  return std::exp(-0.5 * (x - mu) * (x - mu) / (sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
}

MixturePrior single(const Tensor& mu, const Tensor& sigma) { return MixturePrior{{1.0}, mu, sigma}; }

struct McStats {
  double mean = 0, se = 0;
};

template <class F>
McStats monte_carlo(int n, F&& draw) {
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = draw();
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  return {mean, std::sqrt((s2 / n - mean * mean) / n)};
}

}  // namespace

TEST(AibTerm, Examples) {
  const std::vector<double> sizes2{2}, sizes4{4};
  std::vector<std::vector<double>> uniform{{0.25, 0.25, 0.25, 0.25}};
  EXPECT_NEAR(aib_term(uniform, sizes4), 0.0, 1e-15);
  std::vector<std::vector<double>> onehot{{1.0, 0.0}};
  EXPECT_NEAR(aib_term(onehot, sizes2), kLn2, 1e-15);
  std::vector<std::vector<double>> skew{{0.75, 0.25}};
  EXPECT_NEAR(aib_term(skew, sizes2), 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-15);
  EXPECT_NEAR(aib_term(skew, sizes2), 0.1308, 5e-5);
}

TEST(AibTerm, SumsOverGroups) {
  std::vector<std::vector<double>> phi{{1.0, 0.0}, {0.75, 0.25}};
  const std::vector<double> sizes{2, 2};
  EXPECT_NEAR(aib_term(phi, sizes), kLn2 + 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-15);
}

TEST(AibTerm, RejectsUnnormalized) {
  std::vector<std::vector<double>> bad{{0.5, 0.49}};
  const std::vector<double> sizes{2};
  EXPECT_THROW(aib_term(bad, sizes), ContractError);
}

TEST(AibTerm, NonNegativeZeroOnlyAtUniform) {
  RngStream rng(31, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.below(7);
    std::vector<double> p(k);
    double s = 0;
    for (auto& v : p) s += v = rng.uniform() + 1e-3;
    for (auto& v : p) v /= s;
    std::vector<std::vector<double>> phi{p};
    const std::vector<double> sizes{static_cast<double>(k)};
    const double a = aib_term(phi, sizes);
    EXPECT_GE(a, -1e-9);
    double dev = 0;
    for (double v : p) dev = std::max(dev, std::abs(v - 1.0 / static_cast<double>(k)));
    if (dev > 1e-3) EXPECT_GT(a, 1e-9);
  }
}

TEST(XibTerm, AtMeanWithDoubledPriorWidth) {
  RngStream rng(32, 0);
  const Tensor mu = random_tensor({1, 4}, rng), sigma = random_tensor({1, 4}, rng, 0.2, 2.0);
  Tensor wide = sigma;
  for (auto& v : wide.data()) v *= 2;
  // log N(mu; mu, s) - log N(mu; mu, 2s) = ln 2 per dimension
  EXPECT_NEAR(xib_term(mu, mu, sigma, single(mu, wide)), 4 * kLn2, 1e-12);
  // nodes sharing the posterior add up
  Tensor mu3({3, 4}), sigma3({3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t d = 0; d < 4; ++d) {
      mu3.at(i, d) = mu[d];
      sigma3.at(i, d) = sigma[d];
    }
  EXPECT_NEAR(xib_term(mu3, mu3, sigma3, single(mu, wide)), 12 * kLn2, 1e-12);
}

TEST(XibTerm, ScalarDensityOracle) {
  RngStream rng(32, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const double z = rng.uniform(-2, 2), mu = rng.uniform(-1, 1), s = rng.uniform(0.3, 2);
    const double w0 = rng.uniform(0.1, 0.9);
    const Tensor means = Tensor::from_rows({{rng.uniform(-1, 1)}, {rng.uniform(-1, 1)}});
    const Tensor sigmas = Tensor::from_rows({{rng.uniform(0.3, 2)}, {rng.uniform(0.3, 2)}});
    MixturePrior prior{{w0, 1 - w0}, means, sigmas};
    const double expected = std::log(normal_pdf(z, mu, s)) -
                            std::log(w0 * normal_pdf(z, means[0], sigmas[0]) + (1 - w0) * normal_pdf(z, means[1], sigmas[1]));
    EXPECT_NEAR(xib_term(Tensor::from_rows({{z}}), Tensor::from_rows({{mu}}), Tensor::from_rows({{s}}), prior), expected,
                1e-12);
  }
}

TEST(XibTerm, RejectsNonPositiveSigma) {
  const Tensor z = Tensor::from_rows({{0.0}});
  EXPECT_THROW(xib_term(z, z, Tensor::from_rows({{0.0}}), single(z, Tensor::from_rows({{1.0}}))), ContractError);
}

TEST(XibTerm, MatchedPriorHasZeroMean) {
  RngStream rng(32, 2);
  const Tensor mu = random_tensor({1, 3}, rng), sigma = random_tensor({1, 3}, rng, 0.5, 1.5);
  const auto prior = single(mu, sigma);
  auto st = monte_carlo(10000, [&] {
    Tensor z = mu;
    for (std::size_t d = 0; d < 3; ++d) z[d] += sigma[d] * rng.normal();
    return xib_term(z, mu, sigma, prior);
  });
  // the log ratio vanishes for every draw, so the spread is zero too
  EXPECT_LE(std::abs(st.mean), 3 * st.se + 1e-12);
}

TEST(XibTerm, MismatchedPriorIsPositive) {
  RngStream rng(32, 3);
  const Tensor mu = random_tensor({1, 3}, rng), sigma = random_tensor({1, 3}, rng, 0.5, 1.5);
  Tensor shifted = mu;
  for (auto& v : shifted.data()) v += 1.0;
  const auto prior = single(shifted, sigma);
  auto st = monte_carlo(10000, [&] {
    Tensor z = mu;
    for (std::size_t d = 0; d < 3; ++d) z[d] += sigma[d] * rng.normal();
    return xib_term(z, mu, sigma, prior);
  });
  EXPECT_GT(st.mean - 3 * st.se, 0.0);
}

TEST(StructureEstimate, Sums) {
  const std::vector<double> aib{0.3, 0.5}, xib{1.25, 2.0};
  EXPECT_EQ(structure_mi_estimate(aib, xib, std::vector<int>{}, std::vector<int>{}), 0.0);
  EXPECT_DOUBLE_EQ(structure_mi_estimate(aib, xib, std::vector<int>{1}, std::vector<int>{1}), 0.3 + 1.25);
  EXPECT_DOUBLE_EQ(structure_mi_estimate(aib, xib, std::vector<int>{1, 2}, std::vector<int>{1, 2}), 0.3 + 0.5 + 1.25 + 2.0);
  EXPECT_DOUBLE_EQ(structure_mi_estimate(aib, xib, std::vector<int>{2}, std::vector<int>{1, 2}), 0.5 + 1.25 + 2.0);
  EXPECT_THROW(structure_mi_estimate(aib, xib, std::vector<int>{3}, std::vector<int>{}), ContractError);
  EXPECT_THROW(structure_mi_estimate(aib, xib, std::vector<int>{0}, std::vector<int>{}), ContractError);
}

TEST(TaskEstimate, Examples) {
  const std::vector<std::int32_t> zero{0};
  EXPECT_NEAR(task_mi_estimate(Tensor::from_rows({{2, 0}}), zero), -std::log1p(std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(-task_mi_estimate(Tensor::from_rows({{2, 0}}), zero), 0.1269, 5e-5);
  const std::vector<std::int32_t> labels{0, 1, 2, 3, 1};
  EXPECT_NEAR(task_mi_estimate(Tensor::zeros(5, 4), labels), -5 * std::log(4.0), 1e-13);
  const double confident = task_mi_estimate(Tensor::from_rows({{60, 0, 0}}), zero);
  EXPECT_LE(confident, 0.0);
  EXPECT_GT(confident, -1e-20);
  EXPECT_THROW(task_mi_estimate(Tensor::from_rows({{1, 0}}), std::vector<std::int32_t>{2}), ContractError);
}

TEST(TaskEstimate, CeNonNegativeAndMaximalAtOneHot) {
  RngStream rng(33, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor logits = random_tensor({4, 3}, rng, -5, 5);
    std::vector<std::int32_t> y(4);
    for (auto& v : y) v = static_cast<std::int32_t>(rng.below(3));
    const double est = task_mi_estimate(logits, y);
    EXPECT_LE(est, 0.0);
    Tensor sharper = logits;
    for (std::size_t i = 0; i < 4; ++i) sharper.at(i, static_cast<std::size_t>(y[i])) += 5.0;
    EXPECT_GT(task_mi_estimate(sharper, y), est);
  }
}

TEST(Objective, Examples) {
  EXPECT_DOUBLE_EQ(gib_objective(0.5, 2.0, 0.1), 0.7);
  EXPECT_EQ(gib_objective(0.5, 2.0, 0.0), 0.5);
  EXPECT_EQ(gib_objective(0.5, 0.0, 3.0), 0.5);
  EXPECT_THROW(gib_objective(0.5, 1.0, -0.1), ContractError);
  double prev = gib_objective(0.3, 1.7, 0.0);
  for (double beta = 0.05; beta < 2; beta += 0.05) {
    const double v = gib_objective(0.3, 1.7, beta);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(ExactMi, Examples) {
  EXPECT_NEAR(exact_mi_oracle(Tensor::from_rows({{0.06, 0.14}, {0.24, 0.56}})), 0.0, 1e-15);
  EXPECT_NEAR(exact_mi_oracle(Tensor::from_rows({{0.5, 0}, {0, 0.5}})), kLn2, 1e-15);
  EXPECT_NEAR(exact_mi_oracle(Tensor::from_rows({{0.4, 0.1}, {0.1, 0.4}})),
              0.8 * std::log(1.6) + 0.2 * std::log(0.4), 1e-15);
  EXPECT_NEAR(exact_mi_oracle(Tensor::from_rows({{0.4, 0.1}, {0.1, 0.4}})), 0.1927, 5e-5);
  EXPECT_THROW(exact_mi_oracle(Tensor::from_rows({{0.4, 0.1}, {0.1, 0.3}})), ContractError);
  EXPECT_THROW(exact_mi_oracle(Tensor::zeros(9, 2)), ContractError);
}

TEST(ExactMi, CeBoundBelowExactMi) {
  // Z is a noisy copy of uniform Y over 4 symbols
  const std::size_t k = 4;
  const double keep = 0.7;
  Tensor joint({k, k});
  for (std::size_t y = 0; y < k; ++y)
    for (std::size_t z = 0; z < k; ++z) joint.at(y, z) = (y == z ? keep : (1 - keep) / (k - 1)) / k;
  const double mi = exact_mi_oracle(joint);
  RngStream rng(34, 0);
  for (double sharpen : {1.0, 0.5, 2.0}) {
    // classifier logits sharpen * log p(y | z); sharpen = 1 is the Bayes posterior
    auto st = monte_carlo(10000, [&] {
      const auto y = static_cast<std::int32_t>(rng.below(k));
      std::size_t z = static_cast<std::size_t>(y);
      if (rng.uniform() >= keep) z = (z + 1 + rng.below(k - 1)) % k;
      Tensor logits({1, k});
      for (std::size_t c = 0; c < k; ++c) logits[c] = sharpen * std::log(joint.at(c, z) * k);
      return std::log(static_cast<double>(k)) + task_mi_estimate(logits, std::vector<std::int32_t>{y});
    });
    EXPECT_LE(st.mean, mi + 3 * st.se) << sharpen;
  }
}

namespace {

struct ViewFixture {
  ParameterSet ps;
  std::vector<gnn::GeBlockParams> blocks;
  GibHeads heads;
  Tensor x;
  graph::PatchGraph g;
  std::vector<std::int32_t> labels;

  ViewFixture(std::size_t n, int layers, std::uint64_t seed) {
    RngStream rng(seed, 0);
    for (int l = 0; l < layers; ++l)
      blocks.push_back(gnn::make_ge_block(ps, "l" + std::to_string(l), 4, 2, gnn::ConvVariant::GAT, 0.2, rng));
    heads = make_gib_heads(ps, "gib", 4, 3, 2, rng);
    x = random_tensor({n, 4}, rng);
    g = graph::knn_graph(x, 2);
    for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<std::int32_t>(rng.below(3)));
  }
};

}  // namespace

TEST(ViewObjective, TotalIsCePlusBetaStructure) {
  ViewFixture f(6, 2, 40);
  Tape t;
  ParamBinder bind{t, f.ps};
  RngStream rng(40, 1);
  auto mp = mask::make_mask_params(f.ps, "m", 6, f.g.num_edges());
  auto enc = mask::encode_views(bind, t.constant(f.x), f.g, mp, f.blocks, rng);
  GibConfig cfg;
  cfg.beta = 0.3;
  auto obj = view_objective(bind, f.heads, *enc.edge_view, f.labels, cfg, rng);
  auto terms = summarize(obj, cfg.beta);
  ASSERT_EQ(terms.aib_per_layer.size(), 2u);
  ASSERT_EQ(terms.xib_per_layer.size(), 2u);
  double structure = 0;
  for (double a : terms.aib_per_layer) {
    EXPECT_GE(a, -1e-9);
    structure += a;
  }
  for (double x : terms.xib_per_layer) structure += x;
  EXPECT_NEAR(terms.total, terms.task_ce + 0.3 * structure, 1e-10 * std::max(1.0, std::abs(terms.total)));
  EXPECT_NEAR(obj.total.value().item(), terms.total, 0.0);
}

TEST(ViewObjective, UniformAttentionHasZeroAib) {
  ViewFixture f(6, 1, 41);
  Tape t;
  ParamBinder bind{t, f.ps};
  gnn::GraphView view{&f.g, std::nullopt};
  auto out = gnn::ge_block(bind, t.constant(Tensor({6, 4}, 0.5)), view, f.blocks[0]);
  EXPECT_NEAR(aib_layer(view, out.attention).value().item(), 0.0, 1e-12);
}

TEST(JointViewLoss, IdenticalAllKeepViewsDouble) {
  ViewFixture f(5, 2, 42);
  Tape t;
  ParamBinder bind{t, f.ps};
  std::vector<mask::MaskSample> nm, em;
  for (int l = 0; l < 2; ++l) {
    nm.push_back(mask::fixed_mask(t, Tensor({5, 1}, 1.0)));
    em.push_back(mask::fixed_mask(t, Tensor({f.g.num_edges(), 1}, 1.0)));
  }
  auto nd = mask::encode_node_view(bind, t.constant(f.x), f.g, nm, f.blocks);
  auto ed = mask::encode_edge_view(bind, t.constant(f.x), f.g, em, f.blocks);
  GibConfig cfg;
  RngStream r1(42, 7), r2(42, 7);
  std::vector<ViewObjective> objs{view_objective(bind, f.heads, nd, f.labels, cfg, r1),
                                  view_objective(bind, f.heads, ed, f.labels, cfg, r2)};
  const double single = objs[0].total.value().item();
  EXPECT_NEAR(objs[1].total.value().item(), single, 1e-12 * std::abs(single));
  EXPECT_NEAR(joint_view_loss(objs).value().item(), 2 * single, 1e-12 * std::abs(single));
}

TEST(JointViewLoss, ZeroBetaIsSumOfCe) {
  ViewFixture f(3, 1, 43);
  Tape t;
  ParamBinder bind{t, f.ps};
  RngStream rng(43, 1);
  auto mp = mask::make_mask_params(f.ps, "m", 3, f.g.num_edges());
  auto enc = mask::encode_views(bind, t.constant(f.x), f.g, mp, f.blocks, rng);
  GibConfig cfg;
  cfg.beta = 0.0;
  std::vector<ViewObjective> objs{view_objective(bind, f.heads, *enc.edge_view, f.labels, cfg, rng),
                                  view_objective(bind, f.heads, *enc.node_view, f.labels, cfg, rng)};
  EXPECT_NEAR(joint_view_loss(objs).value().item(), objs[0].ce.value().item() + objs[1].ce.value().item(), 1e-14);
}

TEST(JointViewLoss, SumOfIndependentObjectives) {
  ViewFixture f(3, 1, 44);
  Tape t;
  ParamBinder bind{t, f.ps};
  RngStream rng(44, 1);
  auto mp = mask::make_mask_params(f.ps, "m", 3, f.g.num_edges());
  auto enc = mask::encode_views(bind, t.constant(f.x), f.g, mp, f.blocks, rng);
  GibConfig cfg;
  RngStream a(44, 2), b(44, 3);
  std::vector<ViewObjective> objs{view_objective(bind, f.heads, *enc.edge_view, f.labels, cfg, a),
                                  view_objective(bind, f.heads, *enc.node_view, f.labels, cfg, b)};
  RngStream a2(44, 2), b2(44, 3);
  const double ed = view_objective(bind, f.heads, *enc.edge_view, f.labels, cfg, a2).total.value().item();
  const double nd = view_objective(bind, f.heads, *enc.node_view, f.labels, cfg, b2).total.value().item();
  EXPECT_NEAR(joint_view_loss(objs).value().item(), ed + nd, 1e-12 * std::abs(ed + nd));
}

TEST(GibHeads, PriorIsValid) {
  ViewFixture f(3, 1, 45);
  auto prior = current_prior(f.ps, f.heads);
  ASSERT_EQ(prior.weights.size(), 2u);
  EXPECT_NEAR(prior.weights[0] + prior.weights[1], 1.0, 1e-15);
  for (double w : prior.weights) EXPECT_GT(w, 0.0);
  for (double s : prior.sigmas.data()) EXPECT_GT(s, 0.0);
  EXPECT_FALSE(f.ps.regularized(f.heads.prior_means));
}

TEST(GibHeads, GradientCheck) {
  for (const auto& c : gibrss::testing::op_gradient_suite(3, 46))
    if (c.name.find("gib") != std::string::npos || c.name.find("mixture") != std::string::npos ||
        c.name.find("gaussian") != std::string::npos || c.name.find("kl") != std::string::npos)
      EXPECT_LT(c.max_rel_error, 1e-4) << c.name;
}
