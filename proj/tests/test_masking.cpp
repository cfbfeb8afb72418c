#include <gtest/gtest.h>

#include <cmath>

#include "gibrss/errors.hpp"
#include "gibrss/masking.hpp"
#include "support.hpp"

using namespace gibrss;
using namespace gibrss::mask;
using gibrss::testing::random_tensor;

namespace {

struct Stack {
  ParameterSet ps;
  std::vector<gnn::GeBlockParams> blocks;
  Stack(std::size_t dim, int layers, gnn::ConvVariant v, RngStream& rng) {
    for (int l = 0; l < layers; ++l)
      blocks.push_back(gnn::make_ge_block(ps, "l" + std::to_string(l), dim, 2, v, 0.2, rng));
  }
};

Var plain_encode(const ParamBinder& bind, Var x, const graph::PatchGraph& g, std::span<const gnn::GeBlockParams> s) {
  for (const auto& b : s) x = gnn::ge_block(bind, x, gnn::GraphView{&g, std::nullopt}, b).out;
  return x;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST(SampleMask, SaturatedLogits) {
  RngStream rng(21, 0);
  Tape t;
  auto hi = sample_mask(t.constant(Tensor({5000, 1}, 30.0)), 0.5, rng);
  auto lo = sample_mask(t.constant(Tensor({5000, 1}, -30.0)), 0.5, rng);
  for (double v : hi.hard.data()) EXPECT_EQ(v, 1.0);
  for (double v : lo.hard.data()) EXPECT_EQ(v, 0.0);
}

TEST(SampleMask, KeepRateMatchesSigmoid) {
  RngStream rng(21, 1);
  const std::size_t n = 20000;
  for (double logit : {0.0, std::log(3.0), -1.0}) {
    for (double tau : {0.5, 1.0}) {
      Tape t;
      auto m = sample_mask(t.constant(Tensor({n, 1}, logit)), tau, rng);
      double mean = 0;
      for (double v : m.hard.data()) mean += v;
      mean /= static_cast<double>(n);
      const double p = sigmoid(logit);
      EXPECT_NEAR(mean, p, 4.0 * std::sqrt(p * (1 - p) / static_cast<double>(n))) << logit << " " << tau;
    }
  }
}

TEST(SampleMask, HardValuesAreBinaryAndMatchRelaxed) {
  RngStream rng(21, 2);
  Tape t;
  auto m = sample_mask(t.constant(random_tensor({300, 1}, rng, -3, 3)), 0.5, rng);
  for (std::size_t i = 0; i < 300; ++i) {
    EXPECT_TRUE(m.hard[i] == 0.0 || m.hard[i] == 1.0);
    EXPECT_EQ(m.hard[i], m.relaxed[i] > 0.5 ? 1.0 : 0.0);
    EXPECT_EQ(m.gate.value()[i], m.hard[i]);
  }
}

TEST(SampleMask, LowTemperatureRelaxedIsNearlyHard) {
  RngStream rng(21, 3);
  Tape t;
  auto m = sample_mask(t.constant(random_tensor({500, 1}, rng, -3, 3)), 1e-4, rng);
  std::size_t close = 0;
  for (std::size_t i = 0; i < 500; ++i) close += std::abs(m.relaxed[i] - m.hard[i]) < 1e-3;
  EXPECT_GE(close, 495u);
}

TEST(SampleMask, StraightThroughGradient) {
  RngStream rng(21, 4);
  const Tensor logits = random_tensor({6, 1}, rng, -2, 2), noise = random_tensor({6, 1}, rng, -1, 1),
               probe = random_tensor({6, 1}, rng);
  const double tau = 0.5;
  Tape t;
  Var l = t.leaf(logits);
  Var gate = straight_through_bernoulli(l, noise, tau);
  t.backward(sum(mul(gate, t.constant(probe))));
  const Tensor g = t.grad(l);
  for (std::size_t i = 0; i < 6; ++i) {
    const double s = sigmoid((logits[i] + noise[i]) / tau);
    EXPECT_EQ(gate.value()[i], s > 0.5 ? 1.0 : 0.0);
    EXPECT_NEAR(g[i], probe[i] * s * (1 - s) / tau, 1e-14);
  }
}

TEST(SampleMask, SeededReproducible) {
  Tape t;
  Var l = t.constant(Tensor({50, 1}, 0.3));
  RngStream a(5, 9), b(5, 9);
  EXPECT_EQ(sample_mask(l, 0.5, a).hard, sample_mask(l, 0.5, b).hard);
}

TEST(MaskedViews, AllOnesMatchPlainEncoder) {
  RngStream rng(22, 0);
  for (auto v : {gnn::ConvVariant::GAT, gnn::ConvVariant::EdgeConv, gnn::ConvVariant::GIN,
                 gnn::ConvVariant::GraphSAGE}) {
    Stack s(4, 2, v, rng);
    const Tensor x = random_tensor({14, 4}, rng);
    auto g = graph::knn_graph(x, 4);
    Tape t;
    ParamBinder bind{t, s.ps};
    std::vector<MaskSample> nm{fixed_mask(t, Tensor({14, 1}, 1.0)), fixed_mask(t, Tensor({14, 1}, 1.0))};
    std::vector<MaskSample> em{fixed_mask(t, Tensor({g.num_edges(), 1}, 1.0)),
                               fixed_mask(t, Tensor({g.num_edges(), 1}, 1.0))};
    Var ref = plain_encode(bind, t.constant(x), g, s.blocks);
    EXPECT_LT(max_abs_diff(encode_node_view(bind, t.constant(x), g, nm, s.blocks).out.value(), ref.value()), 1e-12);
    EXPECT_LT(max_abs_diff(encode_edge_view(bind, t.constant(x), g, em, s.blocks).out.value(), ref.value()), 1e-12);
  }
}

TEST(MaskedViews, EdgeMaskEqualsGraphSurgery) {
  RngStream rng(22, 1);
  for (auto v : {gnn::ConvVariant::GAT, gnn::ConvVariant::EdgeConv, gnn::ConvVariant::GIN,
                 gnn::ConvVariant::GraphSAGE}) {
    Stack s(4, 1, v, rng);
    const Tensor x = random_tensor({12, 4}, rng);
    auto g = graph::knn_graph(x, 3);
    Tensor keep({g.num_edges(), 1});
    std::vector<std::pair<std::uint32_t, std::uint32_t>> kept;
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      keep[e] = rng.uniform() < 0.6 ? 1.0 : 0.0;
      if (keep[e] != 0.0) kept.emplace_back(g.edges.src[e], g.edges.dst[e]);
    }
    auto cut = graph::graph_from_edges(12, kept, g.grid);
    Tape t;
    ParamBinder bind{t, s.ps};
    std::vector<MaskSample> em{fixed_mask(t, keep)};
    Var masked = encode_edge_view(bind, t.constant(x), g, em, s.blocks).out;
    Var ref = plain_encode(bind, t.constant(x), cut, s.blocks);
    EXPECT_LT(max_abs_diff(masked.value(), ref.value()), 1e-12) << gnn::to_string(v);
  }
}

TEST(MaskedViews, NodeMaskZeroesRows) {
  RngStream rng(22, 2);
  const Tensor x = random_tensor({5, 3}, rng);
  auto g = graph::knn_graph(x, 2);
  Tape t;
  auto m = fixed_mask(t, Tensor::from_rows({{1}, {0}, {1}, {0}, {1}}));
  auto view = node_masked_view(g, t.constant(x), m);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(view.features.value().at(i, c), i % 2 ? 0.0 : x.at(i, c));
  EXPECT_EQ(view.graph, &g);
}

TEST(MaskedViews, AllZeroMasks) {
  RngStream rng(22, 3);
  Stack s(4, 1, gnn::ConvVariant::GAT, rng);
  const Tensor x = random_tensor({10, 4}, rng);
  auto g = graph::knn_graph(x, 3);
  Tape t;
  ParamBinder bind{t, s.ps};
  // node view: every feature row is zero, so the block sees zeros everywhere
  std::vector<MaskSample> nm{fixed_mask(t, Tensor({10, 1}))};
  Var nv = encode_node_view(bind, t.constant(x), g, nm, s.blocks).out;
  Var zero = plain_encode(bind, t.constant(Tensor::zeros(10, 4)), g, s.blocks);
  EXPECT_LT(max_abs_diff(nv.value(), zero.value()), 1e-12);
  // edge view: no messages, only self terms
  std::vector<MaskSample> em{fixed_mask(t, Tensor({g.num_edges(), 1}))};
  Var ev = encode_edge_view(bind, t.constant(x), g, em, s.blocks).out;
  auto empty = graph::graph_from_edges(10, std::span<const std::pair<std::uint32_t, std::uint32_t>>{}, g.grid);
  Var self_only = plain_encode(bind, t.constant(x), empty, s.blocks);
  EXPECT_LT(max_abs_diff(ev.value(), self_only.value()), 1e-12);
}

TEST(EncodeViews, EmptyStack) {
  RngStream rng(23, 0);
  const Tensor x = random_tensor({8, 3}, rng);
  auto g = graph::knn_graph(x, 3);
  ParameterSet ps;
  auto mp = make_mask_params(ps, "m", 8, g.num_edges(), 0.0, 0.5);
  Tape t;
  ParamBinder bind{t, ps};
  auto enc = encode_views(bind, t.constant(x), g, mp, {}, rng);
  ASSERT_TRUE(enc.node_view && enc.edge_view);
  EXPECT_EQ(max_abs_diff(enc.edge_view->out.value(), x), 0.0);
  const auto& out = enc.node_view->out.value();
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_TRUE(out.at(i, c) == 0.0 || out.at(i, c) == x.at(i, c));
}

TEST(EncodeViews, MasksRedrawnPerLayer) {
  RngStream rng(23, 1);
  Stack s(4, 3, gnn::ConvVariant::GAT, rng);
  const Tensor x = random_tensor({40, 4}, rng);
  auto g = graph::knn_graph(x, 4);
  auto mp = make_mask_params(s.ps, "m", 40, g.num_edges(), 0.0, 0.5);
  Tape t;
  ParamBinder bind{t, s.ps};
  auto enc = encode_views(bind, t.constant(x), g, mp, s.blocks, rng);
  ASSERT_EQ(enc.node_view->layers.size(), 3u);
  ASSERT_EQ(enc.edge_view->layers.size(), 3u);
  EXPECT_NE(enc.node_view->layers[0].mask.hard, enc.node_view->layers[1].mask.hard);
  EXPECT_NE(enc.edge_view->layers[1].mask.hard, enc.edge_view->layers[2].mask.hard);
}

TEST(EncodeViews, DisabledViewsAreAbsent) {
  RngStream rng(23, 2);
  Stack s(4, 1, gnn::ConvVariant::GAT, rng);
  const Tensor x = random_tensor({6, 4}, rng);
  auto g = graph::knn_graph(x, 2);
  auto mp = make_mask_params(s.ps, "m", 6, g.num_edges());
  Tape t;
  ParamBinder bind{t, s.ps};
  auto enc = encode_views(bind, t.constant(x), g, mp, s.blocks, rng, ViewOptions{false, true});
  EXPECT_FALSE(enc.node_view);
  EXPECT_TRUE(enc.edge_view);
}

TEST(EncodeViews, MaskSizeMismatch) {
  RngStream rng(23, 3);
  Stack s(4, 1, gnn::ConvVariant::GAT, rng);
  const Tensor x = random_tensor({6, 4}, rng);
  auto g = graph::knn_graph(x, 2);
  auto mp = make_mask_params(s.ps, "m", 7, g.num_edges());
  Tape t;
  ParamBinder bind{t, s.ps};
  EXPECT_ANY_THROW(encode_views(bind, t.constant(x), g, mp, s.blocks, rng));
}
