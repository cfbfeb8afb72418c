#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gibrss/gib_loss.hpp"
#include "gibrss/gnn_block.hpp"
#include "gibrss/ops.hpp"

namespace gibrss::testing {

Tensor random_tensor(Shape shape, RngStream& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

namespace {

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kRelFloor}); }

// Central differences straddling a leaky/max kink disagree by O(1) in the
// slope; a coordinate that looks bad is rechecked with a much smaller step.
// A wrong backward disagrees at both steps.
constexpr double kKinkRecheck = 1e-5;
constexpr double kFineStep = 1e-7;

template <class Eval>
double coord_error(double analytic, double orig, double eps, Eval&& value) {
  const double err = rel_err(analytic, (value(orig + eps) - value(orig - eps)) / (2 * eps));
  if (err <= kKinkRecheck) return err;
  return std::min(err, rel_err(analytic, (value(orig + kFineStep) - value(orig - kFineStep)) / (2 * kFineStep)));
}

double eval_at(const std::vector<Tensor>& inputs, const LossFn& f) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(t.constant(x));
  return f(t, vars).value().item();
}

// scalar probe: sum(out * w) with fixed random weights
Var probe(Tape& t, Var out, std::uint64_t key) {
  RngStream r(0xfeed, key);
  return sum(mul(out, t.constant(random_tensor(out.shape(), r))));
}

double param_gradient_error(ParameterSet& ps, const std::function<Var(const ParamBinder&)>& f, double eps = 1e-5) {
  Tape tape;
  ParamBinder bind{tape, ps};
  Var loss = f(bind);
  tape.backward(loss);
  Gradients g(ps);
  tape.collect(g);
  double worst = 0.0;
  for (ParamId id = 0; id < ps.size(); ++id) {
    Tensor& v = ps.value(id);
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double orig = v[k];
      auto value = [&](double x) {
        v[k] = x;
        Tape t;
        ParamBinder b{t, ps};
        return f(b).value().item();
      };
      const double err = coord_error(g.get(id)[k], orig, eps, value);
      v[k] = orig;
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

double gradient_error(const std::vector<Tensor>& inputs, const LossFn& f, double eps) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x));
  tape.backward(f(tape, vars));
  double worst = 0.0;
  std::vector<Tensor> probe_in = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = tape.grad(vars[i]);
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double orig = probe_in[i][k];
      const double err = coord_error(analytic[k], orig, eps, [&](double x) {
        probe_in[i][k] = x;
        return eval_at(probe_in, f);
      });
      probe_in[i][k] = orig;
      worst = std::max(worst, err);
    }
  }
  return worst;
}

graph::PatchGraph random_graph(std::size_t n, RngStream& rng, std::size_t max_in) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t deg = rng.below(max_in + 1);
    for (std::size_t d = 0; d < deg; ++d) {
      auto j = static_cast<std::uint32_t>(rng.below(n));
      if (j == i) j = static_cast<std::uint32_t>((j + 1) % n);
      pairs.emplace_back(j, static_cast<std::uint32_t>(i));
    }
  }
  return graph::graph_from_edges(n, pairs, graph::GridDims{n, 1});
}

std::vector<OpCheck> op_gradient_suite(int trials, std::uint64_t seed) {
  std::vector<OpCheck> out;
  RngStream rng(seed, 0x6f70);
  auto run = [&](const std::string& name, const std::function<double(RngStream&)>& trial) {
    OpCheck c{name, 0.0};
    for (int t = 0; t < trials; ++t) {
      RngStream r = rng.split(out.size() * 1000 + static_cast<std::uint64_t>(t));
      c.max_rel_error = std::max(c.max_rel_error, trial(r));
    }
    out.push_back(c);
  };
  auto unary = [&](const std::string& name, Shape shape, std::function<Var(Var)> op) {
    run(name, [=](RngStream& r) {
      return gradient_error({random_tensor(shape, r, -2, 2)},
                            [&](Tape& t, std::span<const Var> v) { return probe(t, op(v[0]), 1); });
    });
  };
  auto binary = [&](const std::string& name, Shape sa, Shape sb, std::function<Var(Var, Var)> op) {
    run(name, [=](RngStream& r) {
      return gradient_error({random_tensor(sa, r, -2, 2), random_tensor(sb, r, -2, 2)},
                            [&](Tape& t, std::span<const Var> v) { return probe(t, op(v[0], v[1]), 2); });
    });
  };

  binary("matmul", {3, 4}, {4, 2}, [](Var a, Var b) { return matmul(a, b); });
  binary("add", {3, 3}, {3, 3}, [](Var a, Var b) { return add(a, b); });
  binary("sub", {3, 3}, {3, 3}, [](Var a, Var b) { return sub(a, b); });
  binary("mul", {3, 3}, {3, 3}, [](Var a, Var b) { return mul(a, b); });
  unary("scale", {3, 4}, [](Var a) { return scale(a, 2.5); });
  binary("add_row", {3, 4}, {1, 4}, [](Var a, Var b) { return add_row(a, b); });
  binary("row_scale", {3, 4}, {3, 1}, [](Var a, Var b) { return row_scale(a, b); });
  unary("reshape", {3, 4}, [](Var a) { return reshape(a, {6, 2}); });
  unary("leaky_relu", {4, 4}, [](Var a) { return leaky_relu(a, 0.2); });
  unary("sigmoid", {4, 4}, [](Var a) { return sigmoid(a); });
  unary("softplus", {4, 4}, [](Var a) { return softplus(a); });
  unary("softmax_rows", {3, 5}, [](Var a) { return softmax_rows(a); });
  unary("log_softmax_rows", {3, 5}, [](Var a) { return log_softmax_rows(a); });
  run("cross_entropy", [](RngStream& r) {
    std::vector<std::int32_t> labels(4);
    for (auto& l : labels) l = static_cast<std::int32_t>(r.below(3));
    return gradient_error({random_tensor({4, 3}, r, -2, 2)},
                          [&](Tape&, std::span<const Var> v) { return cross_entropy(v[0], labels); });
  });
  run("sum", [](RngStream& r) {
    return gradient_error({random_tensor({3, 4}, r)}, [](Tape&, std::span<const Var> v) { return sum(v[0]); });
  });
  run("mean", [](RngStream& r) {
    return gradient_error({random_tensor({3, 4}, r)}, [](Tape&, std::span<const Var> v) { return mean(v[0]); });
  });
  run("sum_squares", [](RngStream& r) {
    return gradient_error({random_tensor({3, 4}, r)}, [](Tape&, std::span<const Var> v) { return sum_squares(v[0]); });
  });
  binary("concat_cols", {3, 2}, {3, 3}, [](Var a, Var b) { return concat_cols(std::vector<Var>{a, b}); });
  unary("slice_cols", {3, 5}, [](Var a) { return slice_cols(a, 1, 4); });
  unary("gather_rows", {4, 3}, [](Var a) {
    const std::vector<std::uint32_t> idx{0, 2, 2, 3, 1, 2};
    return gather_rows(a, idx);
  });

  for (bool self : {true, false})
    run(std::string("segment_attention_softmax") + (self ? "" : "_noself"), [self](RngStream& r) {
      const auto g = random_graph(6, r);
      const std::size_t e = g.num_edges();
      if (e == 0) return 0.0;
      return gradient_error({random_tensor({6, 1}, r, -2, 2), random_tensor({6, 1}, r, -2, 2),
                             random_tensor({e, 1}, r, 0.5, 1.5)},
                            [&](Tape& t, std::span<const Var> v) {
                              return probe(t, segment_attention_softmax(v[0], v[1], g.edges, &v[2], self), 3);
                            });
    });
  run("segment_weighted_sum", [](RngStream& r) {
    const auto g = random_graph(6, r);
    const std::size_t e = g.num_edges();
    if (e == 0) return 0.0;
    std::vector<double> scale_v(6);
    for (auto& s : scale_v) s = r.uniform(0.2, 1.0);
    return gradient_error({random_tensor({e, 1}, r), random_tensor({6, 3}, r)}, [&](Tape& t, std::span<const Var> v) {
      return probe(t, segment_weighted_sum(v[0], v[1], g.edges, scale_v), 4);
    });
  });
  run("segment_max", [](RngStream& r) {
    const auto g = random_graph(6, r);
    const std::size_t e = g.num_edges();
    if (e == 0) return 0.0;
    std::vector<double> keep(e);
    for (auto& k : keep) k = r.uniform() < 0.8 ? 1.0 : 0.0;
    return gradient_error({random_tensor({e, 3}, r)},
                          [&](Tape& t, std::span<const Var> v) { return probe(t, segment_max(v[0], g.edges, keep), 5); });
  });
  run("segment_normalize", [](RngStream& r) {
    const auto g = random_graph(6, r);
    const std::size_t e = g.num_edges();
    if (e == 0) return 0.0;
    return gradient_error({random_tensor({e, 1}, r, 0.2, 1.5)},
                          [&](Tape& t, std::span<const Var> v) { return probe(t, segment_normalize(v[0], g.edges), 6); });
  });
  run("categorical_kl_uniform", [](RngStream& r) {
    const auto g = random_graph(6, r);
    const std::size_t e = g.num_edges();
    if (e == 0) return 0.0;
    std::vector<double> groups(6);
    for (std::size_t i = 0; i < 6; ++i) groups[i] = static_cast<double>(g.edges.in_degree(i) + r.below(2));
    return gradient_error({random_tensor({e, 1}, r, -1, 1)}, [&](Tape&, std::span<const Var> v) {
      return categorical_kl_uniform(segment_normalize(softplus(v[0]), g.edges), g.edges, groups);
    });
  });
  run("gaussian_log_density", [](RngStream& r) {
    return gradient_error({random_tensor({3, 4}, r), random_tensor({3, 4}, r), random_tensor({3, 4}, r, 0.5, 1.5)},
                          [](Tape& t, std::span<const Var> v) {
                            return probe(t, gaussian_log_density(v[0], v[1], v[2]), 7);
                          });
  });
  run("mixture_log_density", [](RngStream& r) {
    return gradient_error({random_tensor({3, 4}, r), random_tensor({2, 4}, r), random_tensor({2, 4}, r, 0.5, 1.5),
                           random_tensor({1, 2}, r)},
                          [](Tape& t, std::span<const Var> v) {
                            return probe(t, mixture_log_density(v[0], v[1], v[2], log_softmax_rows(v[3])), 8);
                          });
  });
  for (int stride : {1, 2})
    run("grid_conv3x3_stride" + std::to_string(stride), [stride](RngStream& r) {
      const graph::GridDims grid{5, 4};
      return gradient_error({random_tensor({20, 2}, r), random_tensor({18, 3}, r), random_tensor({1, 3}, r)},
                            [&](Tape& t, std::span<const Var> v) {
                              return probe(t, graph::grid_conv3x3(v[0], grid, v[1], v[2], stride), 9);
                            });
    });

  // composite layers, parameters included
  for (auto variant : {gnn::ConvVariant::GAT, gnn::ConvVariant::EdgeConv, gnn::ConvVariant::GIN,
                       gnn::ConvVariant::GraphSAGE})
    for (bool gated : {false, true})
      run("ge_block_" + gnn::to_string(variant) + (gated ? "_gated" : ""), [=](RngStream& r) {
        ParameterSet ps;
        const auto x0 = random_tensor({7, 4}, r);
        const auto g = graph::knn_graph(x0, 3);
        Tensor gate({g.num_edges(), 1}, 1.0);
        for (auto& v : gate.data()) v = r.uniform() < 0.7 ? 1.0 : 0.0;
        const auto blk = gnn::make_ge_block(ps, "b", 4, 2, variant, 0.2, r);
        const auto xid = ps.add("x", x0);
        return param_gradient_error(ps, [&](const ParamBinder& b) {
          gnn::GraphView view{&g, std::nullopt};
          if (gated) view.edge_gate = b.tape.constant(gate);
          return probe(b.tape, gnn::ge_block(b, b(xid), view, blk).out, 10);
        });
      });
  run("gib_view_terms", [](RngStream& r) {
    ParameterSet ps;
    const auto x0 = random_tensor({6, 4}, r);
    const auto g = graph::knn_graph(x0, 3);
    const auto heads = gib::make_gib_heads(ps, "g", 4, 3, 2, r);
    const auto xid = ps.add("x", x0);
    const auto att_dst = ps.add("ad", random_tensor({4, 1}, r));
    const auto att_src = ps.add("as", random_tensor({4, 1}, r));
    const std::uint64_t noise_key = r.next_u64();
    return param_gradient_error(ps, [&](const ParamBinder& b) {
      gnn::GraphView view{&g, std::nullopt};
      auto att = gnn::edge_attention(b(xid), view, b(att_dst), b(att_src));
      RngStream nr(noise_key, 0);
      auto post = gib::reparameterize(b, heads, b(xid), nr);
      return add(gib::aib_layer(view, std::vector<gnn::Attention>{att}), gib::xib_layer(b, heads, post));
    });
  });
  return out;
}

seg::SegModelConfig tiny_config() {
  seg::SegModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.dim = 8;
  c.heads = 2;
  c.stages = 1;
  c.k = 3;
  c.classes = 3;
  c.epochs = 1;
  c.batch_size = 2;
  return c;
}

double model_gradient_error(int trials, std::uint64_t seed, int per_param) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    seg::SegModelConfig cfg = tiny_config();
    cfg.seed = seed + static_cast<std::uint64_t>(t);
    seg::SegModel model = seg::build_model(cfg);
    RngStream r(seed, 0x6d67 + static_cast<std::uint64_t>(t));
    Image img(16, 16, 3);
    for (auto& v : img.pixels) v = r.uniform();
    LabelMap lab(16, 16);
    for (auto& l : lab.labels) l = static_cast<std::int32_t>(r.below(3));
    const RngStream sample_rng = r.split(1);
    const auto base = seg::run_sample(model, img, lab, sample_rng, true);
    std::vector<bool> skip(model.params.size(), false);
    for (const auto& v : model.views) {
      skip[v.masks.node_logits] = true;
      skip[v.masks.edge_logits] = true;
    }
    const double eps = 1e-5;
    for (ParamId id = 0; id < model.params.size(); ++id) {
      if (skip[id]) continue;
      Tensor& p = model.params.value(id);
      for (int probe_i = 0; probe_i < per_param; ++probe_i) {
        const std::size_t k = r.below(p.size());
        const double orig = p[k];
        p[k] = orig + eps;
        const double up = seg::run_sample(model, img, lab, sample_rng, false).loss.total;
        p[k] = orig - eps;
        const double down = seg::run_sample(model, img, lab, sample_rng, false).loss.total;
        p[k] = orig;
        worst = std::max(worst, rel_err(base.grads.get(id)[k], (up - down) / (2 * eps)));
      }
    }
  }
  return worst;
}

std::set<std::pair<std::uint32_t, std::uint32_t>> brute_force_knn(const Tensor& x, int k) {
  const std::size_t n = x.rows(), d = x.cols();
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
  std::set<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = x.at(i, c) - x.at(j, c);
        s += diff * diff;
      }
      cand.emplace_back(s, j);
    }
    std::sort(cand.begin(), cand.end());
    for (std::size_t r = 0; r < kk; ++r)
      out.emplace(static_cast<std::uint32_t>(cand[r].second), static_cast<std::uint32_t>(i));
  }
  return out;
}

std::set<std::pair<std::uint32_t, std::uint32_t>> edge_set(const graph::PatchGraph& g) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::size_t e = 0; e < g.num_edges(); ++e) out.emplace(g.edges.src[e], g.edges.dst[e]);
  return out;
}

}  // namespace gibrss::testing
