#include "gibrss/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "gibrss/errors.hpp"
#include "gibrss/kernels.hpp"

namespace gibrss {

namespace {

using kernels::Trans;

void same_size(const char* op, Var a, Var b) {
  if (a.value().size() != b.value().size() || a.rows() != b.rows())
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.data())
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
}

void check_edges(const char* op, const InEdges& e, std::size_t n_nodes) {
  if (e.num_nodes != n_nodes || e.offsets.size() != n_nodes + 1 || e.dst.size() != e.src.size())
    throw DimensionError(std::string(op) + ": edge index built for " + std::to_string(e.num_nodes) +
                         " nodes, tensor has " + std::to_string(n_nodes));
}

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

InEdges InEdges::from_pairs(std::size_t num_nodes, std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pairs[a].second < pairs[b].second; });
  InEdges e;
  e.num_nodes = num_nodes;
  e.src.reserve(pairs.size());
  e.dst.reserve(pairs.size());
  e.offsets.assign(num_nodes + 1, 0);
  for (auto k : order) {
    const auto [s, d] = pairs[k];
    if (s >= num_nodes || d >= num_nodes)
      throw ContractError("edge " + std::to_string(s) + "->" + std::to_string(d) + " out of range for " +
                          std::to_string(num_nodes) + " nodes");
    e.src.push_back(s);
    e.dst.push_back(d);
    ++e.offsets[d + 1];
  }
  for (std::size_t i = 0; i < num_nodes; ++i) e.offsets[i + 1] += e.offsets[i];
  return e;
}

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows())
    throw DimensionError("matmul: inner extents differ, " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const kernels::GemmDims d{A.rows(), B.cols(), A.cols()};
  Tensor C({d.m, d.n});
  kernels::gemm(Trans::No, Trans::No, d, A.data(), B.data(), C.data(), false);
  return a.tape()->record(std::move(C), {a, b}, [a, b, d](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a))
      kernels::gemm(Trans::No, Trans::Yes, {d.m, d.k, d.n}, g.data(), b.value().data(), ga->data(), true);
    if (Tensor* gb = t.grad_sink(b))
      kernels::gemm(Trans::Yes, Trans::No, {d.k, d.n, d.m}, a.value().data(), g.data(), gb->data(), true);
  });
}

Var add(Var a, Var b) {
  same_size("add", a, b);
  Tensor out = a.value();
  out.add_(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a)) ga->add_(g);
    if (Tensor* gb = t.grad_sink(b)) gb->add_(g);
  });
}

Var sub(Var a, Var b) {
  same_size("sub", a, b);
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a)) ga->add_(g);
    if (Tensor* gb = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  same_size("mul", a, b);
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
    if (Tensor* gb = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape()->record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
  });
}

Var add_row(Var a, Var bias) {
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.value().size() != n)
    throw DimensionError("add_row: " + shape_str(a.shape()) + " + bias " + shape_str(bias.shape()));
  Tensor out = a.value();
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return a.tape()->record(std::move(out), {a, bias}, [a, bias, m, n](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a)) ga->add_(g);
    if (Tensor* gb = t.grad_sink(bias))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[i * n + j];
  });
}

Var row_scale(Var a, Var s) {
  const std::size_t m = a.rows(), n = a.cols();
  if (s.value().size() != m)
    throw DimensionError("row_scale: " + shape_str(a.shape()) + " by " + shape_str(s.shape()));
  Tensor out = a.value();
  const auto sv = s.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= sv[i];
  return a.tape()->record(std::move(out), {a, s}, [a, s, m, n](Tape& t, const Tensor& g) {
    const auto sv = s.value().data();
    if (Tensor* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += g[i * n + j] * sv[i];
    if (Tensor* gs = t.grad_sink(s)) {
      const auto av = a.value().data();
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * av[i * n + j];
        (*gs)[i] += acc;
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.value().size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  Tensor out(std::move(shape), std::vector<double>(a.value().data().begin(), a.value().data().end()));
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var leaky_relu(Var x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ContractError("leaky_relu: slope must lie in (0,1)");
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : slope * v;
  return x.tape()->record(std::move(out), {x}, [x, slope](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (x.value()[i] > 0.0 ? 1.0 : slope);
  });
}

namespace {
inline double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = sigmoid_scalar(v);
  Tensor y = out;
  return x.tape()->record(std::move(out), {x}, [x, y = std::move(y)](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var softplus(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * sigmoid_scalar(x.value()[i]);
  });
}

namespace {
Tensor softmax_values(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data().data() + i * n;
    double* yi = y.data().data() + i * n;
    const double mx = *std::max_element(xi, xi + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yi[j] /= z;
  }
  return y;
}
}  // namespace

Var softmax_rows(Var x) {
  check_finite("softmax_rows", x.value());
  Tensor y = softmax_values(x.value());
  const std::size_t m = y.rows(), n = y.cols();
  Tensor yc = y;
  return x.tape()->record(std::move(y), {x}, [x, yc = std::move(yc), m, n](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * yc[i * n + j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += yc[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var log_softmax_rows(Var x) {
  check_finite("log_softmax_rows", x.value());
  const Tensor& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  Tensor y(X.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = X.data().data() + i * n;
    const double mx = *std::max_element(xi, xi + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xi[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = xi[j] - lse;
  }
  Tensor probs = y;
  for (auto& v : probs.data()) v = std::exp(v);
  return x.tape()->record(std::move(y), {x}, [x, probs = std::move(probs), m, n](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += g[i * n + j] - probs[i * n + j] * gs;
    }
  });
}

Var cross_entropy(Var logits, std::span<const std::int32_t> labels) {
  const Tensor& X = logits.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (labels.size() != m)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) +
                         " rows");
  check_finite("cross_entropy", X);
  Tensor probs = softmax_values(X);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n)
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(n) + ")");
    const double* xi = X.data().data() + i * n;
    const double mx = *std::max_element(xi, xi + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xi[j] - mx);
    total += mx + std::log(z) - xi[y];
  }
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  return logits.tape()->record(Tensor({1}, total / static_cast<double>(m)), {logits},
                               [logits, probs = std::move(probs), lab = std::move(lab), m, n](Tape& t, const Tensor& g) {
                                 Tensor* gx = t.grad_sink(logits);
                                 if (!gx) return;
                                 const double s = g[0] / static_cast<double>(m);
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j)
                                     (*gx)[i * n + j] +=
                                         s * (probs[i * n + j] - (static_cast<std::int32_t>(j) == lab[i] ? 1.0 : 0.0));
                               });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape()->record(Tensor({1}, s), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x))
      for (auto& v : gx->data()) v += g[0];
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var sum_squares(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  return x.tape()->record(Tensor({1}, s), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += 2.0 * g[0] * x.value()[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m)
      throw DimensionError("concat_cols: row count " + std::to_string(p.rows()) + " vs " + std::to_string(m));
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].value().data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.data().data() + i * total + off);
    off += widths[k];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [ps, widths, m, total](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (Tensor* gp = t.grad_sink(ps[k]))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) (*gp)[i * widths[k] + j] += g[i * total + off + j];
      off += widths[k];
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const std::size_t m = x.rows(), n = x.cols();
  if (begin >= end || end > n)
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(x.shape()));
  const std::size_t w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.value().data().data() + i * n + begin, w, out.data().data() + i * w);
  return x.tape()->record(std::move(out), {x}, [x, begin, w, m, n](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) (*gx)[i * n + begin + j] += g[i * w + j];
  });
}

Var gather_rows(Var x, std::span<const std::uint32_t> index) {
  const std::size_t m = x.rows(), n = x.cols();
  require(!index.empty(), "gather_rows: empty index");
  Tensor out({index.size(), n});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= m)
      throw ContractError("gather_rows: index " + std::to_string(index[r]) + " out of range " + std::to_string(m));
    std::copy_n(x.value().data().data() + index[r] * n, n, out.data().data() + r * n);
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return x.tape()->record(std::move(out), {x}, [x, idx = std::move(idx), n](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x))
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) (*gx)[idx[r] * n + j] += g[r * n + j];
  });
}

Var segment_attention_softmax(Var p, Var q, const InEdges& edges, const Var* gate, bool include_self) {
  const std::size_t N = edges.num_nodes, E = edges.num_edges();
  check_edges("segment_attention_softmax", edges, p.value().size());
  if (q.value().size() != N) throw DimensionError("segment_attention_softmax: q has wrong size");
  if (gate && gate->value().size() != E)
    throw DimensionError("segment_attention_softmax: gate has " + std::to_string(gate->value().size()) +
                         " entries for " + std::to_string(E) + " edges");
  const auto P = p.value().data();
  const auto Q = q.value().data();
  check_finite("segment_attention_softmax", p.value());
  check_finite("segment_attention_softmax", q.value());
  std::vector<double> G(E, 1.0);
  if (gate) std::copy(gate->value().data().begin(), gate->value().data().end(), G.begin());

  Tensor out({E + N, 1});
  // u: exp score over the normalizer, before gating; needed for the gate gradient
  std::vector<double> u(E + N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const double s_self = P[i] + Q[i];
    double mx = include_self ? s_self : -std::numeric_limits<double>::infinity();
    for (std::size_t e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e)
      if (G[e] != 0.0) mx = std::max(mx, P[i] + Q[edges.src[e]]);
    if (!std::isfinite(mx)) continue;
    double z = include_self ? std::exp(s_self - mx) : 0.0;
    for (std::size_t e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e)
      if (G[e] != 0.0) z += G[e] * std::exp(P[i] + Q[edges.src[e]] - mx);
    for (std::size_t e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e) {
      u[e] = std::exp(P[i] + Q[edges.src[e]] - mx) / z;
      out[e] = G[e] * u[e];
    }
    if (include_self) out[E + i] = u[E + i] = std::exp(s_self - mx) / z;
  }

  std::vector<Var> parents{p, q};
  if (gate) parents.push_back(*gate);
  const Var gate_var = gate ? *gate : Var{};
  Tensor w = out;
  return p.tape()->record(std::move(out), parents,
                    [p, q, gate_var, ed = edges, w = std::move(w), u = std::move(u), N, E,
                     include_self](Tape& t, const Tensor& g) {
                      Tensor* gp = t.grad_sink(p);
                      Tensor* gq = t.grad_sink(q);
                      Tensor* gg = gate_var.valid() ? t.grad_sink(gate_var) : nullptr;
                      for (std::size_t i = 0; i < N; ++i) {
                        double dot = include_self ? g[E + i] * w[E + i] : 0.0;
                        for (std::size_t e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e) dot += g[e] * w[e];
                        if (include_self) {
                          const double ds = w[E + i] * (g[E + i] - dot);
                          if (gp) (*gp)[i] += ds;
                          if (gq) (*gq)[i] += ds;
                        }
                        for (std::size_t e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e) {
                          const double ds = w[e] * (g[e] - dot);
                          if (gp) (*gp)[i] += ds;
                          if (gq) (*gq)[ed.src[e]] += ds;
                          if (gg) (*gg)[e] += u[e] * (g[e] - dot);
                        }
                      }
                    });
}

Var segment_weighted_sum(Var w, Var msg, const InEdges& edges, std::span<const double> node_scale) {
  const std::size_t N = edges.num_nodes, E = edges.num_edges(), d = msg.cols();
  check_edges("segment_weighted_sum", edges, msg.rows());
  if (w.value().size() != E) throw DimensionError("segment_weighted_sum: weight count does not match edges");
  if (node_scale.size() != N) throw DimensionError("segment_weighted_sum: node_scale size");
  const auto W = w.value().data();
  const auto M = msg.value().data();
  Tensor out({N, d});
  for (std::size_t i = 0; i < N; ++i) {
    double* oi = out.data().data() + i * d;
    for (std::size_t e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e) {
      const double* mj = M.data() + edges.src[e] * d;
      for (std::size_t c = 0; c < d; ++c) oi[c] += W[e] * mj[c];
    }
    for (std::size_t c = 0; c < d; ++c) oi[c] *= node_scale[i];
  }
  std::vector<double> sc(node_scale.begin(), node_scale.end());
  return w.tape()->record(std::move(out), {w, msg}, [w, msg, ed = edges, sc = std::move(sc), N, d](Tape& t, const Tensor& g) {
    Tensor* gw = t.grad_sink(w);
    Tensor* gm = t.grad_sink(msg);
    const auto W = w.value().data();
    const auto M = msg.value().data();
    for (std::size_t i = 0; i < N; ++i) {
      const double* gi = g.data().data() + i * d;
      for (std::size_t e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e) {
        const std::size_t j = ed.src[e];
        if (gw) {
          double acc = 0.0;
          for (std::size_t c = 0; c < d; ++c) acc += gi[c] * M[j * d + c];
          (*gw)[e] += sc[i] * acc;
        }
        if (gm)
          for (std::size_t c = 0; c < d; ++c) (*gm)[j * d + c] += sc[i] * W[e] * gi[c];
      }
    }
  });
}

Var segment_max(Var msg, const InEdges& edges, std::span<const double> keep) {
  const std::size_t N = edges.num_nodes, E = edges.num_edges(), d = msg.cols();
  if (msg.rows() != E) throw DimensionError("segment_max: need one message row per edge");
  if (keep.size() != E) throw DimensionError("segment_max: keep mask size");
  const auto M = msg.value().data();
  Tensor out({N, d});
  std::vector<std::int64_t> arg(N * d, -1);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e) {
      if (keep[e] == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c)
        if (arg[i * d + c] < 0 || M[e * d + c] > out[i * d + c]) {
          out[i * d + c] = M[e * d + c];
          arg[i * d + c] = static_cast<std::int64_t>(e);
        }
    }
  return msg.tape()->record(std::move(out), {msg}, [msg, arg = std::move(arg), d](Tape& t, const Tensor& g) {
    if (Tensor* gm = t.grad_sink(msg))
      for (std::size_t k = 0; k < arg.size(); ++k)
        if (arg[k] >= 0) (*gm)[static_cast<std::size_t>(arg[k]) * d + k % d] += g[k];
  });
}

Var segment_normalize(Var w, const InEdges& edges) {
  const std::size_t N = edges.num_nodes, E = edges.num_edges();
  if (w.value().size() != E) throw DimensionError("segment_normalize: weight count does not match edges");
  const auto W = w.value().data();
  Tensor out({E, 1});
  std::vector<double> sums(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e) sums[i] += W[e];
    if (sums[i] != 0.0)
      for (std::size_t e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e) out[e] = W[e] / sums[i];
  }
  Tensor phi = out;
  return w.tape()->record(std::move(out), {w},
                          [w, ed = edges, sums = std::move(sums), phi = std::move(phi), N](Tape& t, const Tensor& g) {
                            Tensor* gw = t.grad_sink(w);
                            if (!gw) return;
                            for (std::size_t i = 0; i < N; ++i) {
                              if (sums[i] == 0.0) continue;
                              double dot = 0.0;
                              for (std::size_t e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e) dot += g[e] * phi[e];
                              for (std::size_t e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e)
                                (*gw)[e] += (g[e] - dot) / sums[i];
                            }
                          });
}

Var categorical_kl_uniform(Var phi, const InEdges& edges, std::span<const double> group_size) {
  const std::size_t N = edges.num_nodes, E = edges.num_edges();
  if (phi.value().size() != E) throw DimensionError("categorical_kl_uniform: phi size does not match edges");
  if (group_size.size() != N) throw DimensionError("categorical_kl_uniform: group_size size");
  const auto F = phi.value().data();
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (std::size_t e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e) {
      if (F[e] < 0.0) throw ContractError("categorical_kl_uniform: negative probability");
      s += F[e];
    }
    if (s == 0.0) continue;
    if (std::abs(s - 1.0) > 1e-6)
      throw ContractError("categorical_kl_uniform: group of node " + std::to_string(i) + " sums to " +
                          std::to_string(s));
    for (std::size_t e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e)
      if (F[e] > 0.0) total += F[e] * std::log(F[e] * group_size[i]);
  }
  std::vector<double> gs(group_size.begin(), group_size.end());
  return phi.tape()->record(Tensor({1}, total), {phi}, [phi, ed = edges, gs = std::move(gs), N](Tape& t, const Tensor& g) {
    Tensor* gp = t.grad_sink(phi);
    if (!gp) return;
    const auto F = phi.value().data();
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e)
        if (F[e] > 0.0) (*gp)[e] += g[0] * (std::log(F[e] * gs[i]) + 1.0);
  });
}

Var straight_through_bernoulli(Var logits, const Tensor& noise, double tau) {
  if (!(tau > 0.0)) throw ContractError("straight_through_bernoulli: temperature must be > 0");
  if (noise.size() != logits.value().size()) throw DimensionError("straight_through_bernoulli: noise size");
  Tensor hard(logits.shape());
  std::vector<double> slope(hard.size());
  for (std::size_t i = 0; i < hard.size(); ++i) {
    const double s = sigmoid_scalar((logits.value()[i] + noise[i]) / tau);
    hard[i] = s > 0.5 ? 1.0 : 0.0;
    slope[i] = s * (1.0 - s) / tau;
  }
  return logits.tape()->record(std::move(hard), {logits}, [logits, slope = std::move(slope)](Tape& t, const Tensor& g) {
    if (Tensor* gl = t.grad_sink(logits))
      for (std::size_t i = 0; i < g.size(); ++i) (*gl)[i] += g[i] * slope[i];
  });
}

Var gaussian_log_density(Var z, Var mu, Var sigma) {
  same_size("gaussian_log_density", z, mu);
  same_size("gaussian_log_density", z, sigma);
  const std::size_t n = z.rows(), d = z.cols();
  const auto Z = z.value().data(), M = mu.value().data(), S = sigma.value().data();
  Tensor out({n, 1});
  for (std::size_t v = 0; v < n; ++v) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t k = v * d + c;
      if (!(S[k] > 0.0)) throw ContractError("gaussian_log_density: sigma must be > 0");
      const double r = (Z[k] - M[k]) / S[k];
      acc += -0.5 * kLog2Pi - std::log(S[k]) - 0.5 * r * r;
    }
    out[v] = acc;
  }
  return z.tape()->record(std::move(out), {z, mu, sigma}, [z, mu, sigma, d](Tape& t, const Tensor& g) {
    Tensor* gz = t.grad_sink(z);
    Tensor* gm = t.grad_sink(mu);
    Tensor* gs = t.grad_sink(sigma);
    const auto Z = z.value().data(), M = mu.value().data(), S = sigma.value().data();
    for (std::size_t k = 0; k < Z.size(); ++k) {
      const double gv = g[k / d];
      const double diff = Z[k] - M[k];
      const double inv2 = 1.0 / (S[k] * S[k]);
      if (gz) (*gz)[k] -= gv * diff * inv2;
      if (gm) (*gm)[k] += gv * diff * inv2;
      if (gs) (*gs)[k] += gv * (-1.0 / S[k] + diff * diff * inv2 / S[k]);
    }
  });
}

Var mixture_log_density(Var z, Var means, Var sigmas, Var log_weights) {
  const std::size_t n = z.rows(), d = z.cols(), m = means.rows();
  if (means.cols() != d || sigmas.rows() != m || sigmas.cols() != d || log_weights.value().size() != m)
    throw DimensionError("mixture_log_density: z " + shape_str(z.shape()) + ", means " + shape_str(means.shape()) +
                         ", sigmas " + shape_str(sigmas.shape()) + ", log_weights " + shape_str(log_weights.shape()));
  const auto Z = z.value().data(), M = means.value().data(), S = sigmas.value().data(), LW = log_weights.value().data();
  for (double s : S)
    if (!(s > 0.0)) throw ContractError("mixture_log_density: sigma must be > 0");
  Tensor out({n, 1});
  Tensor resp({n, m});
  std::vector<double> comp(m);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t i = 0; i < m; ++i) {
      double acc = LW[i];
      for (std::size_t c = 0; c < d; ++c) {
        const double r = (Z[v * d + c] - M[i * d + c]) / S[i * d + c];
        acc += -0.5 * kLog2Pi - std::log(S[i * d + c]) - 0.5 * r * r;
      }
      comp[i] = acc;
    }
    const double mx = *std::max_element(comp.begin(), comp.end());
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += std::exp(comp[i] - mx);
    out[v] = mx + std::log(s);
    for (std::size_t i = 0; i < m; ++i) resp.at(v, i) = std::exp(comp[i] - out[v]);
  }
  return z.tape()->record(
      std::move(out), {z, means, sigmas, log_weights},
      [z, means, sigmas, log_weights, resp = std::move(resp), n, d, m](Tape& t, const Tensor& g) {
        Tensor* gz = t.grad_sink(z);
        Tensor* gm = t.grad_sink(means);
        Tensor* gs = t.grad_sink(sigmas);
        Tensor* gw = t.grad_sink(log_weights);
        const auto Z = z.value().data(), M = means.value().data(), S = sigmas.value().data();
        for (std::size_t v = 0; v < n; ++v)
          for (std::size_t i = 0; i < m; ++i) {
            const double dl = g[v] * resp.at(v, i);
            if (gw) (*gw)[i] += dl;
            for (std::size_t c = 0; c < d; ++c) {
              const double diff = Z[v * d + c] - M[i * d + c];
              const double sg = S[i * d + c];
              const double inv2 = 1.0 / (sg * sg);
              if (gz) (*gz)[v * d + c] -= dl * diff * inv2;
              if (gm) (*gm)[i * d + c] += dl * diff * inv2;
              if (gs) (*gs)[i * d + c] += dl * (-1.0 / sg + diff * diff * inv2 / sg);
            }
          }
      });
}

}  // namespace gibrss
