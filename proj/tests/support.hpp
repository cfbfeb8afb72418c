#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gibrss/patch_graph.hpp"
#include "gibrss/rng.hpp"
#include "gibrss/segnet.hpp"
#include "gibrss/tape.hpp"

// Oracles shared by the unit tests and the acceptance runner.
namespace gibrss::testing {

Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0);

// |a - n| / max(|a|, |n|, floor) with central differences of step eps.
inline constexpr double kRelFloor = 1e-3;

using LossFn = std::function<Var(Tape&, std::span<const Var>)>;

// Max relative error between tape gradients of f and central differences,
// over every element of every input.
double gradient_error(const std::vector<Tensor>& inputs, const LossFn& f, double eps = 1e-5);

struct OpCheck {
  std::string name;
  double max_rel_error = 0.0;
};

// Every differentiable op (and the composite graph layers) over `trials`
// random inputs each.
std::vector<OpCheck> op_gradient_suite(int trials, std::uint64_t seed);

// End-to-end check on a 16x16, 1-stage, D=8 model with both views and the
// bottleneck on. Mask logits are left out: their forward value is a hard
// threshold, so central differences see zero while the backward pass uses
// the relaxed surrogate by design. Up to `per_param` entries are probed per
// parameter tensor.
double model_gradient_error(int trials, std::uint64_t seed, int per_param = 4);

// O(N^2) reference: (src, dst) pairs of each node's k nearest neighbors,
// ties to the smaller index, k clamped to N - 1.
std::set<std::pair<std::uint32_t, std::uint32_t>> brute_force_knn(const Tensor& x, int k);
std::set<std::pair<std::uint32_t, std::uint32_t>> edge_set(const graph::PatchGraph& g);

// A small graph with random in-degrees (some zero).
graph::PatchGraph random_graph(std::size_t n, RngStream& rng, std::size_t max_in = 4);

seg::SegModelConfig tiny_config();

}  // namespace gibrss::testing
