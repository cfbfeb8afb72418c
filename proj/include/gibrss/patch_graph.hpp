#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gibrss/image.hpp"
#include "gibrss/ops.hpp"
#include "gibrss/tape.hpp"

namespace gibrss::graph {

struct GridDims {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const GridDims&) const = default;
};

// Non-overlapping patch tiling of an image, row-major over the patch grid.
// Each row of `patches` is one patch flattened as (py, px, channel).
struct PatchSet {
  Tensor patches;
  GridDims grid;
  int patch_size = 0;
  int channels = 0;
  int height = 0;  // original image size
  int width = 0;
  int padded_height = 0;
  int padded_width = 0;
};

// Reflect-pads H and W up to multiples of patch_size, then tiles.
PatchSet split_patches(const Image& image, int patch_size);
// Inverse tiling; returns the padded image.
Image assemble_patches(const PatchSet& p);

// X = patches * projection, projection of shape (patch_size^2 * C) x D.
Var embed_patches(Tape& tape, const PatchSet& p, Var projection);

struct GridCoord {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  bool operator==(const GridCoord&) const = default;
};

// Directed KNN graph over nodes. Edge j -> i means j is one of i's nearest
// neighbors; edges are grouped by destination and ordered nearest-first, so
// edge index e = i * k + rank whenever every node has k in-edges.
struct PatchGraph {
  InEdges edges;
  int k = 0;
  int requested_k = 0;
  bool clamped = false;
  // Single relation for image graphs; kept per edge so the sum over
  // relations in the aggregation rule has somewhere to live.
  std::vector<std::uint32_t> relation;
  std::optional<Tensor> edge_weights;
  std::vector<GridCoord> coords;
  GridDims grid;

  std::size_t num_nodes() const noexcept { return edges.num_nodes; }
  std::size_t num_edges() const noexcept { return edges.num_edges(); }
};

// k nearest neighbors of every node by squared Euclidean distance over the
// rows of x, self excluded, ties to the smaller index. k >= N is clamped to
// N - 1 and flagged via `clamped`.
PatchGraph knn_graph(const Tensor& x, int k, GridDims grid);
PatchGraph knn_graph(const Tensor& x, int k);

// Builds a graph from explicit edges (used for surgery and tests).
PatchGraph graph_from_edges(std::size_t num_nodes, std::span<const std::pair<std::uint32_t, std::uint32_t>> edges,
                            GridDims grid);

GridDims conv_output_grid(GridDims in, int stride);

// 3x3 convolution over node features laid out on a grid, replicate padding.
// kernel: (9 * C_in) x C_out with taps ordered row-major, bias: C_out.
Var grid_conv3x3(Var features, GridDims grid, Var kernel, Var bias, int stride);

struct Downsampled {
  PatchGraph graph;
  Var features;
};

// Stride-2 3x3 convolution halving each grid side (ceil), then a KNN rebuild
// on the new features with the same k.
Downsampled downsample_graph(const PatchGraph& g, Var features, Var kernel, Var bias);

// Nearest-neighbour replication; row-major order on both grids.
std::vector<std::uint32_t> upsample_index(GridDims from, GridDims to);
Var upsample_nodes(Var features, GridDims from, GridDims to);

// Structured-text dump: {num_nodes, K, requested_K, clamped, edges: [[src, dst, weight]], coords: [[r, c]]}.
std::string dump_graph_json(const PatchGraph& g);

}  // namespace gibrss::graph
