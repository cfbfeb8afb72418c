#include "gibrss/patch_graph.hpp"

#include <algorithm>
#include <numeric>

#include "gibrss/errors.hpp"
#include "gibrss/kernels.hpp"
#include "json.hpp"

namespace gibrss::graph {

PatchSet split_patches(const Image& image, int patch_size) {
  require(patch_size > 0, "split_patches: patch_size must be positive, got " + std::to_string(patch_size));
  require(image.height >= patch_size && image.width >= patch_size,
          "split_patches: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
              " smaller than patch " + std::to_string(patch_size));
  const int ph = (image.height + patch_size - 1) / patch_size * patch_size;
  const int pw = (image.width + patch_size - 1) / patch_size * patch_size;
  const Image padded = (ph == image.height && pw == image.width) ? image : reflect_pad(image, ph, pw);

  PatchSet out;
  out.patch_size = patch_size;
  out.channels = image.channels;
  out.height = image.height;
  out.width = image.width;
  out.padded_height = ph;
  out.padded_width = pw;
  out.grid = {static_cast<std::size_t>(ph / patch_size), static_cast<std::size_t>(pw / patch_size)};
  const std::size_t dim = static_cast<std::size_t>(patch_size) * patch_size * image.channels;
  out.patches = Tensor({out.grid.size(), dim});
  for (std::size_t r = 0; r < out.grid.rows; ++r)
    for (std::size_t c = 0; c < out.grid.cols; ++c) {
      double* row = out.patches.data().data() + (r * out.grid.cols + c) * dim;
      std::size_t k = 0;
      for (int py = 0; py < patch_size; ++py)
        for (int px = 0; px < patch_size; ++px)
          for (int ch = 0; ch < image.channels; ++ch)
            row[k++] = padded.at(static_cast<int>(r) * patch_size + py, static_cast<int>(c) * patch_size + px, ch);
    }
  return out;
}

Image assemble_patches(const PatchSet& p) {
  Image img(p.padded_height, p.padded_width, p.channels);
  const std::size_t dim = p.patches.cols();
  for (std::size_t r = 0; r < p.grid.rows; ++r)
    for (std::size_t c = 0; c < p.grid.cols; ++c) {
      const double* row = p.patches.data().data() + (r * p.grid.cols + c) * dim;
      std::size_t k = 0;
      for (int py = 0; py < p.patch_size; ++py)
        for (int px = 0; px < p.patch_size; ++px)
          for (int ch = 0; ch < p.channels; ++ch)
            img.at(static_cast<int>(r) * p.patch_size + py, static_cast<int>(c) * p.patch_size + px, ch) = row[k++];
    }
  return img;
}

Var embed_patches(Tape& tape, const PatchSet& p, Var projection) {
  if (projection.rows() != p.patches.cols())
    throw DimensionError("embed_patches: projection " + shape_str(projection.shape()) + " for patches of width " +
                         std::to_string(p.patches.cols()));
  return matmul(tape.constant(p.patches), projection);
}

PatchGraph graph_from_edges(std::size_t num_nodes, std::span<const std::pair<std::uint32_t, std::uint32_t>> edges,
                            GridDims grid) {
  PatchGraph g;
  g.edges = InEdges::from_pairs(num_nodes, edges);
  g.relation.assign(edges.size(), 0);
  g.grid = grid.size() == num_nodes ? grid : GridDims{num_nodes, 1};
  g.coords.resize(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i)
    g.coords[i] = {static_cast<std::uint32_t>(i / g.grid.cols), static_cast<std::uint32_t>(i % g.grid.cols)};
  std::size_t max_deg = 0;
  for (std::size_t i = 0; i < num_nodes; ++i) max_deg = std::max(max_deg, g.edges.in_degree(i));
  g.k = g.requested_k = static_cast<int>(max_deg);
  return g;
}

PatchGraph knn_graph(const Tensor& x, int k, GridDims grid) {
  const std::size_t n = x.rows();
  require(k >= 1, "knn_graph: k must be >= 1");
  require(n >= 2, "knn_graph: need at least 2 nodes");
  if (grid.size() != n) throw DimensionError("knn_graph: grid does not cover " + std::to_string(n) + " nodes");
  const std::size_t dim = x.cols();
  std::vector<double> dist(n * n);
  kernels::pairwise_sq_dist(n, dim, x.data(), dist);

  PatchGraph g;
  g.requested_k = k;
  g.clamped = static_cast<std::size_t>(k) >= n;
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
  g.k = static_cast<int>(kk);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(n * kk);
  std::vector<std::uint32_t> cand(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand[w++] = static_cast<std::uint32_t>(j);
    const double* di = dist.data() + i * n;
    auto closer = [di](std::uint32_t a, std::uint32_t b) { return di[a] < di[b] || (di[a] == di[b] && a < b); };
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end(), closer);
    for (std::size_t r = 0; r < kk; ++r) pairs.emplace_back(cand[r], static_cast<std::uint32_t>(i));
  }
  g.edges = InEdges::from_pairs(n, pairs);
  g.relation.assign(pairs.size(), 0);
  g.grid = grid;
  g.coords.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    g.coords[i] = {static_cast<std::uint32_t>(i / grid.cols), static_cast<std::uint32_t>(i % grid.cols)};
  return g;
}

PatchGraph knn_graph(const Tensor& x, int k) { return knn_graph(x, k, GridDims{x.rows(), 1}); }

GridDims conv_output_grid(GridDims in, int stride) {
  require(stride >= 1, "conv stride must be >= 1");
  const auto s = static_cast<std::size_t>(stride);
  return {(in.rows + s - 1) / s, (in.cols + s - 1) / s};
}

Var grid_conv3x3(Var features, GridDims grid, Var kernel, Var bias, int stride) {
  if (features.rows() != grid.size())
    throw DimensionError("grid_conv3x3: " + std::to_string(features.rows()) + " rows for a " +
                         std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
  const std::size_t cin = features.cols();
  if (kernel.rows() != 9 * cin)
    throw DimensionError("grid_conv3x3: kernel " + shape_str(kernel.shape()) + " for " + std::to_string(cin) +
                         " input channels");
  const GridDims out = conv_output_grid(grid, stride);
  std::vector<std::uint32_t> index;
  index.reserve(out.size() * 9);
  const auto rows = static_cast<std::ptrdiff_t>(grid.rows), cols = static_cast<std::ptrdiff_t>(grid.cols);
  for (std::size_t orow = 0; orow < out.rows; ++orow)
    for (std::size_t ocol = 0; ocol < out.cols; ++ocol) {
      const auto cr = static_cast<std::ptrdiff_t>(orow) * stride, cc = static_cast<std::ptrdiff_t>(ocol) * stride;
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const auto r = std::clamp<std::ptrdiff_t>(cr + dr, 0, rows - 1);
          const auto c = std::clamp<std::ptrdiff_t>(cc + dc, 0, cols - 1);
          index.push_back(static_cast<std::uint32_t>(r * cols + c));
        }
    }
  Var cols9 = reshape(gather_rows(features, index), {out.size(), 9 * cin});
  return add_row(matmul(cols9, kernel), bias);
}

Downsampled downsample_graph(const PatchGraph& g, Var features, Var kernel, Var bias) {
  require(g.grid.size() == g.num_nodes(), "downsample_graph: node coordinates do not form a full grid");
  require(g.grid.rows >= 3 && g.grid.cols >= 3,
          "downsample_graph: grid " + std::to_string(g.grid.rows) + "x" + std::to_string(g.grid.cols) +
              " smaller than the 3x3 kernel");
  Var f = grid_conv3x3(features, g.grid, kernel, bias, 2);
  const GridDims out = conv_output_grid(g.grid, 2);
  return {knn_graph(f.value(), g.requested_k, out), f};
}

std::vector<std::uint32_t> upsample_index(GridDims from, GridDims to) {
  require(to.rows >= from.rows && to.cols >= from.cols, "upsample_nodes: target grid smaller than source");
  std::vector<std::uint32_t> idx(to.size());
  for (std::size_t r = 0; r < to.rows; ++r)
    for (std::size_t c = 0; c < to.cols; ++c) {
      const std::size_t sr = r * from.rows / to.rows, sc = c * from.cols / to.cols;
      idx[r * to.cols + c] = static_cast<std::uint32_t>(sr * from.cols + sc);
    }
  return idx;
}

Var upsample_nodes(Var features, GridDims from, GridDims to) {
  if (features.rows() != from.size()) throw DimensionError("upsample_nodes: feature rows do not match source grid");
  return gather_rows(features, upsample_index(from, to));
}

std::string dump_graph_json(const PatchGraph& g) {
  nlohmann::ordered_json j;
  j["num_nodes"] = g.num_nodes();
  j["K"] = g.k;
  j["requested_K"] = g.requested_k;
  j["clamped"] = g.clamped;
  j["grid"] = {g.grid.rows, g.grid.cols};
  auto edges = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const double w = g.edge_weights ? (*g.edge_weights)[e] : 1.0;
    edges.push_back({g.edges.src[e], g.edges.dst[e], w});
  }
  j["edges"] = std::move(edges);
  auto coords = nlohmann::ordered_json::array();
  for (const auto& c : g.coords) coords.push_back({c.row, c.col});
  j["coords"] = std::move(coords);
  return j.dump();
}

}  // namespace gibrss::graph
