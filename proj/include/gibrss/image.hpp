#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace gibrss {

// Interleaved H x W x C float image, values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0);

  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

// H x W class indices.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, std::int32_t fill = 0);

  std::int32_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

struct LabeledImage {
  std::string id;
  Image image;
  LabelMap labels;
};

// Mirror index without repeating the edge sample (..., 2, 1, 0, 1, 2, ...).
int reflect_index(int i, int n);

Image reflect_pad(const Image& img, int height, int width);
LabelMap reflect_pad(const LabelMap& lab, int height, int width);

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
LabelMap flip_horizontal(const LabelMap& lab);
LabelMap flip_vertical(const LabelMap& lab);

}  // namespace gibrss
