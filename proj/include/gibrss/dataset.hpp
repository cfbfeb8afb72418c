#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gibrss/image.hpp"

namespace gibrss::data {

// Class 0 is background; every image carries 2-5 irregular star polygons of
// foreground classes in their class color plus Gaussian noise (sigma 0.05),
// clipped to [0, 1]. Image i depends only on (seed, i).
std::vector<LabeledImage> synth_dataset(int n, int size, int classes, std::uint64_t seed);
LabeledImage synth_image(int index, int size, int classes, std::uint64_t seed);

inline constexpr double kSynthNoise = 0.05;

// Evenly spaced hues at saturation 0.82, value 0.85; every channel lies in [0.15, 0.85].
std::array<double, 3> class_base_color(int cls, int classes);

// Binary PNM. Images are quantized to 8 bits on write; labels must fit a byte.
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const LabelMap& labels, const std::filesystem::path& path);
LabelMap read_pgm(const std::filesystem::path& path);

struct Dataset {
  int classes = 0;
  std::vector<LabeledImage> items;
};

// manifest.json: {"classes": C, "items": [{"id", "image", "labels"}]}, paths
// relative to the manifest's directory.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& manifest);

}  // namespace gibrss::data
