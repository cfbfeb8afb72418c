#include "gibrss/image.hpp"

#include "gibrss/errors.hpp"

namespace gibrss {

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {
  require(h > 0 && w > 0 && c > 0, "image dimensions must be positive");
}

LabelMap::LabelMap(int h, int w, std::int32_t fill)
    : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {
  require(h > 0 && w > 0, "label map dimensions must be positive");
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image reflect_pad(const Image& img, int height, int width) {
  require(height >= img.height && width >= img.width, "reflect_pad: target smaller than image");
  Image out(height, width, img.channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int sy = reflect_index(y, img.height), sx = reflect_index(x, img.width);
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  return out;
}

LabelMap reflect_pad(const LabelMap& lab, int height, int width) {
  require(height >= lab.height && width >= lab.width, "reflect_pad: target smaller than label map");
  LabelMap out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at(y, x) = lab.at(reflect_index(y, lab.height), reflect_index(x, lab.width));
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

Image flip_vertical(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
  return out;
}

LabelMap flip_horizontal(const LabelMap& lab) {
  LabelMap out(lab.height, lab.width);
  for (int y = 0; y < lab.height; ++y)
    for (int x = 0; x < lab.width; ++x) out.at(y, x) = lab.at(y, lab.width - 1 - x);
  return out;
}

LabelMap flip_vertical(const LabelMap& lab) {
  LabelMap out(lab.height, lab.width);
  for (int y = 0; y < lab.height; ++y)
    for (int x = 0; x < lab.width; ++x) out.at(y, x) = lab.at(lab.height - 1 - y, x);
  return out;
}

}  // namespace gibrss
