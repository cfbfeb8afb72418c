#pragma once

#include <cstdint>
#include <vector>

#include "gibrss/image.hpp"

namespace gibrss::eval {

// counts[truth * classes + pred]
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(int classes = 0);
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows);
  std::uint64_t at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth) * classes + pred]; }
  std::uint64_t& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth) * classes + pred]; }
  std::uint64_t total() const;
  void add(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, int classes);
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth);

struct Metrics {
  double oa = 0.0;
  double mean_f1 = 0.0;
  double miou = 0.0;
  std::vector<double> f1;
  std::vector<double> iou;
  // false for classes absent from both truth and prediction; those are left
  // out of the means
  std::vector<bool> present;
};

Metrics metrics(const ConfusionMatrix& cm);

}  // namespace gibrss::eval
