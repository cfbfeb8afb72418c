#include "gibrss/metrics.hpp"

#include "gibrss/errors.hpp"

namespace gibrss::eval {

ConfusionMatrix::ConfusionMatrix(int c) : classes(c), counts(static_cast<std::size_t>(c) * c, 0) {
  require(c >= 0, "confusion matrix: negative class count");
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw DimensionError("confusion matrix must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) cm.at(static_cast<int>(t), static_cast<int>(p)) = rows[t][p];
  }
  return cm;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
  if (other.classes != classes) throw DimensionError("confusion matrices have different class counts");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw DimensionError("confusion: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs truth " + std::to_string(truth.height) + "x" + std::to_string(truth.width));
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const auto p = pred.labels[i], t = truth.labels[i];
    require(p >= 0 && p < cm.classes, "confusion: predicted label " + std::to_string(p) + " out of range");
    require(t >= 0 && t < cm.classes, "confusion: true label " + std::to_string(t) + " out of range");
    ++cm.at(t, p);
  }
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, int classes) {
  ConfusionMatrix cm(classes);
  accumulate(cm, pred, truth);
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  require(total > 0, "metrics: empty confusion matrix");
  const int c = cm.classes;
  Metrics m;
  m.f1.assign(c, 0.0);
  m.iou.assign(c, 0.0);
  m.present.assign(c, false);
  std::uint64_t trace = 0;
  int n_present = 0;
  for (int k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t fn = row - tp, fp = col - tp;
    trace += tp;
    m.present[k] = row > 0 || col > 0;
    if (!m.present[k]) continue;
    ++n_present;
    const double den_iou = static_cast<double>(tp + fp + fn);
    m.iou[k] = static_cast<double>(tp) / den_iou;
    m.f1[k] = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    m.miou += m.iou[k];
    m.mean_f1 += m.f1[k];
  }
  m.oa = static_cast<double>(trace) / static_cast<double>(total);
  m.miou /= n_present;
  m.mean_f1 /= n_present;
  return m;
}

}  // namespace gibrss::eval
