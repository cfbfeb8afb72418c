#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <optional>
#include <sstream>

#include "gibrss/errors.hpp"
#include "gibrss/kernels.hpp"
#include "gibrss/metrics.hpp"
#include "gibrss/optim.hpp"
#include "gibrss/segnet.hpp"

namespace gibrss::seg {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ContractError("train log: bad number '" + s + "'");
  return v;
}

constexpr const char* kHeader = "epoch,loss,ce,aib,xib,lr,oa,miou";

}  // namespace

std::string TrainLog::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : epochs) {
    out += std::to_string(r.epoch);
    for (double v : {r.loss, r.ce, r.aib, r.xib, r.lr, r.oa, r.miou}) out += "," + fmt(v);
    out += "\n";
  }
  return out;
}

TrainLog TrainLog::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw ContractError("train log: missing header");
  TrainLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw ContractError("train log: expected 8 columns, got " + std::to_string(f.size()));
    EpochRecord r;
    r.epoch = std::stoi(f[0]);
    r.loss = parse_double(f[1]);
    r.ce = parse_double(f[2]);
    r.aib = parse_double(f[3]);
    r.xib = parse_double(f[4]);
    r.lr = parse_double(f[5]);
    r.oa = parse_double(f[6]);
    r.miou = parse_double(f[7]);
    log.epochs.push_back(r);
  }
  return log;
}

TrainLog train(SegModel& model, std::span<const LabeledImage> data, const TrainHooks& hooks) {
  const auto& cfg = model.cfg;
  TrainLog log;
  if (cfg.epochs == 0) return log;
  require(!data.empty(), "train: empty dataset");
  for (const auto& d : data)
    for (auto l : d.labels.labels)
      require(l >= 0 && l < cfg.classes, "train: item '" + d.id + "' has label " + std::to_string(l) + " outside [0, " +
                                             std::to_string(cfg.classes) + ")");

  AdamWConfig ocfg;
  ocfg.weight_decay = cfg.adamw_decay;
  AdamW opt(model.params, ocfg);
  const std::size_t n = data.size();
  const std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  const std::size_t batches = (n + bsz - 1) / bsz;
  const auto total_steps = static_cast<std::int64_t>(cfg.epochs) * static_cast<std::int64_t>(batches);
  const RngStream root(cfg.seed, 0x747261696eULL);
  const int threads = kernels::worker_threads();
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const RngStream erng = root.split(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle = erng.split(1);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = cosine_lr(step, total_steps, cfg.lr);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * bsz, end = std::min(n, begin + bsz);
      const auto m = static_cast<std::ptrdiff_t>(end - begin);
      std::vector<std::optional<SampleResult>> results(static_cast<std::size_t>(m));
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(m));
#pragma omp parallel for num_threads(threads) schedule(dynamic)
      for (std::ptrdiff_t j = 0; j < m; ++j) {
        const std::size_t idx = order[begin + static_cast<std::size_t>(j)];
        try {
          FlipDecision flip;
          if (hooks.flip_override) {
            flip = hooks.flip_override(epoch, idx);
          } else if (cfg.flip) {
            RngStream fr = erng.split(2).split(idx);
            flip.horizontal = fr.uniform() < 0.5;
            flip.vertical = fr.uniform() < 0.5;
          }
          Image img = data[idx].image;
          LabelMap lab = data[idx].labels;
          if (flip.horizontal) {
            img = flip_horizontal(img);
            lab = flip_horizontal(lab);
          }
          if (flip.vertical) {
            img = flip_vertical(img);
            lab = flip_vertical(lab);
          }
          results[static_cast<std::size_t>(j)] = run_sample(model, img, lab, erng.split(3).split(idx), true);
        } catch (...) {
          errors[static_cast<std::size_t>(j)] = std::current_exception();
        }
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);

      Gradients grads(model.params);
      LossParts batch;
      for (const auto& r : results) {
        grads.add(r->grads);
        batch.total += r->loss.total;
        batch.ce += r->loss.ce;
        batch.aib += r->loss.aib;
        batch.xib += r->loss.xib;
      }
      const double inv = 1.0 / static_cast<double>(m);
      grads.scale(inv);
      batch.total = batch.total * inv + l2_penalty(model.params, cfg.l2, cfg.l2_squared);
      if (!std::isfinite(batch.total))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1));
      add_l2_gradient(model.params, cfg.l2, cfg.l2_squared, grads);
      try {
        opt.step(model.params, grads, cosine_lr(step, total_steps, cfg.lr));
        round_params_to_float32(model.params);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(b + 1));
      }
      ++step;
      rec.loss += batch.total;
      rec.ce += batch.ce * inv;
      rec.aib += batch.aib * inv;
      rec.xib += batch.xib * inv;
    }
    const double nb = static_cast<double>(batches);
    rec.loss /= nb;
    rec.ce /= nb;
    rec.aib /= nb;
    rec.xib /= nb;

    if (hooks.epoch_metrics) {
      std::vector<LabelMap> preds(n);
      const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for num_threads(threads) schedule(dynamic)
      for (std::ptrdiff_t i = 0; i < ni; ++i)
        preds[static_cast<std::size_t>(i)] = predict(model, data[static_cast<std::size_t>(i)].image);
      eval::ConfusionMatrix cm(cfg.classes);
      for (std::size_t i = 0; i < n; ++i) eval::accumulate(cm, preds[i], data[i].labels);
      const auto met = eval::metrics(cm);
      rec.oa = met.oa;
      rec.miou = met.miou;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return log;
}

}  // namespace gibrss::seg
