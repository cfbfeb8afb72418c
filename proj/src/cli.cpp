#include "gibrss/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "gibrss/errors.hpp"
#include "gibrss/kernels.hpp"
#include "gibrss/ops.hpp"

namespace gibrss::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ContractError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ContractError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<std::pair<std::string, std::string>> key_values(const std::string& text, const std::string& what) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ContractError(what + " line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::string fmt4(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

// shortest text that parses back to the same double
std::string fmt_exact(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open '" + p.string() + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + p.string() + "'");
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create '" + p.string() + "': " + ec.message());
}

}  // namespace

// ---- config ----

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  for (const auto& [k, v] : key_values(text, "config")) {
    if (seg::set_model_key(cfg.model, k, v)) continue;
    if (k == "data") cfg.data = v;
    else if (k == "synth_count") cfg.synth_count = parse_number<int>(k, v);
    else if (k == "synth_seed") cfg.synth_seed = parse_number<std::uint64_t>(k, v);
    else if (k == "test_data") cfg.test_data = v;
    else if (k == "test_count") cfg.test_count = parse_number<int>(k, v);
    else if (k == "test_seed") cfg.test_seed = parse_number<std::uint64_t>(k, v);
    else if (k == "out") cfg.out = v;
    else throw ContractError("unknown config key '" + k + "'");
  }
  require(cfg.synth_count >= 0 && cfg.test_count >= 0, "config: synthetic counts must be >= 0");
  cfg.model.validate();
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  RunConfig cfg = parse_config(read_text(path));
  // relative data paths resolve against the config file
  const auto base = path.parent_path();
  if (!cfg.data.empty() && fs::path(cfg.data).is_relative()) cfg.data = (base / cfg.data).string();
  if (!cfg.test_data.empty() && fs::path(cfg.test_data).is_relative()) cfg.test_data = (base / cfg.test_data).string();
  return cfg;
}

std::string config_text(const RunConfig& cfg) {
  std::string out = seg::model_config_text(cfg.model);
  out += "data=" + cfg.data + "\n";
  out += "synth_count=" + std::to_string(cfg.synth_count) + "\n";
  out += "synth_seed=" + std::to_string(cfg.synth_seed) + "\n";
  out += "test_data=" + cfg.test_data + "\n";
  out += "test_count=" + std::to_string(cfg.test_count) + "\n";
  out += "test_seed=" + std::to_string(cfg.test_seed) + "\n";
  out += "out=" + cfg.out + "\n";
  return out;
}

data::Dataset load_dataset(const fs::path& path) {
  if (fs::is_directory(path)) return data::read_dataset(path / "manifest.json");
  return data::read_dataset(path);
}

namespace {
data::Dataset synthetic(const RunConfig& cfg, int count, std::uint64_t seed) {
  require(cfg.model.in_channels == 3, "synthetic data is RGB; set in_channels = 3");
  data::Dataset ds;
  ds.classes = cfg.model.classes;
  ds.items = data::synth_dataset(count, cfg.model.image_size, cfg.model.classes, seed);
  return ds;
}
}  // namespace

data::Dataset training_set(const RunConfig& cfg) {
  if (cfg.data.empty()) return synthetic(cfg, cfg.synth_count, cfg.synth_seed);
  return load_dataset(cfg.data);
}

data::Dataset test_set(const RunConfig& cfg) {
  if (cfg.test_data.empty()) return synthetic(cfg, cfg.test_count, cfg.test_seed);
  return load_dataset(cfg.test_data);
}

// ---- visualization ----

const std::array<std::array<std::uint8_t, 3>, 16>& palette() {
  static const std::array<std::array<std::uint8_t, 3>, 16> p = {{
      {0, 0, 0},       {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
      {145, 30, 180},  {70, 240, 240}, {240, 50, 230},  {210, 245, 60}, {250, 190, 212}, {0, 128, 128},
      {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0},
  }};
  return p;
}

Image colorize(const LabelMap& labels) {
  Image img(labels.height, labels.width, 3);
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x) {
      const auto& rgb = palette()[static_cast<std::size_t>(labels.at(y, x)) % palette().size()];
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c] / 255.0;
    }
  return img;
}

Image overlay(const Image& image, const LabelMap& labels) {
  require(image.height == labels.height && image.width == labels.width, "overlay: image and labels differ in size");
  const Image color = colorize(labels);
  Image out(image.height, image.width, 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = 0.5 * image.at(y, x, image.channels == 3 ? c : 0) + 0.5 * color.at(y, x, c);
  return out;
}

// ---- eval ----

EvalReport evaluate(const seg::SegModel& model, const data::Dataset& ds) {
  require(!ds.items.empty(), "eval: dataset is empty");
  if (ds.classes != model.cfg.classes)
    throw ContractError("eval: dataset has " + std::to_string(ds.classes) + " classes, checkpoint has " +
                        std::to_string(model.cfg.classes));
  const auto n = static_cast<std::ptrdiff_t>(ds.items.size());
  std::vector<LabelMap> preds(ds.items.size());
  const int threads = kernels::worker_threads();
#pragma omp parallel for num_threads(threads) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    preds[static_cast<std::size_t>(i)] = seg::predict(model, ds.items[static_cast<std::size_t>(i)].image);
  EvalReport r{eval::ConfusionMatrix(ds.classes), {}, {}, {}};
  for (std::size_t i = 0; i < ds.items.size(); ++i) eval::accumulate(r.cm, preds[i], ds.items[i].labels);
  r.metrics = eval::metrics(r.cm);

  std::ostringstream t;
  t << "images " << ds.items.size() << "  pixels " << r.cm.total() << "\n";
  t << "class    IoU      F1\n";
  r.csv = "class,iou,f1,present\n";
  for (int c = 0; c < ds.classes; ++c) {
    const bool p = r.metrics.present[c];
    t << std::left << std::setw(8) << c << " " << (p ? fmt4(r.metrics.iou[c]) : std::string("  -   ")) << "   "
      << (p ? fmt4(r.metrics.f1[c]) : std::string("  -")) << "\n";
    r.csv += std::to_string(c) + "," + fmt_exact(r.metrics.iou[c]) + "," + fmt_exact(r.metrics.f1[c]) + "," + (p ? "1" : "0") +
             "\n";
  }
  t << "meanF1 " << fmt4(r.metrics.mean_f1) << "\nOA     " << fmt4(r.metrics.oa) << "\nmIoU   "
    << fmt4(r.metrics.miou) << "\n";
  r.csv += "meanF1," + fmt_exact(r.metrics.mean_f1) + ",,\nOA," + fmt_exact(r.metrics.oa) + ",,\nmIoU," +
           fmt_exact(r.metrics.miou) + ",,\n";
  r.text = t.str();
  return r;
}

// ---- train ----

TrainResult run_training(const RunConfig& cfg) {
  if (!cfg.data.empty() && !fs::exists(cfg.data)) throw IoError("training data '" + cfg.data + "' not found");
  const data::Dataset ds = training_set(cfg);
  require(!ds.items.empty() || cfg.model.epochs == 0, "train: training set is empty");
  if (!ds.items.empty() && ds.classes != cfg.model.classes)
    throw ContractError("train: dataset has " + std::to_string(ds.classes) + " classes, config has " +
                        std::to_string(cfg.model.classes));
  if (cfg.model.views_enabled())
    for (const auto& it : ds.items)
      if (it.image.height != cfg.model.image_size || it.image.width != cfg.model.image_size)
        throw ContractError("train: item '" + it.id + "' is " + std::to_string(it.image.height) + "x" +
                            std::to_string(it.image.width) + " but masked views need image_size " +
                            std::to_string(cfg.model.image_size));
  TrainResult r{seg::build_model(cfg.model), {}, {eval::ConfusionMatrix(0), {}, {}, {}}};
  r.log = seg::train(r.model, ds.items);
  if (!ds.items.empty()) r.report = evaluate(r.model, ds);
  return r;
}

void cmd_train(const RunConfig& cfg, const fs::path& out_dir, bool overwrite) {
  if (fs::exists(out_dir) && !overwrite)
    throw ContractError("output directory '" + out_dir.string() + "' exists (use --force to replace it)");
  TrainResult r = run_training(cfg);
  fs::path stage = out_dir;
  stage += ".partial";
  std::error_code ec;
  fs::remove_all(stage, ec);
  make_dirs(stage);
  seg::save_checkpoint(r.model, stage / "checkpoint.gibrss");
  write_text(stage / "train_log.csv", r.log.to_csv());
  write_text(stage / "config.txt", config_text(cfg));
  write_text(stage / "metrics.txt", r.report.text.empty() ? "no training data\n" : r.report.text);
  if (fs::exists(out_dir)) fs::remove_all(out_dir);
  if (!out_dir.parent_path().empty()) make_dirs(out_dir.parent_path());
  fs::rename(stage, out_dir, ec);
  if (ec) throw IoError("cannot move results into '" + out_dir.string() + "': " + ec.message());
}

EvalReport cmd_eval(const fs::path& checkpoint, const fs::path& data, const std::optional<fs::path>& out_dir) {
  const seg::SegModel model = seg::load_checkpoint(checkpoint);
  const data::Dataset ds = load_dataset(data);
  EvalReport r = evaluate(model, ds);
  if (out_dir) {
    make_dirs(*out_dir);
    write_text(*out_dir / "report.txt", r.text);
    write_text(*out_dir / "per_class.csv", r.csv);
  }
  return r;
}

void cmd_segment(const fs::path& checkpoint, const fs::path& image, const fs::path& out_dir) {
  const seg::SegModel model = seg::load_checkpoint(checkpoint);
  const Image img = data::read_ppm(image);
  const LabelMap labels = seg::predict(model, img);
  make_dirs(out_dir);
  data::write_pgm(labels, out_dir / "labels.pgm");
  data::write_ppm(colorize(labels), out_dir / "color.ppm");
  data::write_ppm(overlay(img, labels), out_dir / "overlay.ppm");
}

// ---- ablation ----

namespace {
std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}
}  // namespace

SweepSpec parse_sweep(const std::string& text, const RunConfig& base) {
  SweepSpec s;
  for (const auto& [k, v] : key_values(text, "sweep")) {
    const auto items = split_list(v);
    if (items.empty()) throw ContractError("sweep axis '" + k + "' has no values");
    for (const auto& it : items) {
      if (k == "conv") s.conv.push_back(gnn::parse_conv_variant(it));
      else if (k == "k") {
        const int kv = parse_number<int>(k, it);
        require(kv >= 1, "sweep: k must be >= 1, got " + it);
        s.k.push_back(kv);
      } else if (k == "node_mask") s.node_mask.push_back(parse_flag(k, it));
      else if (k == "edge_mask") s.edge_mask.push_back(parse_flag(k, it));
      else if (k == "gib") s.gib.push_back(parse_flag(k, it));
      else if (k == "seeds") s.seeds.push_back(parse_number<std::uint64_t>(k, it));
      else throw ContractError("unknown sweep axis '" + k + "'");
    }
  }
  if (s.conv.empty()) s.conv.push_back(base.model.variant);
  if (s.k.empty()) s.k.push_back(base.model.k);
  if (s.node_mask.empty()) s.node_mask.push_back(base.model.node_mask);
  if (s.edge_mask.empty()) s.edge_mask.push_back(base.model.edge_mask);
  if (s.gib.empty()) s.gib.push_back(base.model.gib);
  if (s.seeds.empty()) s.seeds.push_back(base.model.seed);
  return s;
}

double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<SweepRow> run_sweep(const RunConfig& base, const SweepSpec& sweep) {
  std::vector<SweepRow> rows;
  std::vector<seg::SegModelConfig> cells;
  for (auto conv : sweep.conv)
    for (int k : sweep.k)
      for (bool nm : sweep.node_mask)
        for (bool em : sweep.edge_mask)
          for (bool g : sweep.gib) {
            seg::SegModelConfig c = base.model;
            c.variant = conv;
            c.k = k;
            c.node_mask = nm;
            c.edge_mask = em;
            c.gib = g;
            c.validate();
            cells.push_back(c);
            rows.push_back({conv, k, nm, em, g, 0, 0, 0, {}});
          }
  const data::Dataset train_ds = training_set(base);
  const data::Dataset test_ds = test_set(base);
  require(!train_ds.items.empty(), "ablate: training set is empty");
  require(!test_ds.items.empty(), "ablate: held-out set is empty");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::vector<double> miou, oa, f1;
    for (auto seed : sweep.seeds) {
      seg::SegModelConfig c = cells[i];
      c.seed = seed;
      seg::SegModel m = seg::build_model(c);
      seg::TrainHooks hooks;
      hooks.epoch_metrics = false;
      seg::train(m, train_ds.items, hooks);
      const auto r = evaluate(m, test_ds);
      miou.push_back(r.metrics.miou);
      oa.push_back(r.metrics.oa);
      f1.push_back(r.metrics.mean_f1);
    }
    rows[i].miou = median(miou);
    rows[i].oa = median(oa);
    rows[i].mean_f1 = median(f1);
    rows[i].miou_per_seed = miou;
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "conv,k,node_mask,edge_mask,gib,miou,oa,mean_f1\n";
  for (const auto& r : rows)
    out += gnn::to_string(r.conv) + "," + std::to_string(r.k) + "," + (r.node_mask ? "on" : "off") + "," +
           (r.edge_mask ? "on" : "off") + "," + (r.gib ? "on" : "off") + "," + fmt_exact(r.miou) + "," + fmt_exact(r.oa) +
           "," + fmt_exact(r.mean_f1) + "\n";
  return out;
}

// ---- graph dump ----

std::string graph_dump(const seg::SegModel& model, const Image& image) {
  Tape tape;
  ParamBinder bind{tape, model.params};
  const seg::ForwardResult fr = seg::forward(bind, model, image);
  auto stages = nlohmann::ordered_json::array();
  auto add = [&](const seg::StageTrace& tr, const std::string& kind, int stage) {
    graph::PatchGraph g = *tr.graph;
    const std::size_t e = g.num_edges();
    if (e > 0 && !tr.attention.empty()) {
      Tensor w({e, 1});
      for (const auto& a : tr.attention)
        for (std::size_t i = 0; i < e; ++i) w[i] += a.edge.value()[i] / static_cast<double>(tr.attention.size());
      g.edge_weights = std::move(w);
    }
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["kind"] = kind;
    j["graph"] = nlohmann::ordered_json::parse(graph::dump_graph_json(g));
    stages.push_back(std::move(j));
  };
  for (std::size_t s = 0; s < fr.encoder.size(); ++s) add(fr.encoder[s], "encoder", static_cast<int>(s) + 1);
  for (std::size_t i = 0; i < fr.decoder.size(); ++i)
    add(fr.decoder[i], "decoder", static_cast<int>(fr.encoder.size() - 1 - i));
  return stages.dump(1) + "\n";
}

}  // namespace gibrss::cli
