#include "gibrss/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "gibrss/errors.hpp"
#include "gibrss/rng.hpp"

namespace gibrss::data {

namespace fs = std::filesystem;

std::array<double, 3> class_base_color(int cls, int classes) {
  require(classes >= 1 && cls >= 0 && cls < classes, "class_base_color: class out of range");
  const double v = 0.85, s = 0.82;
  const double h = 6.0 * static_cast<double>(cls) / classes;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

namespace {

struct Point {
  double x, y;
};

std::vector<Point> random_star(RngStream& rng, int size) {
  const double cx = rng.uniform(0.15, 0.85) * size, cy = rng.uniform(0.15, 0.85) * size;
  const double base = rng.uniform(size / 8.0, size / 4.0);
  const int n = 8 + static_cast<int>(rng.below(7));
  std::vector<Point> pts;
  double r = base;
  for (int i = 0; i < n; ++i) {
    // random walk on the radius, jittered angles
    r = std::clamp(r + 0.2 * base * rng.normal(), 0.4 * base, 1.4 * base);
    const double a = 2.0 * std::numbers::pi * (i + rng.uniform(-0.3, 0.3)) / n;
    pts.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return pts;
}

bool inside_even_odd(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

}  // namespace

LabeledImage synth_image(int index, int size, int classes, std::uint64_t seed) {
  require(size >= 32, "synth_dataset: size must be >= 32");
  require(classes >= 2, "synth_dataset: need at least 2 classes");
  RngStream rng(seed, static_cast<std::uint64_t>(index));
  LabeledImage li;
  li.id = "synth_" + std::to_string(index);
  li.labels = LabelMap(size, size, 0);
  const int shapes = 2 + static_cast<int>(rng.below(4));
  for (int s = 0; s < shapes; ++s) {
    const auto cls = static_cast<std::int32_t>(1 + rng.below(static_cast<std::uint64_t>(classes - 1)));
    const auto poly = random_star(rng, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (inside_even_odd(poly, x + 0.5, y + 0.5)) li.labels.at(y, x) = cls;
  }
  li.image = Image(size, size, 3);
  RngStream noise = rng.split(1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const auto base = class_base_color(li.labels.at(y, x), classes);
      for (int c = 0; c < 3; ++c) li.image.at(y, x, c) = std::clamp(base[c] + kSynthNoise * noise.normal(), 0.0, 1.0);
    }
  return li;
}

std::vector<LabeledImage> synth_dataset(int n, int size, int classes, std::uint64_t seed) {
  require(n >= 0, "synth_dataset: negative count");
  std::vector<LabeledImage> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = synth_image(i, size, classes, seed);
  return out;
}

// ---- PNM ----

namespace {

void write_file(const fs::path& path, const std::string& header, const std::vector<unsigned char>& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << header;
  f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

std::string next_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw IoError("truncated header in '" + path.string() + "'");
  return tok;
}

struct Pnm {
  int width, height, depth;
  std::vector<unsigned char> body;
};

Pnm read_pnm(const fs::path& path, const std::string& magic, int depth) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  if (next_token(f, path) != magic) throw IoError("'" + path.string() + "' is not a binary " + magic + " file");
  Pnm p{};
  try {
    p.width = std::stoi(next_token(f, path));
    p.height = std::stoi(next_token(f, path));
    const int maxval = std::stoi(next_token(f, path));
    if (maxval <= 0 || maxval > 255) throw IoError("'" + path.string() + "': only 8-bit maxval is supported");
  } catch (const std::invalid_argument&) {
    throw IoError("malformed header in '" + path.string() + "'");
  }
  if (p.width <= 0 || p.height <= 0) throw IoError("'" + path.string() + "': bad dimensions");
  p.depth = depth;
  p.body.resize(static_cast<std::size_t>(p.width) * p.height * depth);
  f.read(reinterpret_cast<char*>(p.body.data()), static_cast<std::streamsize>(p.body.size()));
  if (f.gcount() != static_cast<std::streamsize>(p.body.size())) throw IoError("truncated pixel data in '" + path.string() + "'");
  return p;
}

}  // namespace

void write_ppm(const Image& img, const fs::path& path) {
  require(img.channels == 3 || img.channels == 1, "write_ppm: need 1 or 3 channels");
  std::vector<unsigned char> body;
  body.reserve(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = img.at(y, x, img.channels == 3 ? c : 0);
        body.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
      }
  write_file(path, "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n", body);
}

Image read_ppm(const fs::path& path) {
  const Pnm p = read_pnm(path, "P6", 3);
  Image img(p.height, p.width, 3);
  for (std::size_t i = 0; i < p.body.size(); ++i) img.pixels[i] = p.body[i] / 255.0;
  return img;
}

void write_pgm(const LabelMap& labels, const fs::path& path) {
  std::vector<unsigned char> body;
  body.reserve(labels.labels.size());
  for (auto l : labels.labels) {
    require(l >= 0 && l <= 255, "write_pgm: label " + std::to_string(l) + " does not fit a byte");
    body.push_back(static_cast<unsigned char>(l));
  }
  write_file(path, "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n", body);
}

LabelMap read_pgm(const fs::path& path) {
  const Pnm p = read_pnm(path, "P5", 1);
  LabelMap lab(p.height, p.width);
  for (std::size_t i = 0; i < p.body.size(); ++i) lab.labels[i] = p.body[i];
  return lab;
}

// ---- manifest ----

void write_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  nlohmann::ordered_json j;
  j["classes"] = ds.classes;
  j["items"] = nlohmann::ordered_json::array();
  for (const auto& item : ds.items) {
    const std::string img = item.id + ".ppm", lab = item.id + "_labels.pgm";
    write_ppm(item.image, dir / img);
    write_pgm(item.labels, dir / lab);
    j["items"].push_back({{"id", item.id}, {"image", img}, {"labels", lab}});
  }
  std::ofstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot write manifest in '" + dir.string() + "'");
  f << j.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& manifest) {
  std::ifstream f(manifest);
  if (!f) throw IoError("cannot open manifest '" + manifest.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest '" + manifest.string() + "': " + e.what());
  }
  Dataset ds;
  const fs::path base = manifest.parent_path();
  try {
    ds.classes = j.at("classes").get<int>();
    for (const auto& it : j.at("items")) {
      LabeledImage li;
      li.id = it.at("id").get<std::string>();
      li.image = read_ppm(base / it.at("image").get<std::string>());
      li.labels = read_pgm(base / it.at("labels").get<std::string>());
      if (li.image.height != li.labels.height || li.image.width != li.labels.width)
        throw ContractError("dataset item '" + li.id + "': image and label sizes differ");
      for (auto l : li.labels.labels)
        require(l < ds.classes, "dataset item '" + li.id + "': label " + std::to_string(l) + " >= classes");
      ds.items.push_back(std::move(li));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest '" + manifest.string() + "': " + e.what());
  }
  return ds;
}

}  // namespace gibrss::data
