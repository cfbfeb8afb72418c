#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "gibrss/errors.hpp"
#include "gibrss/segnet.hpp"

namespace gibrss::seg {

// ---- config keys ----

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ContractError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ContractError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

struct Field {
  std::function<void(SegModelConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const SegModelConfig&)> get;
};

template <class T>
Field num(T SegModelConfig::*m) {
  return {[m](SegModelConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<T>(k, v); },
          [m](const SegModelConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return fmt(c.*m);
            else
              return std::to_string(c.*m);
          }};
}

Field flag(bool SegModelConfig::*m) {
  return {[m](SegModelConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
          [m](const SegModelConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"image_size", num(&SegModelConfig::image_size)},
      {"in_channels", num(&SegModelConfig::in_channels)},
      {"patch_size", num(&SegModelConfig::patch_size)},
      {"dim", num(&SegModelConfig::dim)},
      {"stages", num(&SegModelConfig::stages)},
      {"blocks_per_stage", num(&SegModelConfig::blocks_per_stage)},
      {"k", num(&SegModelConfig::k)},
      {"heads", num(&SegModelConfig::heads)},
      {"conv",
       {[](SegModelConfig& c, const std::string&, const std::string& v) { c.variant = gnn::parse_conv_variant(v); },
        [](const SegModelConfig& c) { return gnn::to_string(c.variant); }}},
      {"classes", num(&SegModelConfig::classes)},
      {"leaky_slope", num(&SegModelConfig::leaky_slope)},
      {"node_mask", flag(&SegModelConfig::node_mask)},
      {"edge_mask", flag(&SegModelConfig::edge_mask)},
      {"gib", flag(&SegModelConfig::gib)},
      {"gib_all_stages", flag(&SegModelConfig::gib_all_stages)},
      {"beta", num(&SegModelConfig::beta)},
      {"tau", num(&SegModelConfig::tau)},
      {"mask_init", num(&SegModelConfig::mask_init)},
      {"mixture", num(&SegModelConfig::mixture)},
      {"epochs", num(&SegModelConfig::epochs)},
      {"batch_size", num(&SegModelConfig::batch_size)},
      {"lr", num(&SegModelConfig::lr)},
      {"l2", num(&SegModelConfig::l2)},
      {"l2_squared", flag(&SegModelConfig::l2_squared)},
      {"adamw_decay", num(&SegModelConfig::adamw_decay)},
      {"seed", num(&SegModelConfig::seed)},
      {"flip", flag(&SegModelConfig::flip)},
  };
  return f;
}

}  // namespace

bool set_model_key(SegModelConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [k, f] : fields())
    if (k == key) {
      f.set(cfg, key, value);
      return true;
    }
  return false;
}

std::string model_config_text(const SegModelConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + "=" + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> model_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

// ---- checkpoint ----
//
// "GIBRSS1" | u32 version | u32 count | count x record
// record: u32 name length | name | u32 rank | rank x u32 extent | float32 data
// All integers and floats little-endian. The architecture travels as the
// record "meta/config": the key=value text, one byte per float32 element.

namespace {

constexpr char kMagic[] = "GIBRSS1";
constexpr std::uint32_t kVersion = 1;
constexpr const char* kConfigRecord = "meta/config";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) {
    if (buf.size() - pos < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

struct Record {
  Shape shape;
  std::vector<float> data;
};

void put_record(std::string& out, const std::string& name, const Shape& shape, std::span<const float> data) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) put_u32(out, static_cast<std::uint32_t>(e));
  for (float f : data) put_f32(out, f);
}

}  // namespace

std::string checkpoint_bytes(const SegModel& model) {
  std::string out(kMagic, 7);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(model.params.size() + 1));
  const std::string text = model_config_text(model.cfg);
  std::vector<float> text_data(text.begin(), text.end());
  put_record(out, kConfigRecord, {text.size()}, text_data);
  for (ParamId id = 0; id < model.params.size(); ++id) {
    const Tensor& t = model.params.value(id);
    std::vector<float> f(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) f[i] = static_cast<float>(t[i]);
    put_record(out, model.params.name(id), t.shape(), f);
  }
  return out;
}

SegModel checkpoint_from_bytes(const std::string& bytes) {
  Reader r{bytes};
  if (r.bytes(7) != std::string(kMagic, 7)) throw IoError("not a GIBRSS1 checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::map<std::string, Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    Record rec;
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      rec.shape.push_back(r.u32());
      n *= rec.shape.back();
    }
    r.need(n * 4);
    rec.data.resize(n);
    for (auto& f : rec.data) f = r.f32();
    records.emplace(name, std::move(rec));
  }
  if (r.pos != bytes.size()) throw IoError("trailing bytes after checkpoint records");

  const auto meta = records.find(kConfigRecord);
  if (meta == records.end()) throw IoError("checkpoint has no config record");
  std::string text(meta->second.data.begin(), meta->second.data.end());
  SegModelConfig cfg;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    if (!set_model_key(cfg, line.substr(0, eq), line.substr(eq + 1)))
      throw ContractError("checkpoint config: unknown key '" + line.substr(0, eq) + "'");
  }
  SegModel model = build_model(cfg);
  if (records.size() != model.params.size() + 1)
    throw ContractError("checkpoint has " + std::to_string(records.size() - 1) + " parameters, model expects " +
                        std::to_string(model.params.size()));
  for (ParamId id = 0; id < model.params.size(); ++id) {
    const auto it = records.find(model.params.name(id));
    if (it == records.end()) throw ContractError("checkpoint is missing parameter '" + model.params.name(id) + "'");
    Tensor& t = model.params.value(id);
    if (it->second.shape != t.shape())
      throw DimensionError("checkpoint parameter '" + model.params.name(id) + "' has shape " +
                           shape_str(it->second.shape) + ", expected " + shape_str(t.shape()));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = it->second.data[i];
  }
  return model;
}

void save_checkpoint(const SegModel& model, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(model);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

SegModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace gibrss::seg
