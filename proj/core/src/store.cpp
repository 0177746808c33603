#include "icar/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "icar/error.hpp"

namespace icar::store {
namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float f) { uint(std::bit_cast<std::uint32_t>(f)); }
  void f64(double d) { uint(std::bit_cast<std::uint64_t>(d)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(std::span<const float> v) {
    for (float f : v) f32(f);
  }
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error(fmt::format("write to '{}' failed", path.string()));
  }

 private:
  std::vector<char> buf_;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(fmt::format("cannot open '{}'", path.string()));
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) {
      throw FormatError(fmt::format("{}: corrupt: expected at least {} bytes, got {}", what_, pos_ + n, buf_.size()));
    }
  }
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str() {
    const auto n = uint<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t n) {
    need(n * 4);
    std::vector<float> out(n);
    for (auto& f : out) f = f32();
    return out;
  }
  bool magic(const char* m) {
    if (buf_.size() < 8 || std::memcmp(buf_.data(), m, 8) != 0) return false;
    pos_ = 8;
    return true;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return buf_.size(); }

 private:
  const std::vector<char>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

constexpr std::size_t kStoreHeaderBytes = 8 + 2 + 4 + 8;

}  // namespace

void EmbeddingStore::append(std::uint64_t id, std::uint32_t category, std::string domain, std::span<const float> v,
                            std::uint16_t hue, std::int32_t label) {
  if (ids.empty() && dim == 0) dim = static_cast<std::uint32_t>(v.size());
  if (v.size() != dim) throw ShapeError(fmt::format("embedding store: row dim {} != store dim {}", v.size(), dim));
  ids.push_back(id);
  categories.push_back(category);
  domains.push_back(std::move(domain));
  hues.push_back(hue);
  labels.push_back(label);
  data.insert(data.end(), v.begin(), v.end());
}

void write_store(const std::filesystem::path& path, const EmbeddingStore& store) {
  const std::uint64_t count = store.count();
  if (store.data.size() != count * store.dim || store.categories.size() != count || store.domains.size() != count ||
      (!store.hues.empty() && store.hues.size() != count) ||
      (!store.labels.empty() && store.labels.size() != count)) {
    throw ContractError(fmt::format("embedding store: inconsistent lengths (count {}, dim {}, data {})", count,
                                    store.dim, store.data.size()));
  }
  Writer w;
  w.bytes(kEmbeddingMagic, 8);
  w.uint(kFormatVersion);
  w.uint(store.dim);
  w.uint(count);
  w.floats(store.data);
  w.save(path);

  nlohmann::json side;
  side["ids"] = store.ids;
  side["categories"] = store.categories;
  side["domains"] = store.domains;
  if (!store.hues.empty()) side["hues"] = store.hues;
  if (!store.labels.empty()) side["labels"] = store.labels;
  std::ofstream js(path.string() + ".json", std::ios::trunc);
  js << side.dump() << "\n";
  if (!js) throw Error(fmt::format("write to '{}.json' failed", path.string()));
}

EmbeddingStore read_store(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  Reader r(buf, path.string());
  if (!r.magic(kEmbeddingMagic)) throw FormatError(fmt::format("{}: not an embedding store", path.string()));
  if (buf.size() < kStoreHeaderBytes) {
    throw FormatError(fmt::format("{}: corrupt: expected {} header bytes, got {}", path.string(), kStoreHeaderBytes,
                                  buf.size()));
  }
  const auto version = r.uint<std::uint16_t>();
  if (version != kFormatVersion) throw FormatError(fmt::format("{}: unsupported version {}", path.string(), version));
  EmbeddingStore s;
  s.dim = r.uint<std::uint32_t>();
  const auto count = r.uint<std::uint64_t>();
  const std::uint64_t expected = kStoreHeaderBytes + count * s.dim * 4;
  if (buf.size() != expected) {
    throw FormatError(fmt::format("{}: corrupt: expected {} bytes, got {}", path.string(), expected, buf.size()));
  }
  s.data = r.floats(count * s.dim);

  std::ifstream js(path.string() + ".json");
  if (!js) throw FormatError(fmt::format("{}: missing sidecar {}.json", path.string(), path.string()));
  nlohmann::json side;
  try {
    js >> side;
    s.ids = side.at("ids").get<std::vector<std::uint64_t>>();
    s.categories = side.at("categories").get<std::vector<std::uint32_t>>();
    s.domains = side.at("domains").get<std::vector<std::string>>();
    if (side.contains("hues")) s.hues = side.at("hues").get<std::vector<std::uint16_t>>();
    if (side.contains("labels")) s.labels = side.at("labels").get<std::vector<std::int32_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}.json: malformed sidecar: {}", path.string(), e.what()));
  }
  if (s.ids.size() != count || s.categories.size() != count || s.domains.size() != count ||
      (!s.hues.empty() && s.hues.size() != count) || (!s.labels.empty() && s.labels.size() != count)) {
    throw FormatError(fmt::format("{}.json: sidecar length does not match count {}", path.string(), count));
  }
  return s;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
  for (const auto& rec : records) {
    nlohmann::json j;
    j["scene_id"] = rec.scene_id;
    j["scene_embedding_row"] = rec.scene_embedding_row;
    j["items"] = nlohmann::json::array();
    for (const auto& it : rec.items) {
      j["items"].push_back({{"item_id", it.item_id}, {"category", it.category}, {"embedding_row", it.embedding_row}});
    }
    if (rec.style_label) j["style_label"] = *rec.style_label;
    out << j.dump() << "\n";
  }
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError(fmt::format("cannot open '{}'", path.string()));
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord rec;
      rec.scene_id = j.at("scene_id").get<std::uint64_t>();
      rec.scene_embedding_row = j.at("scene_embedding_row").get<std::uint64_t>();
      for (const auto& it : j.at("items")) {
        rec.items.push_back({it.at("item_id").get<std::uint64_t>(), it.at("category").get<std::uint32_t>(),
                             it.at("embedding_row").get<std::uint64_t>()});
      }
      if (j.contains("style_label")) rec.style_label = j.at("style_label").get<int>();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(fmt::format("{}:{}: malformed manifest record: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

void validate_manifest(const std::vector<ManifestRecord>& records, std::uint64_t scene_rows, std::uint64_t item_rows) {
  for (const auto& rec : records) {
    if (rec.scene_embedding_row >= scene_rows) {
      throw FormatError(fmt::format("manifest: scene {} row {} >= store count {}", rec.scene_id,
                                    rec.scene_embedding_row, scene_rows));
    }
    for (const auto& it : rec.items) {
      if (it.embedding_row >= item_rows) {
        throw FormatError(fmt::format("manifest: item {} row {} >= store count {}", it.item_id, it.embedding_row,
                                      item_rows));
      }
    }
  }
}

std::uint64_t config_digest(const nlohmann::json& config) {
  const std::string canon = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.uint(kFormatVersion);
  w.uint(ckpt.config_digest);
  w.str(ckpt.kind);
  w.str(ckpt.config.dump());
  w.uint(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.data.size() != nc::shape_numel(t.shape)) {
      throw ContractError(fmt::format("checkpoint tensor '{}': data length does not match {}", t.name,
                                      nc::shape_str(t.shape)));
    }
    w.str(t.name);
    w.uint(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.uint(static_cast<std::uint64_t>(d));
    w.floats(t.data);
  }
  w.uint(static_cast<std::uint8_t>(ckpt.optimizer ? 1 : 0));
  if (ckpt.optimizer) {
    const auto& o = *ckpt.optimizer;
    if (o.m.size() != ckpt.tensors.size() || o.v.size() != ckpt.tensors.size()) {
      throw ContractError("checkpoint: optimizer moments do not match tensor count");
    }
    w.uint(o.step);
    w.f64(o.beta1);
    w.f64(o.beta2);
    w.f64(o.eps);
    w.f64(o.weight_decay);
    for (std::size_t i = 0; i < o.m.size(); ++i) {
      if (o.m[i].size() != ckpt.tensors[i].data.size() || o.v[i].size() != ckpt.tensors[i].data.size()) {
        throw ContractError(fmt::format("checkpoint: moment size mismatch for '{}'", ckpt.tensors[i].name));
      }
    }
    for (const auto& m : o.m) w.floats(m);
    for (const auto& v : o.v) w.floats(v);
  }
  w.save(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  Reader r(buf, path.string());
  if (!r.magic(kCheckpointMagic)) throw FormatError(fmt::format("{}: not a checkpoint", path.string()));
  const auto version = r.uint<std::uint16_t>();
  if (version != kFormatVersion) throw FormatError(fmt::format("{}: unsupported version {}", path.string(), version));
  Checkpoint c;
  c.config_digest = r.uint<std::uint64_t>();
  c.kind = r.str();
  try {
    c.config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: malformed config: {}", path.string(), e.what()));
  }
  const auto n = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str();
    const auto rank = r.uint<std::uint32_t>();
    if (rank > 8) throw FormatError(fmt::format("{}: tensor '{}' has implausible rank {}", path.string(), t.name, rank));
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<std::size_t>(r.uint<std::uint64_t>()));
    t.data = r.floats(nc::shape_numel(t.shape));
    c.tensors.push_back(std::move(t));
  }
  if (r.uint<std::uint8_t>()) {
    OptimizerSnapshot o;
    o.step = r.uint<std::uint64_t>();
    o.beta1 = r.f64();
    o.beta2 = r.f64();
    o.eps = r.f64();
    o.weight_decay = r.f64();
    for (const auto& t : c.tensors) o.m.push_back(r.floats(t.data.size()));
    for (const auto& t : c.tensors) o.v.push_back(r.floats(t.data.size()));
    c.optimizer = std::move(o);
  }
  if (r.pos() != r.size()) {
    throw FormatError(fmt::format("{}: corrupt: expected {} bytes, got {}", path.string(), r.pos(), r.size()));
  }
  return c;
}

}  // namespace icar::store
