#include "mos/adapter_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <boost/crc.hpp>

namespace mos {

namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'O', 'S', '1'};
constexpr std::uint32_t kFlagTied = 1u;

enum class ExtraKind : std::uint32_t { none = 0, scalars = 1, masks = 2 };

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void count(std::size_t v) {
    if (v > 0xffffffffu) throw Error("adapter field exceeds 32-bit range");
    u32(static_cast<std::uint32_t>(v));
  }
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }

  std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw LoadError(LoadErrorKind::malformed, "adapter file ends inside a block");
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const AdapterState& state) {
  const MosConfig& cfg = state.config;
  const std::size_t L = state.layer_types.empty() ? 0 : state.layer_types.front().spec.num_blocks;
  w.count(L);
  w.count(cfg.rank);
  w.count(cfg.shards_per_vector);
  w.count(cfg.private_rank);
  w.count(cfg.equivalent_rank);
  w.f64(cfg.alpha);
  w.f64(cfg.dropout);
  w.u32(static_cast<std::uint32_t>(cfg.variant));
  w.u32(cfg.tied_indices ? kFlagTied : 0u);
  w.u64(cfg.seed);
  w.count(state.layer_types.size());
  for (const auto& lt : state.layer_types) {
    w.count(lt.spec.name.size());
    w.raw({reinterpret_cast<const std::uint8_t*>(lt.spec.name.data()), lt.spec.name.size()});
    w.count(lt.spec.in_dim);
    w.count(lt.spec.out_dim);
    w.count(lt.spec.num_blocks);
  }
}

void write_pool(Writer& w, const ShardPool& pool) {
  w.count(pool.num_public);
  w.count(pool.num_private);
  w.count(pool.shard_len());
  for (double v : pool.data.data()) w.f32(v);
}

void write_structure(Writer& w, const AdapterState& state) {
  for (const auto& lt : state.layer_types) {
    for (std::size_t k = 0; k < lt.index_a.size(); ++k) {
      for (std::uint32_t v : lt.index_a[k].entries) w.u32(v);
      for (std::uint32_t v : lt.index_b[k].entries) w.u32(v);
    }
  }
  for (const auto& lt : state.layer_types) {
    ExtraKind kind = ExtraKind::none;
    if (!lt.scaling.empty()) {
      kind = lt.scaling.front().scalars.empty() ? ExtraKind::masks : ExtraKind::scalars;
    }
    w.u32(static_cast<std::uint32_t>(kind));
    for (const auto& sv : lt.scaling) {
      if (kind == ExtraKind::scalars) {
        for (double v : sv.scalars) w.f64(v);
      } else {
        for (std::uint8_t m : sv.mask) w.u8(m);
      }
    }
  }
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) noexcept {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

std::vector<std::uint8_t> encode_adapter(const AdapterState& state) {
  for (const auto& lt : state.layer_types) {
    if (lt.spec.num_blocks != state.layer_types.front().spec.num_blocks) {
      throw ConfigError("adapter file requires every layer type to span the same number of blocks");
    }
  }
  Writer w;
  w.raw(kMagic);
  w.u32(kAdapterFormatVersion);
  write_config(w, state);
  for (const auto& lt : state.layer_types) {
    write_pool(w, lt.pool_a);
    write_pool(w, lt.pool_b);
  }
  write_structure(w, state);
  w.u32(crc32(w.bytes()));
  return std::move(w.bytes());
}

AdapterState decode_adapter(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw LoadError(LoadErrorKind::bad_magic, "not an adapter file (bad magic)");
  }
  if (bytes.size() < 12) {
    throw LoadError(LoadErrorKind::bad_crc, "adapter file too short to carry a checksum");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (tail.u32() != crc32(body)) {
    throw LoadError(LoadErrorKind::bad_crc, "adapter file checksum mismatch (corrupt or truncated)");
  }

  Reader r(body);
  r.take(4);
  if (const std::uint32_t v = r.u32(); v != kAdapterFormatVersion) {
    throw LoadError(LoadErrorKind::bad_version, "unsupported adapter format version " + std::to_string(v));
  }

  AdapterState state;
  MosConfig& cfg = state.config;
  const std::uint32_t L = r.u32();
  cfg.rank = r.u32();
  cfg.shards_per_vector = r.u32();
  cfg.private_rank = r.u32();
  cfg.equivalent_rank = r.u32();
  cfg.alpha = r.f64();
  cfg.dropout = r.f64();
  const std::uint32_t variant = r.u32();
  if (variant > static_cast<std::uint32_t>(Variant::mos)) {
    throw LoadError(LoadErrorKind::malformed, "unknown variant code " + std::to_string(variant));
  }
  cfg.variant = static_cast<Variant>(variant);
  cfg.tied_indices = (r.u32() & kFlagTied) != 0;
  cfg.seed = r.u64();
  if (cfg.rank == 0 || cfg.shards_per_vector == 0 || L == 0) {
    throw LoadError(LoadErrorKind::malformed, "adapter config has a zero rank, shard count or depth");
  }

  const std::uint32_t num_types = r.u32();
  for (std::uint32_t t = 0; t < num_types; ++t) {
    LayerTypeState lt;
    const auto name = r.take(r.u32());
    lt.spec.name.assign(name.begin(), name.end());
    lt.spec.in_dim = r.u32();
    lt.spec.out_dim = r.u32();
    lt.spec.num_blocks = r.u32();
    if (lt.spec.num_blocks != L) {
      throw LoadError(LoadErrorKind::malformed, "layer type '" + lt.spec.name + "' block count disagrees with config");
    }
    state.layer_types.push_back(std::move(lt));
  }

  auto read_pool = [&](Side side) {
    ShardPool pool;
    pool.side = side;
    pool.num_public = r.u32();
    pool.num_private = r.u32();
    const std::size_t len = r.u32();
    const std::size_t n = pool.num_shards() * len;
    if (n * 4 > body.size()) throw LoadError(LoadErrorKind::malformed, "pool block larger than file");
    std::vector<double> data(n);
    for (double& v : data) v = r.f32();
    pool.data = Matrix(pool.num_shards(), len, std::move(data));
    return pool;
  };
  for (auto& lt : state.layer_types) {
    lt.pool_a = read_pool(Side::a);
    lt.pool_b = read_pool(Side::b);
  }

  const std::size_t cells = cfg.shards_per_vector * cfg.rank;
  if (cells * 4 > body.size()) throw LoadError(LoadErrorKind::malformed, "index block larger than file");
  for (auto& lt : state.layer_types) {
    for (std::size_t k = 0; k < L; ++k) {
      for (Side side : {Side::a, Side::b}) {
        IndexMatrix m{k, side, cfg.shards_per_vector, cfg.rank, std::vector<std::uint32_t>(cells)};
        for (auto& v : m.entries) v = r.u32();
        (side == Side::a ? lt.index_a : lt.index_b).push_back(std::move(m));
      }
    }
  }

  for (auto& lt : state.layer_types) {
    const auto kind = static_cast<ExtraKind>(r.u32());
    if (kind == ExtraKind::none) continue;
    for (std::size_t k = 0; k < L; ++k) {
      ScalingVector sv{k, {}, {}};
      if (kind == ExtraKind::scalars) {
        sv.scalars.resize(cfg.rank);
        for (double& v : sv.scalars) v = r.f64();
      } else if (kind == ExtraKind::masks) {
        sv.mask.resize(cfg.equivalent_rank * L);
        for (auto& m : sv.mask) m = r.u8();
      } else {
        throw LoadError(LoadErrorKind::malformed, "unknown extras block kind");
      }
      lt.scaling.push_back(std::move(sv));
    }
  }
  if (!r.done()) throw LoadError(LoadErrorKind::malformed, "trailing bytes before checksum");

  const ValidationReport report = validate(state);
  if (!report.ok()) {
    const auto first = report.failures().front();
    throw LoadError(LoadErrorKind::invariant, "adapter violates " + first.name + ": " + first.detail);
  }
  return state;
}

void save_adapter(const AdapterState& state, const std::filesystem::path& path) {
  const auto bytes = encode_adapter(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

AdapterState load_adapter(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::io, "cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return decode_adapter(bytes);
}

std::uint32_t structure_digest(const AdapterState& state) {
  Writer w;
  write_config(w, state);
  write_structure(w, state);
  return crc32(w.bytes());
}

nlohmann::json adapter_to_json(const AdapterState& state) {
  using nlohmann::json;
  const MosConfig& cfg = state.config;
  json doc;
  doc["format"] = "mos-adapter";
  doc["version"] = kAdapterFormatVersion;
  doc["config"] = {{"rank", cfg.rank},
                   {"shards_per_vector", cfg.shards_per_vector},
                   {"private_rank", cfg.private_rank},
                   {"equivalent_rank", cfg.equivalent_rank},
                   {"variant", to_string(cfg.variant)},
                   {"tied_indices", cfg.tied_indices},
                   {"alpha", cfg.alpha},
                   {"dropout", cfg.dropout},
                   {"seed", cfg.seed}};
  auto pool_json = [](const ShardPool& p) {
    json rows = json::array();
    for (std::size_t i = 0; i < p.data.rows(); ++i) {
      const auto row = p.data.row(i);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return json{{"num_public", p.num_public}, {"num_private", p.num_private},
                {"shard_len", p.shard_len()}, {"data", rows}};
  };
  auto index_json = [](const std::vector<IndexMatrix>& ms) {
    json out = json::array();
    for (const auto& m : ms) {
      json rows = json::array();
      for (std::size_t s = 0; s < m.shards_per_vector; ++s) {
        rows.push_back(std::vector<std::uint32_t>(
            m.entries.begin() + static_cast<std::ptrdiff_t>(s * m.rank),
            m.entries.begin() + static_cast<std::ptrdiff_t>((s + 1) * m.rank)));
      }
      out.push_back(rows);
    }
    return out;
  };
  doc["layer_types"] = json::array();
  for (const auto& lt : state.layer_types) {
    json t{{"name", lt.spec.name},
           {"in_dim", lt.spec.in_dim},
           {"out_dim", lt.spec.out_dim},
           {"num_blocks", lt.spec.num_blocks},
           {"pool_a", pool_json(lt.pool_a)},
           {"pool_b", pool_json(lt.pool_b)},
           {"index_a", index_json(lt.index_a)},
           {"index_b", index_json(lt.index_b)}};
    json scalars = json::array(), masks = json::array();
    for (const auto& sv : lt.scaling) {
      if (!sv.scalars.empty()) scalars.push_back(sv.scalars);
      if (!sv.mask.empty()) masks.push_back(sv.mask);
    }
    t["scalars"] = scalars;
    t["masks"] = masks;
    doc["layer_types"].push_back(std::move(t));
  }
  return doc;
}

AdapterState adapter_from_json(const nlohmann::json& doc) {
  AdapterState state;
  try {
    if (doc.at("format") != "mos-adapter") {
      throw LoadError(LoadErrorKind::bad_magic, "JSON document is not a mos-adapter export");
    }
    if (doc.at("version").get<std::uint32_t>() != kAdapterFormatVersion) {
      throw LoadError(LoadErrorKind::bad_version, "unsupported adapter export version");
    }
    const auto& c = doc.at("config");
    MosConfig& cfg = state.config;
    cfg.rank = c.at("rank").get<std::size_t>();
    cfg.shards_per_vector = c.at("shards_per_vector").get<std::size_t>();
    cfg.private_rank = c.at("private_rank").get<std::size_t>();
    cfg.equivalent_rank = c.at("equivalent_rank").get<std::size_t>();
    const auto variant = parse_variant(c.at("variant").get<std::string>());
    if (!variant) throw LoadError(LoadErrorKind::malformed, "unknown variant in export");
    cfg.variant = *variant;
    cfg.tied_indices = c.at("tied_indices").get<bool>();
    cfg.alpha = c.at("alpha").get<double>();
    cfg.dropout = c.at("dropout").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();

    auto read_pool = [](const nlohmann::json& j, Side side) {
      ShardPool p;
      p.side = side;
      p.num_public = j.at("num_public").get<std::size_t>();
      p.num_private = j.at("num_private").get<std::size_t>();
      const std::size_t len = j.at("shard_len").get<std::size_t>();
      std::vector<double> data;
      for (const auto& row : j.at("data")) {
        if (row.size() != len) throw LoadError(LoadErrorKind::malformed, "pool row has wrong length");
        for (const auto& v : row) data.push_back(v.get<double>());
      }
      const std::size_t rows = len == 0 ? 0 : data.size() / len;
      p.data = Matrix(rows, len, std::move(data));
      return p;
    };
    auto read_indices = [&](const nlohmann::json& j, Side side) {
      std::vector<IndexMatrix> out;
      for (std::size_t k = 0; k < j.size(); ++k) {
        IndexMatrix m{k, side, cfg.shards_per_vector, cfg.rank, {}};
        for (const auto& row : j[k])
          for (const auto& v : row) m.entries.push_back(v.get<std::uint32_t>());
        out.push_back(std::move(m));
      }
      return out;
    };

    for (const auto& t : doc.at("layer_types")) {
      LayerTypeState lt;
      lt.spec = {t.at("name").get<std::string>(), t.at("in_dim").get<std::size_t>(),
                 t.at("out_dim").get<std::size_t>(), t.at("num_blocks").get<std::size_t>()};
      lt.pool_a = read_pool(t.at("pool_a"), Side::a);
      lt.pool_b = read_pool(t.at("pool_b"), Side::b);
      lt.index_a = read_indices(t.at("index_a"), Side::a);
      lt.index_b = read_indices(t.at("index_b"), Side::b);
      std::size_t k = 0;
      for (const auto& s : t.at("scalars")) lt.scaling.push_back({k++, s.get<Vector>(), {}});
      k = 0;
      for (const auto& m : t.at("masks")) {
        lt.scaling.push_back({k++, {}, m.get<std::vector<std::uint8_t>>()});
      }
      state.layer_types.push_back(std::move(lt));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::malformed, std::string("malformed adapter export: ") + e.what());
  }
  const ValidationReport report = validate(state);
  if (!report.ok()) {
    const auto first = report.failures().front();
    throw LoadError(LoadErrorKind::invariant, "adapter violates " + first.name + ": " + first.detail);
  }
  return state;
}

}  // namespace mos
