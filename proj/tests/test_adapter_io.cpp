#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mos/adapter_io.hpp"
#include "mos/composer.hpp"
#include "mos/errors.hpp"

using namespace mos;

namespace {

AdapterState trained_like(const MosConfig& base, std::uint64_t seed) {
  MosConfig cfg = base;
  cfg.seed = seed;
  AdapterState st = init_state(cfg, {{"q", 8, 8, 3}, {"up", 8, 12, 3}});
  Rng rng(seed + 50);
  for (auto& lt : st.layer_types) {
    for (double& v : lt.pool_a.data.data()) v = rng.normal();
    for (double& v : lt.pool_b.data.data()) v = rng.normal();
  }
  return st;
}

std::vector<MosConfig> configs() {
  return {MosConfig::lora(2), MosConfig::pure_sharing(2, 3), MosConfig::random_scaling(1, 3),
          MosConfig::subset_selection(2, 3), MosConfig::mixture_of_shards(3, 4, 2, 1)};
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

void write_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void reseal(std::vector<std::uint8_t>& b) {
  const std::size_t body = b.size() - 4;
  write_u32(b, body, crc32(std::span<const std::uint8_t>(b.data(), body)));
}

LoadErrorKind load_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_adapter(bytes);
  } catch (const LoadError& e) {
    return e.kind();
  }
  FAIL("decode accepted corrupt bytes");
  return LoadErrorKind::io;
}

}  // namespace

TEST_CASE("crc32 check value") {
  const char* s = "123456789";
  CHECK(crc32(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s), 9)) ==
        0xCBF43926u);
}

TEST_CASE("header layout") {
  const AdapterState st = trained_like(MosConfig::mixture_of_shards(3, 4, 2, 1), 1);
  const auto bytes = encode_adapter(st);
  CHECK(std::memcmp(bytes.data(), "MOS1", 4) == 0);
  CHECK(read_u32(bytes, 4) == kAdapterFormatVersion);
  CHECK(read_u32(bytes, 8) == 3);   // L
  CHECK(read_u32(bytes, 12) == 4);  // r
  CHECK(read_u32(bytes, 16) == 2);  // l
  CHECK(read_u32(bytes, 20) == 1);  // p
  CHECK(read_u32(bytes, 24) == 3);  // e
  double alpha = 0.0;
  std::memcpy(&alpha, bytes.data() + 28, 8);
  CHECK(alpha == 16.0);
  CHECK(read_u32(bytes, bytes.size() - 4) ==
        crc32(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 4)));
}

TEST_CASE("encoding is deterministic and files match") {
  const auto dir = std::filesystem::temp_directory_path() / "mos_io_test";
  std::filesystem::create_directories(dir);
  for (const MosConfig& cfg : configs()) {
    const AdapterState st = trained_like(cfg, 2);
    CHECK(encode_adapter(st) == encode_adapter(st));
    save_adapter(st, dir / "a.mos");
    save_adapter(st, dir / "b.mos");
    std::ifstream fa(dir / "a.mos", std::ios::binary), fb(dir / "b.mos", std::ios::binary);
    const std::vector<char> ba{std::istreambuf_iterator<char>(fa), {}},
        bb{std::istreambuf_iterator<char>(fb), {}};
    CHECK(ba == bb);
    CHECK(validate(load_adapter(dir / "a.mos")).ok());
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(save_adapter(trained_like(MosConfig::lora(2), 0), "/nonexistent-dir/x.mos"), Error);
  try {
    load_adapter("/nonexistent-dir/x.mos");
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(e.kind() == LoadErrorKind::io);
  }
}

TEST_CASE("round trip keeps routing exact and pools within f32 rounding") {
  for (const MosConfig& cfg : configs()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      CAPTURE(to_string(cfg.variant));
      const AdapterState st = trained_like(cfg, seed);
      const AdapterState back = decode_adapter(encode_adapter(st));
      CHECK(back.config == st.config);
      for (std::size_t t = 0; t < st.layer_types.size(); ++t) {
        const auto& a = st.layer_types[t];
        const auto& b = back.layer_types[t];
        CHECK(a.spec == b.spec);
        CHECK(a.index_a == b.index_a);
        CHECK(a.index_b == b.index_b);
        CHECK(a.scaling == b.scaling);
        for (std::size_t k = 0; k < 3; ++k) {
          const ComposedAdapter c0 = compose_layer(st, t, k), c1 = compose_layer(back, t, k);
          for (std::size_t i = 0; i < c0.a.data().size(); ++i)
            CHECK(std::abs(c0.a.data()[i] - c1.a.data()[i]) <= 1e-6 * std::abs(c0.a.data()[i]));
          for (std::size_t i = 0; i < c0.b.data().size(); ++i)
            CHECK(std::abs(c0.b.data()[i] - c1.b.data()[i]) <= 1e-6 * std::abs(c0.b.data()[i]));
        }
      }
      // f32 values survive a second trip bit-exactly.
      CHECK(encode_adapter(back) == encode_adapter(st));
    }
  }
}

TEST_CASE("corrupt files are rejected with a structured error") {
  const AdapterState st = trained_like(MosConfig::mixture_of_shards(3, 4, 2, 1), 3);
  const auto good = encode_adapter(st);

  auto truncated = good;
  truncated.resize(good.size() - 9);
  CHECK(load_kind(truncated) == LoadErrorKind::bad_crc);
  CHECK(load_kind({good.begin(), good.begin() + 6}) == LoadErrorKind::bad_crc);

  auto magic = good;
  magic[0] = 'X';
  CHECK(load_kind(magic) == LoadErrorKind::bad_magic);

  auto version = good;
  write_u32(version, 4, 99);
  reseal(version);
  CHECK(load_kind(version) == LoadErrorKind::bad_version);

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x10;
  CHECK(load_kind(flipped) == LoadErrorKind::bad_crc);

  auto trailing = good;
  trailing.insert(trailing.end() - 4, 0);
  reseal(trailing);
  CHECK(load_kind(trailing) == LoadErrorKind::malformed);
}

TEST_CASE("an out-of-range index in the file fails validation") {
  const AdapterState st = trained_like(MosConfig::mixture_of_shards(3, 4, 2, 1), 4);
  auto bytes = encode_adapter(st);
  // Walk the layout to the first side-A index entry of the first type.
  std::size_t at = 8 + 5 * 4 + 2 * 8 + 2 * 4 + 8;
  const std::uint32_t ntypes = read_u32(bytes, at);
  REQUIRE(ntypes == 2);
  at += 4;
  for (std::uint32_t t = 0; t < ntypes; ++t) at += 4 + read_u32(bytes, at) + 12;
  std::uint32_t pool_size = 0;
  for (std::uint32_t t = 0; t < ntypes; ++t)
    for (int side = 0; side < 2; ++side) {
      const std::uint32_t rows = read_u32(bytes, at) + read_u32(bytes, at + 4);
      const std::uint32_t len = read_u32(bytes, at + 8);
      if (t == 0 && side == 0) pool_size = rows;
      at += 12 + static_cast<std::size_t>(rows) * len * 4;
    }
  REQUIRE(read_u32(bytes, at) == st.layer_types[0].index_a[0].entries[0]);
  write_u32(bytes, at, pool_size);
  reseal(bytes);
  CHECK(load_kind(bytes) == LoadErrorKind::invariant);
}

TEST_CASE("json export and import") {
  for (const MosConfig& cfg : configs()) {
    const AdapterState st = trained_like(cfg, 5);
    const nlohmann::json doc = adapter_to_json(st);
    const AdapterState back = adapter_from_json(nlohmann::json::parse(doc.dump()));
    CHECK(back.config == st.config);
    CHECK(back.layer_types == st.layer_types);
  }
  nlohmann::json doc = adapter_to_json(trained_like(MosConfig::lora(2), 6));
  doc["layer_types"][0]["index_a"][0][0][0] = 1000;
  CHECK_THROWS_AS(adapter_from_json(doc), LoadError);
  CHECK_THROWS_AS(adapter_from_json(nlohmann::json::object()), LoadError);
}

TEST_CASE("structure digest ignores pool values") {
  AdapterState st = trained_like(MosConfig::mixture_of_shards(3, 4, 2, 1), 7);
  const std::uint32_t d = structure_digest(st);
  st.layer_types[1].pool_a.data(0, 0) += 1.0;
  CHECK(structure_digest(st) == d);
  st.layer_types[1].index_a[0](0, 0) ^= 1;
  CHECK(structure_digest(st) != d);
}
