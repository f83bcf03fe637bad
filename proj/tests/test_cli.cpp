#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mos/adapter_io.hpp"
#include "mos/cli.hpp"

using namespace mos;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / "mos_cli_test") {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("budget subcommand") {
  const Run r2 = run({"budget", "--dims-preset", "7b", "--rank", "2"});
  CHECK(r2.code == 0);
  CHECK(contains(r2.out, "lora_params=4997120"));
  CHECK(contains(r2.out, "millions=5.00"));
  const Run r8 = run({"budget", "--dims-preset", "7b", "--rank", "8"});
  CHECK(contains(r8.out, "lora_params=19988480"));
  CHECK(contains(r8.out, "millions=19.99"));
  const Run er = run({"budget", "--dims-preset", "7b", "--budget", "4997120"});
  CHECK(er.code == 0);
  CHECK(contains(er.out, "equivalent_rank=2"));
  CHECK(contains(er.out, "64"));
  CHECK(run({"budget", "--dims-preset", "7b", "--budget", "4997121"}).code == 1);
}

TEST_CASE("diversity subcommand") {
  const Run r = run({"diversity", "--variant", "pure", "--L", "4", "--e", "2", "--r", "8", "--l", "1"});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "combinations=1\n"));
  const Run s = run({"diversity", "--variant", "sharding", "--L", "2", "--e", "1", "--r", "1", "--l", "2"});
  CHECK(contains(s.out, "combinations=36\n"));
}

TEST_CASE("usage errors exit 2") {
  CHECK(run({"budget", "--no-such-flag"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"diversity", "--variant", "nope", "--L", "2", "--e", "1", "--r", "1"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("simulate-serving subcommand") {
  const Run r = run({"simulate-serving", "--tenants", "10000", "--method", "lora", "--rank", "16",
                     "--dims-preset", "70b-attn", "--precision-bytes", "4"});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "total_tb=3.355"));
  CHECK(contains(r.out, "assumption:"));
  CHECK(run({"simulate-serving", "--method", "mos", "--dims-preset", "70b-attn"}).code == 2);
  CHECK(run({"simulate-serving", "--precision-bytes", "3"}).code == 2);
}

TEST_CASE("adapter file workflow") {
  TempDir dir;
  const std::string a = dir / "a.mos", b = dir / "b.mos", js = dir / "a.json", w0 = dir / "w0.json";
  REQUIRE(run({"init", "--out", a, "--variant", "mos", "--equivalent-rank", "3", "--rank", "4",
               "--shards", "2", "--private-rank", "1", "--in-dim", "8", "--out-dim", "8",
               "--blocks", "3", "--seed", "5"})
              .code == 0);
  CHECK(run({"validate", "--in", a}).code == 0);

  const Run tr = run({"train", "--in", a, "--out", b, "--steps", "20", "--lr", "1e-2",
                      "--samples", "16", "--print-every", "10"});
  CHECK(tr.code == 0);
  CHECK(contains(tr.out, "structure_unchanged=true"));
  CHECK(structure_digest(load_adapter(a)) == structure_digest(load_adapter(b)));

  const Run comp = run({"compose", "--in", b, "--layer", "2"});
  REQUIRE(comp.code == 0);
  const auto doc = nlohmann::json::parse(comp.out);
  CHECK(doc.at("A").size() == 4);
  CHECK(run({"compose", "--in", b, "--layer", "3"}).code != 0);

  {
    std::ofstream f(w0);
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < 8; ++i) rows.push_back(std::vector<double>(8, i == 0 ? 1.0 : 0.0));
    f << rows.dump();
  }
  CHECK(run({"merge", "--in", b, "--w0", w0}).code == 0);

  CHECK(run({"export", "--in", b, "--out", js}).code == 0);
  CHECK(run({"import", "--in", js, "--out", a}).code == 0);
  CHECK(encode_adapter(load_adapter(a)) == encode_adapter(load_adapter(b)));

  // Flip one pool byte: the CRC no longer matches.
  {
    std::fstream f(b, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(120);
    f.put('\x7f');
  }
  const Run bad = run({"validate", "--in", b});
  CHECK(bad.code != 0);
  CHECK(contains(bad.err, "checksum"));
  CHECK(run({"validate", "--in", dir / "missing.mos"}).code == 1);
}
