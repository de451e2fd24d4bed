#include <cstdio>
#include <doctest.h>
#include <filesystem>
#include <fstream>

#include "hemoflow/checkpoint.hpp"
#include "hemoflow/config.hpp"
#include "hemoflow/operators.hpp"

using namespace hemoflow;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("hemoflow_test_" + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

}  // namespace

TEST_CASE("network checkpoints round-trip bit-exactly") {
  TempDir tmp;
  nn::NetworkSpec spec;
  spec.input_dim = 3;
  spec.output_dim = 4;
  spec.hidden_layers = 2;
  spec.hidden_width = 6;
  spec.kind = nn::ArchKind::kModifiedMlp;
  spec.fourier = nn::FourierOptions{4, 1.0};
  spec.rwf = nn::RwfOptions{0.5, 0.1};
  spec.init_seed = 12345;
  const nn::ParamStore store = nn::ParamStore::init(spec);

  SUBCASE("parameters only") {
    checkpoint::save_network(tmp.file("a.bin"), store);
    const auto loaded = checkpoint::load_network(tmp.file("a.bin"));
    CHECK(loaded.params.spec() == spec);
    CHECK(loaded.params.values() == store.values());
    CHECK(loaded.params.fourier_b() == store.fourier_b());
    CHECK_FALSE(loaded.optimizer.has_value());
  }
  SUBCASE("with optimizer state appended") {
    checkpoint::AdamSnapshot opt;
    opt.step = 777;
    opt.lr_multiplier = 0.5;
    Rng rng(4);
    opt.m.resize(store.size());
    opt.v.resize(store.size());
    for (auto& x : opt.m) x = rng.normal();
    for (auto& x : opt.v) x = std::abs(rng.normal());
    checkpoint::save_network(tmp.file("b.bin"), store, &opt);
    const auto loaded = checkpoint::load_network(tmp.file("b.bin"));
    REQUIRE(loaded.optimizer.has_value());
    CHECK(loaded.optimizer->step == 777);
    CHECK(loaded.optimizer->lr_multiplier == 0.5);
    CHECK(loaded.optimizer->m == opt.m);
    CHECK(loaded.optimizer->v == opt.v);
  }
  SUBCASE("file-level byte identity across save/load/save") {
    checkpoint::save_network(tmp.file("c1.bin"), store);
    const auto loaded = checkpoint::load_network(tmp.file("c1.bin"));
    checkpoint::save_network(tmp.file("c2.bin"), loaded.params);
    std::ifstream f1(tmp.file("c1.bin"), std::ios::binary);
    std::ifstream f2(tmp.file("c2.bin"), std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)),
                         std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)),
                         std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(b1.substr(0, 4) == "HFNN");
  }
  SUBCASE("bad magic is rejected") {
    std::ofstream out(tmp.file("bad.bin"), std::ios::binary);
    out << "NOPE0000";
    out.close();
    CHECK_THROWS_AS(checkpoint::load_network(tmp.file("bad.bin")),
                    ValidationError);
  }
  SUBCASE("truncated parameter block is rejected") {
    checkpoint::save_network(tmp.file("t.bin"), store);
    const auto size = std::filesystem::file_size(tmp.file("t.bin"));
    std::filesystem::resize_file(tmp.file("t.bin"), size - 16);
    CHECK_THROWS_AS(checkpoint::load_network(tmp.file("t.bin")),
                    ValidationError);
  }
}

TEST_CASE("operator checkpoints round-trip") {
  TempDir tmp;
  const auto spec = operators::OperatorSpec::standard(8, 8, 12, 2, 12, 2, 16, 5);
  const auto params = operators::OperatorParams::init(spec);
  checkpoint::save_operator(tmp.file("op.bin"), params);
  CHECK(checkpoint::peek_kind(tmp.file("op.bin")) ==
        checkpoint::Kind::kOperator);
  const auto loaded = checkpoint::load_operator(tmp.file("op.bin"));
  CHECK(loaded.params.branch1.values() == params.branch1.values());
  CHECK(loaded.params.branch2.values() == params.branch2.values());
  CHECK(loaded.params.trunk.values() == params.trunk.values());
  CHECK(loaded.params.spec.q == 16);
  REQUIRE(loaded.params.spec.partition.size() == 4);
  CHECK(loaded.params.spec.partition[3].name == "p");
  CHECK(loaded.params.spec.partition[3].lo == 12);
  CHECK(loaded.params.spec.partition[3].hi == 16);

  SUBCASE("kind mismatch raises") {
    CHECK_THROWS_AS(checkpoint::load_network(tmp.file("op.bin")),
                    ValidationError);
  }
}

TEST_CASE("config parsing, typing and echo") {
  const std::string text =
      "# comment\n"
      "[domain]\n"
      "kind = straight-pipe\n"
      "radius = 0.010065\n"
      "\n"
      "[train]\n"
      "iterations = 100   # trailing comment\n"
      "nondimensional = true\n"
      "v_list = 0.04, 0.06, 0.1\n";
  auto cfg = config::Config::parse(text, "inline");
  CHECK(cfg.get_string("domain.kind") == "straight-pipe");
  CHECK(cfg.get_double("domain.radius") == 0.010065);
  CHECK(cfg.get_int("train.iterations") == 100);
  CHECK(cfg.get_bool("train.nondimensional"));
  CHECK(cfg.get_double_list("train.v_list") ==
        std::vector<double>{0.04, 0.06, 0.1});
  CHECK(cfg.get_int("train.batch", 256) == 256);

  SUBCASE("missing keys raise with the key name") {
    try {
      cfg.get_string("train.nope");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("train.nope") != std::string::npos);
    }
  }
  SUBCASE("type errors raise") {
    CHECK_THROWS_AS(cfg.get_double("domain.kind"), ConfigError);
    CHECK_THROWS_AS(cfg.get_bool("domain.radius"), ConfigError);
  }
  SUBCASE("echo parses back to the same table") {
    const std::string echoed = config::Config::parse(text, "a").echo();
    auto again = config::Config::parse(echoed, "b");
    CHECK(again.get_string("domain.kind") == "straight-pipe");
    CHECK(again.get_double("domain.radius") == 0.010065);
    CHECK(again.echo() == echoed);
  }
  SUBCASE("unused keys are reported") {
    auto fresh = config::Config::parse(text, "c");
    (void)fresh.get_string("domain.kind");
    const auto unused = fresh.unused_keys();
    CHECK(unused.size() == 4);
  }
}

TEST_CASE("triplet directory export/import round-trips") {
  TempDir tmp;
  operators::OperatorTriplet t;
  t.m1 = 3;
  t.m2 = 2;
  Rng rng(8);
  for (int r = 0; r < 7; ++r) {
    t.coordinates.push_back({rng.normal(), rng.normal(), rng.normal()});
    for (int k = 0; k < 3; ++k) t.sensors1.push_back(rng.normal());
    for (int k = 0; k < 2; ++k) t.sensors2.push_back(rng.normal());
    t.targets.push_back({rng.normal(), rng.normal(), rng.normal(), 0.0});
    t.target_mask.push_back({1, 1, 1, static_cast<std::uint8_t>(r % 2)});
    t.sample_index.push_back(r / 4);
  }
  operators::export_triplet(t, tmp.file("triplet"));
  const auto again = operators::import_triplet(tmp.file("triplet"));
  CHECK(again.coordinates == t.coordinates);
  CHECK(again.sensors1 == t.sensors1);
  CHECK(again.sensors2 == t.sensors2);
  CHECK(again.sample_index == t.sample_index);
  CHECK(again.target_mask == t.target_mask);
  for (std::size_t r = 0; r < t.targets.size(); ++r)
    for (int c = 0; c < 4; ++c)
      if (t.target_mask[r][c]) CHECK(again.targets[r][c] == t.targets[r][c]);

  SUBCASE("row count disagreement is rejected") {
    std::ofstream out(tmp.file("triplet") + "/index.csv");
    out << "sample\n0\n";
    out.close();
    CHECK_THROWS_AS(operators::import_triplet(tmp.file("triplet")),
                    ValidationError);
  }
}
