#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hotsearch/compress.hpp"
#include "hotsearch/errors.hpp"
#include "hotsearch/netzoo.hpp"
#include "support.hpp"

using namespace hotsearch;
using testing::chain;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("hotsearch_netzoo_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json one_layer_manifest() {
  return {{"name", "one"},
          {"baseline_accuracy", 0.5},
          {"nodes", {{{"id", "x"}, {"rows", 8}, {"cols", 8}, {"channels", 1}},
                     {{"id", "y"}, {"rows", 8}, {"cols", 8}, {"channels", 1}}}},
          {"ops", {{{"src", "x"}, {"dst", "y"}, {"kind", "conv"}, {"k", 1}, {"stride", 1}, {"padding", 0},
                    {"weights", nullptr}, {"fixed_latency_cycles", nullptr}}}}};
}

}  // namespace

TEST_CASE("minimal manifest gives one model with one op") {
  const auto zoo = parse_manifest_json(one_layer_manifest(), ".");
  REQUIRE(zoo.models.size() == 1);
  CHECK(zoo.models[0].ops().size() == 1);
  CHECK(zoo.models[0].name() == "one");
}

TEST_CASE("manifest field errors name the field") {
  auto doc = one_layer_manifest();
  doc.erase("nodes");
  try {
    parse_manifest_json(doc, ".");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("nodes") != std::string::npos);
  }
  doc = one_layer_manifest();
  doc["ops"][0]["kind"] = "attention";
  CHECK_THROWS_AS(parse_manifest_json(doc, "."), ParseError);
}

TEST_CASE("conv weight shape must match the source channels") {
  const auto dir = scratch_dir("shape");
  std::vector<float> blob(16 * 8 * 3 * 3, 0.5f);
  std::ofstream(dir / "w.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
  json doc{{"name", "bad"},
           {"baseline_accuracy", 0.5},
           {"nodes", {{{"id", "x"}, {"rows", 8}, {"cols", 8}, {"channels", 4}},
                      {{"id", "y"}, {"rows", 8}, {"cols", 8}, {"channels", 16}}}},
           {"ops", {{{"src", "x"}, {"dst", "y"}, {"kind", "conv"}, {"k", 3}, {"stride", 1}, {"padding", 1},
                     {"weights", "w.bin"}}}}};
  CHECK_THROWS_AS(parse_manifest_json(doc, dir), ValidationError);
}

TEST_CASE("structural invariants are enforced") {
  SUBCASE("output size inconsistent with the window") {
    std::vector<NodeSpec> nodes{{"x", 8, 8, 1}, {"y", 7, 7, 1}};
    OperatorSpec op;
    op.src = "x";
    op.dst = "y";
    op.k = 3;
    op.padding = 1;
    CHECK_THROWS_AS(NetworkArch("n", 0.5, nodes, {op}), ValidationError);
  }
  SUBCASE("cycle") {
    std::vector<NodeSpec> nodes{{"x", 8, 8, 1}, {"y", 8, 8, 1}};
    OperatorSpec a;
    a.src = "x";
    a.dst = "y";
    OperatorSpec b = a;
    std::swap(b.src, b.dst);
    CHECK_THROWS(NetworkArch("n", 0.5, nodes, {a, b}));
  }
  SUBCASE("duplicate node id") {
    std::vector<NodeSpec> nodes{{"x", 8, 8, 1}, {"x", 8, 8, 1}};
    CHECK_THROWS_AS(NetworkArch("n", 0.5, nodes, {}), ValidationError);
  }
  SUBCASE("depthwise changes the channel count") {
    std::vector<NodeSpec> nodes{{"x", 8, 8, 2}, {"y", 8, 8, 4}};
    OperatorSpec op;
    op.src = "x";
    op.dst = "y";
    op.kind = OpKind::DepthwiseConv;
    op.k = 3;
    op.padding = 1;
    CHECK_THROWS_AS(NetworkArch("n", 0.5, nodes, {op}), ValidationError);
  }
}

TEST_CASE("bundled alexnet manifest") {
  const auto zoo = parse_manifest(fs::path(HOTSEARCH_DATA_DIR) / "alexnet.json");
  REQUIRE(zoo.models.size() == 1);
  const auto& net = zoo.models[0];
  CHECK(net.convolution_ops().size() == 5);
  // Independent transcription of the five AlexNet conv shapes (M, N, K).
  const std::int64_t shapes[5][3] = {{64, 3, 11}, {192, 64, 5}, {384, 192, 3}, {256, 384, 3}, {256, 256, 3}};
  std::int64_t weights = 0, biases = 0;
  for (const auto& s : shapes) {
    weights += s[0] * s[1] * s[2] * s[2];
    biases += s[0];
  }
  CHECK(weights == 2'468'544);
  CHECK(net.weight_count() == weights);
  CHECK(net.parameter_count() == weights + biases);
  CHECK(net.parameter_count() == 2'469'696);
  CHECK(net.ops()[net.convolution_ops()[0]].k == 11);
}

TEST_CASE("builtin networks") {
  const auto alex = builtin_network("alexnet");
  CHECK(alex.convolution_ops().size() == 5);
  CHECK(alex.ops()[alex.convolution_ops()[0]].k == 11);
  const auto bundled = parse_manifest(fs::path(HOTSEARCH_DATA_DIR) / "alexnet.json").models[0];
  CHECK(bundled.nodes() == alex.nodes());

  const auto tiny = builtin_network("tiny");
  CHECK(tiny.convolution_ops().size() == 2);
  for (const auto& n : tiny.nodes()) {
    CHECK(n.rows <= 8);
    CHECK(n.cols <= 8);
    CHECK(n.channels <= 4);
  }

  CHECK(builtin_network("random", 1, 3).weight_checksum() == builtin_network("random", 1, 3).weight_checksum());
  CHECK(builtin_network("random", 1, 3).weight_checksum() != builtin_network("random", 2, 3).weight_checksum());
  CHECK_THROWS_AS(builtin_network("vgg"), ConfigError);
}

TEST_CASE("manifest round trip preserves the network") {
  const auto dir = scratch_dir("roundtrip");
  ModelZoo zoo{{builtin_network("tiny", 3), builtin_network("random", 5, 4)}};
  const auto path = write_manifest(zoo, dir, "zoo");
  const auto back = parse_manifest(path);
  REQUIRE(back.models.size() == 2);
  CHECK(back.models[0] == zoo.models[0]);
  CHECK(back.models[1] == zoo.models[1]);
}

TEST_CASE("zoo names must be unique") {
  json doc{{"models", {one_layer_manifest(), one_layer_manifest()}}};
  CHECK_THROWS_AS(parse_manifest_json(doc, "."), ValidationError);
}

TEST_CASE("topological order is deterministic") {
  std::vector<NodeSpec> nodes{{"c", 8, 8, 2}, {"a", 8, 8, 2}, {"b", 8, 8, 2}};
  OperatorSpec bc, ab;
  bc.src = "b";
  bc.dst = "c";
  ab.src = "a";
  ab.dst = "b";
  const NetworkArch one("n", 0.5, nodes, {bc, ab});
  const NetworkArch two("n", 0.5, nodes, {bc, ab});
  REQUIRE(one.ops().size() == 2);
  CHECK(one.ops()[0].src == "a");
  CHECK(one == two);
}

TEST_CASE("reorder input channels") {
  const auto net = chain("pair", 6, 3, {{5, 3}, {4, 3}}, 11);

  SUBCASE("identity permutation leaves weights unchanged") {
    const std::vector<int> id{0, 1, 2, 3, 4};
    CHECK(reorder_input_channels(net, 1, id) == net);
  }

  SUBCASE("swapping two channels preserves the network function exactly") {
    const std::vector<int> swap{0, 3, 2, 1, 4};  // channels 2 and 4, one-based
    const auto moved = reorder_input_channels(net, 1, swap);
    CHECK_FALSE(moved == net);
    const FixedPointFormat act{4, 8}, wfmt{2, 10};
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = to_fixed(testing::random_tensor({3, 6, 6}, rng, -2.0, 2.0), act);
      auto run = [&](const NetworkArch& n) {
        auto h = naive_conv(x, to_fixed(*n.ops()[0].weights, wfmt), n.ops()[0]);
        return naive_conv(h, to_fixed(*n.ops()[1].weights, wfmt), n.ops()[1]);
      };
      CHECK(run(net) == run(moved));
    }
  }

  SUBCASE("bad permutations") {
    const std::vector<int> short_perm{0, 1, 2};
    CHECK_THROWS_AS(reorder_input_channels(net, 1, short_perm), ValidationError);
    const std::vector<int> dup{0, 0, 1, 2, 3};
    CHECK_THROWS_AS(reorder_input_channels(net, 1, dup), ValidationError);
  }

  SUBCASE("a node with two consumers is refused") {
    std::vector<NodeSpec> nodes{{"x", 6, 6, 2}, {"y", 6, 6, 3}, {"z1", 6, 6, 2}, {"z2", 6, 6, 2}};
    auto op = [](std::string s, std::string d) {
      OperatorSpec o;
      o.src = std::move(s);
      o.dst = std::move(d);
      return o;
    };
    const NetworkArch fork("fork", 0.5, nodes, {op("x", "y"), op("y", "z1"), op("y", "z2")});
    const std::vector<int> p{2, 1, 0};
    CHECK_THROWS_AS(reorder_input_channels(fork, 1, p), UnsupportedTopologyError);
  }
}
