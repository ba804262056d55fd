#include <doctest.h>

#include <sstream>

#include "hotsearch/errors.hpp"
#include "hotsearch/search.hpp"
#include "support.hpp"

using namespace hotsearch;

namespace {

struct Fixture {
  FpgaSpec fpga;
  NetworkArch net = builtin_network("tiny");
  AcceleratorDesign design = optimize_design(net, fpga);
  JointSpace space = build_space(net, design, analyze_network(net, design, fpga), fpga);

  CompressionConfig identity() const { return space.config(space.identity()); }

  CompressionConfig with_pattern(int pat_c, int pat_n) const {
    auto c = identity();
    c.layers[0].pattern = {pat_c, pat_n};
    return c;
  }
};

std::vector<std::string> stub(std::vector<std::string> args = {}) {
  args.insert(args.begin(), EVAL_STUB_PATH);
  return args;
}

}  // namespace

TEST_CASE("digest") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const auto a = nlohmann::json::parse(R"({"b": 1, "a": [1, 2, {"y": null, "x": true}]})");
  const auto b = nlohmann::json::parse(R"({"a":[1,2,{"x":true,"y":null}],"b":1})");
  CHECK(canonical_json(a) == R"({"a":[1,2,{"x":true,"y":null}],"b":1})");
  CHECK(digest(a) == digest(b));
  CHECK(digest(a) != digest(nlohmann::json::parse(R"({"a":[2,1,{"x":true,"y":null}],"b":1})")));

  const Fixture f;
  const auto c = f.identity();
  CHECK(digest(c) == digest(c));
  CHECK(digest(c) == digest(config_from_json(to_json(c))));
  CHECK(digest(c) != digest(f.with_pattern(2, 2)));
  CHECK(digest(c).size() == 64);
}

TEST_CASE("request and response wire format") {
  const Fixture f;
  const auto r = make_request(f.identity(), 7);
  CHECK(r.beta == 7);
  CHECK(r.config_digest == digest(f.identity()));
  const auto back = request_from_json(nlohmann::json::parse(canonical_json(to_json(r))));
  CHECK(back.model_name == "tiny");
  CHECK(back.config == r.config);
  CHECK(back.beta == 7);
  CHECK_THROWS_AS(request_from_json(nlohmann::json{{"model", "x"}}), ProtocolError);

  const auto ok = response_from_json(to_json(EvalResponse::ok(0.25)));
  CHECK(ok.is_ok());
  CHECK(*ok.accuracy == 0.25);
  const auto err = response_from_json(to_json(EvalResponse::error("boom")));
  CHECK_FALSE(err.is_ok());
  CHECK(err.message == "boom");
  CHECK_THROWS_AS(response_from_json(nlohmann::json::parse(R"({"status":"ok"})")), ProtocolError);
  CHECK_THROWS_AS(response_from_json(nlohmann::json::parse(R"({"status":"ok","accuracy":1.5})")), ProtocolError);
  CHECK_THROWS_AS(response_from_json(nlohmann::json::parse(R"({"status":"maybe"})")), ProtocolError);
  CHECK_THROWS_AS(response_from_json(nlohmann::json::parse("[1]")), ProtocolError);
}

TEST_CASE("surrogate evaluator") {
  const Fixture f;
  SurrogateEvaluator eval({f.net});
  const auto id = eval.evaluate(make_request(f.identity(), 10));
  REQUIRE(id.is_ok());
  CHECK(*id.accuracy == f.net.baseline_accuracy());

  SUBCASE("more pruned energy means lower accuracy") {
    double prev_energy = 0.0;
    double prev_acc = f.net.baseline_accuracy();
    for (int pat_c = 1; pat_c <= 8; ++pat_c) {
      const auto c = f.with_pattern(pat_c, 1);
      const auto stats = compression_stats(f.net, c);
      const auto acc = *eval.evaluate(make_request(c, 10)).accuracy;
      if (stats.pruned_energy_fraction > prev_energy) CHECK(acc < prev_acc);
      if (stats.pruned_energy_fraction == prev_energy) CHECK(acc == prev_acc);
      prev_energy = stats.pruned_energy_fraction;
      prev_acc = acc;
    }
    CHECK(prev_energy > 0.0);
  }

  SUBCASE("formula and clamp") {
    CompressionStats s;
    s.pruned_energy_fraction = 0.2;
    s.quant_error_ratio = 0.1;
    s.cut_fraction = 0.4;
    CHECK(surrogate_accuracy(0.8, s) == doctest::Approx(0.8 - 0.01 - 0.01 - 0.06).epsilon(1e-12));
    s.cut_fraction = 10.0;
    CHECK(surrogate_accuracy(0.8, s) == doctest::Approx(0.4).epsilon(1e-12));
  }

  SUBCASE("expansion is free") {
    auto c = f.identity();
    c.layers[0].expand = 2;
    CHECK(*eval.evaluate(make_request(c, 10)).accuracy == f.net.baseline_accuracy());
  }

  SUBCASE("beta is recorded") {
    SurrogateEvaluator fresh({f.net});
    fine_tune_proxy(f.identity(), fresh, 3);
    fine_tune_proxy(f.identity(), fresh, 10);
    CHECK(fresh.recorded_betas() == std::vector<int>{3, 10});
  }

  SUBCASE("unknown model is an error response") {
    auto c = f.identity();
    c.model = "nobody";
    CHECK_FALSE(eval.evaluate(make_request(c, 10)).is_ok());
  }
}

TEST_CASE("table evaluator") {
  const Fixture f;
  const auto key = digest(f.identity());
  std::istringstream csv("digest,accuracy\n" + key + ",0.61\r\nabc,0.2\n\n");
  const auto table = parse_accuracy_table(csv, "mem");
  CHECK(table.size() == 2);

  TableEvaluator strict(table, TableEvaluator::Fallback::Error);
  CHECK(*strict.evaluate(make_request(f.identity(), 10)).accuracy == 0.61);
  CHECK_FALSE(strict.evaluate(make_request(f.with_pattern(1, 2), 10)).is_ok());

  auto sur = std::make_shared<SurrogateEvaluator>(std::vector<NetworkArch>{f.net});
  TableEvaluator lenient(table, TableEvaluator::Fallback::Surrogate, sur);
  CHECK(lenient.evaluate(make_request(f.with_pattern(1, 2), 10)).is_ok());
  CHECK_THROWS_AS(TableEvaluator(table, TableEvaluator::Fallback::Surrogate), ConfigError);

  for (const char* bad : {"no comma here\n", "abc,zero\n", "abc,1.5\n", "abc,0.5x\n"}) {
    std::istringstream in(bad);
    CHECK_THROWS_AS(parse_accuracy_table(in, "mem"), ParseError);
  }
  try {
    std::istringstream in("a,0.1\nb,oops\n");
    parse_accuracy_table(in, "acc.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("acc.csv:2") != std::string::npos);
  }
}

TEST_CASE("evaluator specs") {
  CHECK(evaluator_spec_from_string("surrogate")["kind"] == "surrogate");
  const auto t = evaluator_spec_from_string("table:acc.csv:surrogate");
  CHECK(t["path"] == "acc.csv");
  CHECK(t["fallback"] == "surrogate");
  const auto e = evaluator_spec_from_string("external:python3 eval.py --fast");
  CHECK(e["command"] == nlohmann::json{"python3", "eval.py", "--fast"});
  CHECK_THROWS_AS(evaluator_spec_from_string("oracle"), ConfigError);
  CHECK_THROWS_AS(make_evaluator({{"kind", "magic"}}, {}), ConfigError);
  CHECK(make_evaluator({{"kind", "surrogate"}}, {})->kind() == "surrogate");
}

TEST_CASE("external evaluator protocol") {
  const Fixture f;
  const auto request = make_request(f.identity(), 10);

  SUBCASE("accuracy is propagated") {
    ExternalEvaluator eval(stub({"0.5"}));
    for (int i = 0; i < 3; ++i) {
      const auto r = eval.evaluate(request);
      REQUIRE(r.is_ok());
      CHECK(*r.accuracy == 0.5);
      // The stub echoes the configuration it received.
      CHECK(r.message == canonical_json(request.config));
    }
  }
  SUBCASE("error responses") {
    ExternalEvaluator eval(stub({"--error"}));
    const auto r = eval.evaluate(request);
    CHECK_FALSE(r.is_ok());
    CHECK(r.message.find(request.config_digest) != std::string::npos);
  }
  SUBCASE("garbage is a protocol error") {
    ExternalEvaluator eval(stub({"--garbage"}));
    CHECK_THROWS_AS(eval.evaluate(request), ProtocolError);
  }
  SUBCASE("bad handshake") {
    ExternalEvaluator eval(stub({"--bad-handshake"}));
    CHECK_THROWS_AS(eval.evaluate(request), ProtocolError);
  }
  SUBCASE("missing program") {
    ExternalEvaluator eval({"/nonexistent/evaluator"});
    CHECK_THROWS_AS(eval.evaluate(request), ProtocolError);
  }
  SUBCASE("timeout") {
    ExternalEvaluator eval(stub({"--sleep-ms", "2000"}), std::chrono::milliseconds(200));
    CHECK_FALSE(eval.evaluate(request).is_ok());
  }
  SUBCASE("failures mark search episodes") {
    ExternalEvaluator eval(stub({"--error"}));
    SearchOptions o;
    o.t_constraint_ms = 1e6;
    o.episodes_max = 5;
    const auto bb = search_backbone(f.net, f.fpga, o, eval);
    for (const auto& e : bb.episodes) {
      CHECK(e.failed);
      CHECK(e.reward == -1.0);
      CHECK_FALSE(e.feasible);
    }
    CHECK_FALSE(bb.best.has_value());
  }
}
