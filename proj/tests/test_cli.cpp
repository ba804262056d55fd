#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = HOTSEARCH_DATA_DIR;

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("hotsearch_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HOTSEARCH_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fpga_flag() { return " --fpga " + (kData / "zcu102.json").string(); }

}  // namespace

TEST_CASE("analyze") {
  const auto dir = fresh_dir("analyze");
  SUBCASE("empty zoo gives an empty report") {
    std::ofstream(dir / "empty.json") << R"({"models": []})";
    REQUIRE(run("analyze --zoo " + (dir / "empty.json").string() + " --out " + dir.string(), dir / "log") == 0);
    std::istringstream csv(slurp(dir / "analyze.csv"));
    std::string line;
    int rows = 0;
    while (std::getline(csv, line))
      if (!line.empty() && line[0] != '#' && line.rfind("model,", 0) != 0) ++rows;
    CHECK(rows == 0);
  }
  SUBCASE("byte-identical across runs") {
    const std::string args = "analyze --builtin tiny --builtin random:3:4 --builtin alexnet --t-ms 1" + fpga_flag();
    REQUIRE(run(args + " --out " + (dir / "a").string(), dir / "log") == 0);
    REQUIRE(run(args + " --out " + (dir / "b").string(), dir / "log") == 0);
    const auto a = slurp(dir / "a" / "analyze.csv");
    CHECK(a == slurp(dir / "b" / "analyze.csv"));
    CHECK(a.rfind("# tool=hotsearch", 0) == 0);
    CHECK(a.find("config_digest=") != std::string::npos);
    CHECK(a.find("model,accuracy,tm,tn,tm_d,tr,tc,lanes_i,lanes_o,lanes_w,cycles,latency_ms,meets_t") !=
          std::string::npos);
    CHECK(a.find("\nalexnet,") != std::string::npos);
  }
}

TEST_CASE("detect") {
  const auto dir = fresh_dir("detect");
  REQUIRE(run("detect --builtin alexnet --model alexnet" + fpga_flag() + " --out " + dir.string(), dir / "log") == 0);
  const auto doc = json::parse(slurp(dir / "detect.json"));
  REQUIRE(doc["layers"].size() == 5);
  int total = 0;
  for (const auto& [label, n] : doc["histogram"].items()) total += n.get<int>();
  CHECK(total == 5);
  for (const auto& l : doc["layers"]) {
    CHECK(l.contains("label"));
    CHECK(l["lat"].get<long long>() > 0);
  }

  REQUIRE(run("detect --builtin tiny --model tiny --tm 2 --tn 2 --lanes 8,8,16 --out " + dir.string(), dir / "log") == 0);
  CHECK(json::parse(slurp(dir / "detect.json"))["design"]["tm"] == 2);

  CHECK(run("detect --builtin tiny --model nope --out " + dir.string(), dir / "log") == 2);
}

TEST_CASE("space") {
  const auto dir = fresh_dir("space");
  REQUIRE(run("space --builtin tiny --model tiny --out " + dir.string(), dir / "log") == 0);
  const auto doc = json::parse(slurp(dir / "space.json"));
  CHECK(doc["cardinality"].get<std::uint64_t>() >= 1);
}

TEST_CASE("search") {
  const auto dir = fresh_dir("search");
  const std::string base = "search --builtin tiny --config " + (kData / "tiny_search.json").string() + fpga_flag();

  SUBCASE("fixed seed gives identical outputs") {
    REQUIRE(run(base + " --episodes 100 --out " + (dir / "a").string(), dir / "log") == 0);
    REQUIRE(run(base + " --episodes 100 --out " + (dir / "b").string(), dir / "log") == 0);
    for (const char* f : {"trace.csv", "pareto.json", "summary.json"})
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    const auto summary = json::parse(slurp(dir / "a" / "summary.json"));
    CHECK(summary.contains("best"));
  }
  SUBCASE("a loose constraint keeps the backbone") {
    REQUIRE(run(base + " --t-ms 1000 --episodes 50 --out " + dir.string(), dir / "log") == 0);
    const auto summary = json::parse(slurp(dir / "summary.json"));
    CHECK(summary["identity"] == true);
    bool found = false;
    for (const auto& b : summary["backbones"]) {
      CHECK(b["latency_reduction_pct"].get<double>() == 0.0);
      CHECK(b["accuracy_delta"].get<double>() == 0.0);
      found = true;
    }
    CHECK(found);
  }
  SUBCASE("an impossible constraint is reported") {
    CHECK(run(base + " --t-ms 0.000001 --episodes 20 --out " + dir.string(), dir / "log") == 1);
  }
  SUBCASE("external evaluator") {
    REQUIRE(run(base + " --episodes 20 --evaluator 'external:" + std::string(EVAL_STUB_PATH) + " 0.5' --out " +
                    dir.string(),
                dir / "log") == 0);
    const auto summary = json::parse(slurp(dir / "summary.json"));
    CHECK(summary.dump().find("0.5") != std::string::npos);
  }
}

TEST_CASE("verify") {
  const auto dir = fresh_dir("verify");
  CHECK(run("verify", dir / "log") == 0);
  const auto report = slurp(dir / "log");
  CHECK(report.find("PASS model-vs-loop-sum") != std::string::npos);
  CHECK(run("verify --mutant latency-tail", dir / "log") == 3);
  CHECK(slurp(dir / "log").find("FAIL") != std::string::npos);
}

TEST_CASE("export round trip") {
  const auto dir = fresh_dir("export");
  REQUIRE(run("export --builtin tiny --stem zoo --out " + dir.string(), dir / "log") == 0);
  REQUIRE(run("analyze --zoo " + (dir / "zoo.json").string() + " --out " + dir.string(), dir / "log") == 0);
  CHECK(slurp(dir / "analyze.csv").find("\ntiny,") != std::string::npos);
}

TEST_CASE("input errors exit with 2") {
  const auto dir = fresh_dir("errors");
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run("analyze --zoo " + (dir / "broken.json").string() + " --out " + dir.string(), dir / "log") == 2);
  CHECK(run("analyze --builtin vgg --out " + dir.string(), dir / "log") == 2);
  CHECK(run("analyze --zoo /nonexistent.json", dir / "log") == 2);
  CHECK(run("search --builtin tiny --out " + dir.string(), dir / "log") == 2);
  CHECK(run("frobnicate", dir / "log") == 2);
  CHECK(run("verify --mutant nonsense", dir / "log") == 2);
}
