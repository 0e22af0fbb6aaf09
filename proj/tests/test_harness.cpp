#include <catch_amalgamated.hpp>

#include <coagkit/harness.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

using namespace coagkit;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

const std::string kSource = COAGKIT_SOURCE_DIR;
const std::string kCli = COAGKIT_CLI;

nlohmann::json load_json(const std::string& name) {
  return nlohmann::json::parse(io::read_file(kSource + "/configs/" + name));
}

RunOutput run_json(const nlohmann::json& j, std::uint64_t seed = 1, unsigned threads = 1) {
  return run(parse_config(j.dump(2)), RunContext{seed, threads});
}

void check_summary(const RunOutput& out) {
  CHECK(summary_schema().validate(out.summary).empty());
  for (const auto& f : out.summary.at("files")) {
    const auto name = f.get<std::string>();
    if (name != "summary.json") CHECK(out.file(name) != nullptr);
  }
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("coagkit-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + kCli + "' " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST_CASE("parallel_map gathers by index and rethrows the first failure") {
  for (unsigned th : {1u, 3u}) {
    const auto v = parallel_map<int>(10, th, [](std::size_t i) { return static_cast<int>(i * i); });
    for (std::size_t i = 0; i < 10; ++i) CHECK(v[i] == static_cast<int>(i * i));
    try {
      parallel_map<int>(10, th, [](std::size_t i) -> int {
        if (i == 7) throw NumericalFailure("seven");
        if (i == 4) throw InvalidArgument("four");
        return 0;
      });
      FAIL("expected a throw");
    } catch (const InvalidArgument& e) {
      CHECK(std::string(e.what()) == "four");
    }
  }
}

TEST_CASE("mean and stderr") {
  const auto m = mean_stderr({1.0, 2.0, 3.0, 4.0});
  CHECK(m.mean == 2.5);
  CHECK_THAT(m.stderr_, Catch::Matchers::WithinRel(std::sqrt(5.0 / 3.0 / 4.0), 1e-12));
}

TEST_CASE("solve bundle") {
  const auto out = run_json(load_json("solve_constant.json"));
  check_summary(out);
  REQUIRE(out.file("trajectory.csv"));
  REQUIRE(out.file("diagnostics.csv"));
  CHECK(out.summary.at("kind") == "solve");
}

TEST_CASE("exhaustion bundle") {
  const auto out = run_json(load_json("solve_exhaustion.json"));
  check_summary(out);
  CHECK(out.file("exhaustion.csv"));
}

TEST_CASE("simulate, couple and family bundles") {
  for (const char* name : {"simulate.json", "couple.json", "family.json"}) {
    INFO(name);
    auto j = load_json(name);
    j["replicas"] = 4;
    const auto out = run_json(j);
    check_summary(out);
  }
}

TEST_CASE("small nonuniq bundle") {
  auto j = load_json("nonuniq.json");
  j["nonuniq"]["n_max"] = 10;
  const auto out = run_json(j);
  check_summary(out);
  const auto& r = out.summary.at("results");
  CHECK(r.at("m_plus_2_min").get<double>() >= 0.125);
  CHECK(r.at("separation_at_1").get<double>() > 0.12);
  CHECK(out.file("nonuniq_plus.csv"));
  CHECK(out.file("gap_certificate.csv"));
}

TEST_CASE("single-n convergence study has no slope") {
  auto j = load_json("converge.json");
  j["study"]["n_list"] = {50};
  j["replicas"] = 10;
  const auto out = run_json(j);
  check_summary(out);
  CHECK(out.summary.at("results").at("slope").is_null());
}

TEST_CASE("large delta gives no exceedances") {
  auto j = load_json("concentrate.json");
  j["study"]["n_list"] = {50, 100};
  j["study"]["delta"] = 100;
  j["replicas"] = 20;
  const auto out = run_json(j);
  check_summary(out);
  for (const auto& row : out.summary.at("results").at("rows")) CHECK(row.at("exceedances") == 0);
  CHECK(!out.warnings.empty());  // fewer than 100 replicas
}

TEST_CASE("outputs do not depend on the thread count") {
  auto j = load_json("converge.json");
  j["study"]["n_list"] = {50, 200};
  j["replicas"] = 16;
  const auto a = run_json(j, 5, 1);
  const auto b = run_json(j, 5, 4);
  REQUIRE(a.files.size() == b.files.size());
  for (std::size_t i = 0; i < a.files.size(); ++i) CHECK(a.files[i] == b.files[i]);
  CHECK(a.summary == b.summary);
  const auto c = run_json(j, 6, 1);
  CHECK(*c.file("convergence.csv") != *a.file("convergence.csv"));
}

TEST_CASE("bundle is written to disk") {
  const auto dir = scratch("bundle");
  const auto out = run_json(load_json("solve_constant.json"));
  write_bundle(out, dir);
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(io::read_file((dir / "trajectory.csv").string()) == *out.file("trajectory.csv"));
  const auto s = nlohmann::json::parse(io::read_file((dir / "summary.json").string()));
  CHECK(s == out.summary);
}

TEST_CASE("CLI exit codes") {
  const auto dir = scratch("cli");
  const std::string cfg = kSource + "/configs/solve_constant.json";
  CHECK(run_cli("solve --config '" + cfg + "' --out '" + (dir / "ok").string() + "'") == 0);
  CHECK(fs::exists(dir / "ok" / "summary.json"));
  CHECK(run_cli("validate-config --config '" + cfg + "'") == 0);
  CHECK(run_cli("--help") == 0);

  // kind mismatch, missing file, bad flag
  CHECK(run_cli("simulate --config '" + cfg + "' --out '" + (dir / "x").string() + "'") == 2);
  CHECK(run_cli("solve --config /nonexistent.json") == 2);
  CHECK(run_cli("solve --bogus") == 2);

  std::ofstream(dir / "bad.json") << "{\n  \"schema_version\": 1,\n  \"kind\": \"solve\",\n  \"extra\": 1\n}\n";
  CHECK(run_cli("validate-config --config '" + (dir / "bad.json").string() + "'") == 2);

  // reference solve runs out of atoms
  auto j = load_json("converge.json");
  j["kernel"] = {{"type", "multiplicative"}};
  j["study"]["n_list"] = {20};
  j["replicas"] = 2;
  j["solver"] = {{"max_atoms", 50}};
  std::ofstream(dir / "numerical.json") << j.dump(2);
  CHECK(run_cli("converge --config '" + (dir / "numerical.json").string() + "' --out '" + (dir / "n").string() + "'") == 4);
}

TEST_CASE("CLI seed precedence") {
  const auto dir = scratch("seed");
  auto j = load_json("simulate.json");
  j["replicas"] = 2;
  j.erase("seed");
  const auto cfg = (dir / "sim.json").string();
  std::ofstream(cfg) << j.dump(2);
  auto seed_of = [&](const std::string& sub) {
    return nlohmann::json::parse(io::read_file((dir / sub / "summary.json").string())).at("seed").get<std::uint64_t>();
  };
  REQUIRE(run_cli("simulate --config '" + cfg + "' --out '" + (dir / "a").string() + "'", "COAGKIT_SEED=99") == 0);
  CHECK(seed_of("a") == 99);
  REQUIRE(run_cli("simulate --config '" + cfg + "' --seed 5 --out '" + (dir / "b").string() + "'", "COAGKIT_SEED=99") == 0);
  CHECK(seed_of("b") == 5);
  REQUIRE(run_cli("simulate --config '" + cfg + "' --out '" + (dir / "c").string() + "'", "COAGKIT_SEED=") == 0);
  CHECK(seed_of("c") == 0);
  CHECK(io::read_file((dir / "a" / "aggregate.csv").string()) != io::read_file((dir / "c" / "aggregate.csv").string()));
}
