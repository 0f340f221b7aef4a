#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sllab/error.hpp"
#include "sllab/lab.hpp"

using namespace sllab;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sllab-unit-" + name);
  fs::remove_all(p);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string error_of(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_config(in, "test.cfg");
  } catch (const LabError& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("config parsing") {
  std::istringstream in(
      "# comment\n"
      "experiment = simulate\n"
      "measure = exponential   # trailing comment\n"
      "dim=2\n"
      "\n"
      "t_grid = 0:0.25:1, 2\n"
      "base_seed = 18446744073709551615\n");
  const RunConfig c = parse_config(in);
  CHECK(c.experiment == Experiment::kSimulate);
  CHECK(c.measure == "exponential");
  CHECK(c.dim == 2);
  CHECK(c.t_grid == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0, 2.0});
  CHECK(c.base_seed == 18446744073709551615ULL);
  CHECK(RunConfig().t_grid.size() == 21);
  CHECK(RunConfig().t_grid[3] == 0.15);
}

TEST_CASE("config errors name the line and key") {
  CHECK(error_of("dim = 4\nC3 = 1\n").find("test.cfg:2") != std::string::npos);
  CHECK(error_of("dim = 4\nC3 = 1\n").find("'C3'") != std::string::npos);
  CHECK(error_of("dt = 0\n").find("'dt'") != std::string::npos);
  CHECK(error_of("paths = -3\n").find("test.cfg:1") != std::string::npos);
  CHECK(error_of("measure = sphere\n").find("sphere") != std::string::npos);
  CHECK(error_of("just words\n").find("key = value") != std::string::npos);
  CHECK(error_of("t_grid = 0, 0.5, 0.2\n").find("increasing") != std::string::npos);
  RunConfig c;
  CHECK_THROWS_AS(apply_override(c, "r0=5"), LabError);
  CHECK_THROWS_AS(apply_override(c, "noequals"), LabError);
  apply_override(c, "C2=0.5");
  CHECK(c.C2 == 0.5);
}

TEST_CASE("range errors stop the run before any output") {
  RunConfig c;
  c.experiment = Experiment::kSimulate;
  c.out_dir = scratch("range");
  c.set("t_end", "0.001");
  c.dt = 0.01;
  CHECK_THROWS_AS(run(c), LabError);
  CHECK_FALSE(fs::exists(c.out_dir));
}

TEST_CASE("snapshot round-trips through the parser") {
  RunConfig c;
  c.set("s_values", "0.1,0.3");
  c.set("diagnostic", "opnorm_tail,gk2,growth_toy");
  std::ostringstream text;
  for (const auto& [k, v] : c.snapshot()) text << k << " = " << v << "\n";
  std::istringstream in(text.str());
  CHECK(parse_config(in).snapshot() == c.snapshot());
  CHECK(c.snapshot().size() == RunConfig::keys().size());
}

TEST_CASE("sha-256") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("schedule and assistfn runs are reproducible") {
  for (const char* exp : {"schedule", "assistfn"}) {
    RunConfig c;
    c.set("experiment", exp);
    c.out_dir = scratch(std::string(exp) + "-a");
    const RunManifest a = run(c);
    c.out_dir = scratch(std::string(exp) + "-b");
    const RunManifest b = run(c);
    CHECK(a.pass());
    REQUIRE(a.files.size() == b.files.size());
    for (std::size_t i = 0; i < a.files.size(); ++i) {
      CHECK(a.files[i].path == b.files[i].path);
      CHECK(a.files[i].sha256 == b.files[i].sha256);
    }
    CHECK(fs::exists(fs::path(c.out_dir) / "manifest.json"));
  }
  const std::string text = slurp(fs::path(scratch("x")).parent_path() / "sllab-unit-schedule-a" / "schedule.json");
  CHECK(text.find("\"k0\": 2") != std::string::npos);
  CHECK(text.find("\"overflow_flag\": false") != std::string::npos);
}

TEST_CASE("module errors become failed checks") {
  RunConfig c;
  c.set("experiment", "spectral");
  c.set("measure", "gaussian");
  c.set("spectral_cells", "100");
  c.set("spectral_modes", "20");
  c.out_dir = scratch("spectral-small");
  const RunManifest m = run(c);
  // 100 cells cannot hold the Gaussian eigenvalues to 1e-3; the run still
  // completes and reports.
  CHECK_FALSE(m.checks.empty());
  CHECK(fs::exists(fs::path(c.out_dir) / "checks.csv"));

  RunConfig bad;
  bad.set("experiment", "assistfn");
  bad.D0 = 1.0;  // below the documented range, bypassing set()
  bad.out_dir = scratch("assist-bad");
  const RunManifest mb = run(bad);
  REQUIRE(mb.checks.size() == 1);
  CHECK_FALSE(mb.checks[0].pass);
  CHECK_FALSE(mb.pass());
}

TEST_CASE("manifest json round trip and report aggregation") {
  RunManifest m;
  m.version = version_string();
  CheckRecord a;
  a.name = "b";
  a.anchor = "tk";
  a.measure = "";
  a.lhs = 1.5;
  a.rhs = 0.1;
  a.pass = true;
  CheckRecord b = a;
  b.anchor = "cn";
  b.measure = "gaussian";
  b.pass = false;
  CheckRecord d = b;
  d.measure = "cube";
  d.required = false;
  m.checks = {a, b, d};
  const std::string path = scratch("manifest.json");
  {
    std::ofstream out(path);
    out << manifest_json(m);
  }
  const RunManifest back = load_manifest(path);
  REQUIRE(back.checks.size() == 3);
  CHECK(back.checks[1].anchor == "cn");
  CHECK(back.checks[0].lhs == 1.5);
  CHECK(back.checks[2].required == false);

  RunManifest empty;
  const Report r = report({{"one", back}, {"two", back}, {"three", empty}});
  CHECK(r.rows.size() == 6);
  CHECK(r.rows[0].check.anchor == "cn");
  CHECK(r.rows[0].check.measure == "cube");
  CHECK(r.rows[2].check.measure == "gaussian");
  CHECK(r.rows.back().check.anchor == "tk");
  CHECK(r.required_failures == 2);
  CHECK_FALSE(r.pass());
  REQUIRE(r.notes.size() == 1);
  CHECK(r.notes[0].find("three") != std::string::npos);
  std::ostringstream csv;
  write_report_csv(r, csv);
  const std::string table = csv.str();
  CHECK(std::count(table.begin(), table.end(), '\n') == 7);

  const Report ok = report({{"only", RunManifest{}}});
  CHECK(ok.pass());
  CHECK(ok.rows.empty());
}
