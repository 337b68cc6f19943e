#include <doctest.h>

#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dgm/bench.hpp"
#include "dgm/error.hpp"

using namespace dgm;
namespace fs = std::filesystem;

namespace {

const char* kTinyScenario = R"({
  "schemaVersion": 1,
  "name": "tiny_cloud",
  "grids": {
    "coarse": { "size": [0.04, 0.04, 0.04], "dims": [2, 2, 2] },
    "fine": { "size": [0.04, 0.04, 0.04], "dims": [5, 5, 5] }
  },
  "fluid": {
    "rho1": 1000, "rho2": 1.0, "mu1": 1e-3, "mu2": 1e-5,
    "gravity": [0, 0, -9.81],
    "initial": { "alpha": 0.0, "regions": [ { "lower": [0, 0, 0], "upper": [0.04, 0.04, 0.02], "alpha": 1.0 } ] }
  },
  "dem": { "k": 1000, "restitution": 0.9, "friction": 0.3,
           "walls": ["x-", "x+", "y-", "y+", "z-", "z+"], "outside": "reflect" },
  "coupling": { "dt": 1e-4, "demSubsteps": 10, "steps": 4 },
  "particles": { "generator": "random", "count": 40, "lower": [0, 0, 0], "upper": [0.04, 0.04, 0.04],
                 "diameter": 0.0027, "density": 2500, "speed": 0.1, "seed": 3 },
  "output": { "snapshotEvery": 2, "particleProbes": [0, 7],
              "fluidProbes": [ { "name": "centre", "position": [0.02, 0.02, 0.02] } ] }
})";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

RunResult run_to(const Scenario& s, int ranks, const fs::path& dir, Strategy strategy = Strategy::Distributed) {
  RunOptions o;
  o.ranks = ranks;
  o.strategy = strategy;
  o.outDir = dir;
  return run_scenario(s, o);
}

std::vector<std::string> lines_of(const fs::path& file) {
  std::ifstream in(file);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("format_double round-trips") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    double v;
    const auto bits = rng();
    std::memcpy(&v, &bits, sizeof v);
    if (!std::isfinite(v)) continue;
    const auto text = format_double(v);
    double back = 0.0;
    std::from_chars(text.data(), text.data() + text.size(), back);
    CHECK(back == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1e-300) == "1e-300");
}

TEST_CASE("snapshot files round-trip") {
  TempDir dir("dgm_snapshot_test");
  fs::create_directories(dir.path);
  Snapshot s;
  s.dims = {3, 2, 1};
  s.origin = {0.5, -1.0, 2.0};
  s.spacing = {0.1, 0.2, 0.3};
  s.step = 17;
  s.time = 0.0017;
  s.components = 3;
  for (int i = 0; i < 18; ++i) s.values.push_back(std::ldexp(1.0 + i, -i) * (i % 2 ? -1 : 1));
  write_snapshot(dir.path / "a.dgmf", s);
  const auto r = read_snapshot(dir.path / "a.dgmf");
  CHECK(r.dims == s.dims);
  CHECK(r.origin == s.origin);
  CHECK(r.spacing == s.spacing);
  CHECK(r.step == 17);
  CHECK(r.time == s.time);
  CHECK(r.components == 3);
  CHECK(r.values == s.values);
  CHECK(fs::file_size(dir.path / "a.dgmf") == 4 + 4 + 12 + 24 + 24 + 4 + 8 + 4 + 8 + 18 * 8);

  {
    std::ofstream out(dir.path / "bad.dgmf", std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_AS(read_snapshot(dir.path / "bad.dgmf"), ConfigError);
  fs::resize_file(dir.path / "a.dgmf", 60);
  CHECK_THROWS_AS(read_snapshot(dir.path / "a.dgmf"), ConfigError);
  CHECK_THROWS_AS(read_snapshot(dir.path / "missing.dgmf"), ConfigError);
}

TEST_CASE("a run writes every output file") {
  const auto s = parse_scenario(kTinyScenario);
  TempDir dir("dgm_run_outputs");
  const auto result = run_to(s, 2, dir.path);

  for (const char* f : {"manifest.json", "metrics.csv", "traffic.csv", "timing.csv", "probes.csv",
                        "probes_fluid.csv", "particles.csv", "snapshots.csv"})
    CHECK(fs::exists(dir.path / f));
  CHECK(lines_of(dir.path / "metrics.csv").size() == 1 + 4);
  CHECK(lines_of(dir.path / "probes.csv").size() == 1 + 2 * 5);
  CHECK(lines_of(dir.path / "probes_fluid.csv").size() == 1 + 5);
  CHECK(lines_of(dir.path / "particles.csv").size() == 1 + 40);
  // Steps 0, 2 and 4, six fields each.
  CHECK(lines_of(dir.path / "snapshots.csv").size() == 1 + 3 * 6);
  const auto u = read_snapshot(dir.path / "snapshots" / "step_000004_fine_u.dgmf");
  CHECK(u.dims == std::array<int, 3>{5, 5, 5});
  CHECK(u.components == 3);
  CHECK(u.values.size() == 375);

  std::ifstream in(dir.path / "manifest.json");
  const auto m = nlohmann::json::parse(in);
  CHECK(m["ranks"] == 2);
  CHECK(m["backend"] == "deterministic");
  CHECK(m["mode"] == "multiscale");
  CHECK(m["steps"] == 4);
  CHECK(m["commMatrixBuilds"] == 1);
  CHECK(m["configHash"].get<std::string>().size() == 16);

  CHECK(result.reports.size() == 4);
  CHECK(result.finalParticles.size() == 40);
  CHECK(result.commMatrixBuilds == 1);
  for (const auto& r : result.reports) {
    double phases = 0.0;
    for (double t : r.localSeconds) phases += t;
    CHECK(phases <= r.maxStepSeconds);
    CHECK(r.actionReaction < 1e-10);
  }
}

TEST_CASE("the matrix build count does not depend on the step count") {
  const auto s = parse_scenario(kTinyScenario);
  for (int steps : {1, 6}) {
    RunOptions o;
    o.ranks = 2;
    o.steps = steps;
    CHECK(run_scenario(s, o).commMatrixBuilds == 1);
  }
  RunOptions mono;
  mono.ranks = 2;
  mono.mode = CouplingMode::Monoscale;
  CHECK(run_scenario(s, mono).commMatrixBuilds == 0);
}

TEST_CASE("runs compare bitwise across rank counts and strategies") {
  const auto s = parse_scenario(kTinyScenario);
  TempDir a("dgm_cmp_a"), b("dgm_cmp_b"), c("dgm_cmp_c");
  run_to(s, 1, a.path);
  run_to(s, 4, b.path);
  run_to(s, 4, c.path, Strategy::GatherScatter);

  const auto self = compare_runs(a.path, a.path, 0.0);
  CHECK(self.pass);
  for (const auto& f : self.files) CHECK(f.maxDifference == 0.0);

  CHECK(compare_runs(a.path, b.path, 0.0).pass);
  const auto strategies = compare_runs(b.path, c.path, 0.0);
  CHECK(strategies.pass);
  bool trafficDiffers = false;
  for (const auto& f : strategies.files)
    if (f.file == "traffic.csv") trafficDiffers = f.maxDifference > 0.0;
  CHECK(trafficDiffers);
}

TEST_CASE("compare reports differences and refuses mismatched runs") {
  const auto s = parse_scenario(kTinyScenario);
  TempDir a("dgm_diff_a"), b("dgm_diff_b"), other("dgm_diff_other");
  run_to(s, 1, a.path);
  run_to(s, 1, b.path);

  // Nudge one particle coordinate.
  auto rows = lines_of(b.path / "particles.csv");
  {
    auto& row = rows[5];
    const auto comma = row.find(',');
    const auto next = row.find(',', comma + 1);
    double x = std::stod(row.substr(comma + 1, next - comma - 1));
    row = row.substr(0, comma + 1) + format_double(x + 1e-9) + row.substr(next);
    std::ofstream out(b.path / "particles.csv");
    for (const auto& r : rows) out << r << '\n';
  }
  const auto strict = compare_runs(a.path, b.path, 0.0);
  CHECK(!strict.pass);
  for (const auto& f : strict.files)
    if (f.file == "particles.csv") {
      CHECK(!f.pass);
      CHECK(f.maxDifference == doctest::Approx(1e-9).epsilon(1e-3));
    }
  CHECK(compare_runs(a.path, b.path, 1e-8).pass);

  auto changed = nlohmann::json::parse(kTinyScenario);
  changed["coupling"]["steps"] = 3;
  run_to(parse_scenario(changed.dump()), 1, other.path);
  CHECK_THROWS_AS(compare_runs(a.path, other.path, 0.0), ConfigError);
  CHECK_THROWS_AS(compare_runs(a.path, a.path / "nowhere", 0.0), ConfigError);
  CHECK_THROWS_AS(compare_runs(a.path, b.path, -1.0), ConfigError);
}

TEST_CASE("runtime errors name the step and phase") {
  auto doc = nlohmann::json::parse(kTinyScenario);
  doc["fluid"]["maxCfl"] = 1e-12;
  doc["fluid"]["initial"]["velocity"] = {0.01, 0, 0};
  const auto s = parse_scenario(doc.dump());
  RunOptions o;
  o.ranks = 2;
  try {
    run_scenario(s, o);
    FAIL("expected a physics error");
  } catch (const PhysicsError& e) {
    CHECK(std::string(e.what()).find("step 1, phase cfd") != std::string::npos);
  }
  o.ranks = 0;
  CHECK_THROWS_AS(run_scenario(s, o), ConfigError);
}

TEST_CASE("threads backend reproduces the deterministic run") {
  const auto s = parse_scenario(kTinyScenario);
  TempDir a("dgm_backend_a"), b("dgm_backend_b");
  run_to(s, 4, a.path);
  RunOptions o;
  o.ranks = 4;
  o.backend = Backend::Threads;
  o.outDir = b.path;
  run_scenario(s, o);
  CHECK(compare_runs(a.path, b.path, 0.0).pass);
}
