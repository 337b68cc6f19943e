// Command-line front end: run a scenario or compare two run directories.

#include <cstdio>
#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "dgm/bench.hpp"
#include "dgm/error.hpp"

namespace {

int run_command(const std::string& scenarioFile, int ranks, const std::string& backend, const std::string& strategy,
                const std::string& mode, const std::string& outDir, int steps) {
  const auto scenario = dgm::load_scenario(scenarioFile);
  dgm::RunOptions options;
  options.ranks = ranks;
  options.backend = dgm::parse_backend(backend);
  if (!strategy.empty()) options.strategy = dgm::parse_strategy(strategy);
  if (!mode.empty()) options.mode = dgm::parse_mode(mode);
  if (steps > 0) options.steps = steps;
  options.outDir = outDir;
  const auto result = dgm::run_scenario(scenario, options);
  const auto& last = result.reports.back();
  std::printf("%s: %zu steps on %d ranks in %.3f s (t = %g s, %llu particles, matrix builds %llu)\n",
              scenario.name.c_str(), result.reports.size(), ranks, result.wallSeconds, last.time,
              static_cast<unsigned long long>(last.particleCount),
              static_cast<unsigned long long>(result.commMatrixBuilds));
  std::printf("outputs in %s\n", outDir.c_str());
  return 0;
}

int compare_command(const std::string& a, const std::string& b, double tol) {
  const auto report = dgm::compare_runs(a, b, tol);
  for (const auto& f : report.files) {
    if (f.compared)
      std::printf("%-18s max diff %-12g %s%s%s\n", f.file.c_str(), f.maxDifference, f.pass ? "ok" : "FAIL",
                  f.note.empty() ? "" : "  ", f.note.c_str());
    else
      std::printf("%-18s %s\n", f.file.c_str(), f.note.c_str());
  }
  std::printf("%s\n", report.pass ? "runs match" : "runs differ");
  return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-grid CFD-DEM coupling simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a scenario");
  std::string scenarioFile, backend = "deterministic", strategy, mode, outDir = "out";
  int ranks = 1, steps = 0;
  run->add_option("scenario", scenarioFile, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  run->add_option("--ranks", ranks, "Number of logical ranks")->check(CLI::PositiveNumber);
  run->add_option("--backend", backend, "deterministic|threads")
      ->check(CLI::IsMember({"deterministic", "threads"}));
  run->add_option("--strategy", strategy, "gather-scatter|distributed (default: scenario)")
      ->check(CLI::IsMember({"gather-scatter", "distributed"}));
  run->add_option("--mode", mode, "multiscale|monoscale (default: scenario)")
      ->check(CLI::IsMember({"multiscale", "monoscale"}));
  run->add_option("--out", outDir, "Output directory");
  run->add_option("--steps", steps, "Override the scenario's step count");

  auto* compare = app.add_subcommand("compare", "Compare two run directories");
  std::string dirA, dirB;
  double tol = 0.0;
  compare->add_option("dirA", dirA)->required()->check(CLI::ExistingDirectory);
  compare->add_option("dirB", dirB)->required()->check(CLI::ExistingDirectory);
  compare->add_option("--tol", tol, "Absolute tolerance; 0 requires bitwise equality")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) return run_command(scenarioFile, ranks, backend, strategy, mode, outDir, steps);
    return compare_command(dirA, dirB, tol);
  } catch (const dgm::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
  } catch (const dgm::PhysicsError& e) {
    std::fprintf(stderr, "physics error: %s\n", e.what());
  } catch (const dgm::ConsistencyError& e) {
    std::fprintf(stderr, "consistency error: %s\n", e.what());
  } catch (const dgm::TransportError& e) {
    std::fprintf(stderr, "transport error: %s\n", e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
  }
  return 2;
}
