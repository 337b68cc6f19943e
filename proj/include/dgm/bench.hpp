#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dgm/scenario.hpp"

namespace dgm {

struct RunOptions {
  int ranks = 1;
  Backend backend = Backend::Deterministic;
  /// Override the scenario's strategy, mode or step count.
  std::optional<Strategy> strategy;
  std::optional<CouplingMode> mode;
  std::optional<int> steps;
  /// Output directory; nothing is written when empty.
  std::filesystem::path outDir;
};

struct ParticleSample {
  int step = 0;
  double time = 0.0;
  std::uint64_t id = 0;
  int owner = 0;
  Vec3 x;
  Vec3 u;
  Vec3 a;
};

struct RunResult {
  std::vector<StepReport> reports;       // rank 0's view, one per step
  std::vector<ParticleSample> probes;    // probed particles, step 0 included
  std::vector<Particle> finalParticles;  // sorted by id
  std::uint64_t commMatrixBuilds = 0;
  double demImbalance = 0.0;        // initial particles over the DEM partition
  double fineCellImbalance = 0.0;   // fluid cells over the fluid partition
  std::vector<std::uint64_t> initialParticlesPerRank;
  double wallSeconds = 0.0;
  std::vector<TrafficCounters> rankTraffic;
};

/// Runs a scenario on `ranks` logical ranks and, when an output directory is
/// given, writes manifest.json, metrics.csv, traffic.csv, timing.csv,
/// probes.csv, probes_fluid.csv, particles.csv, snapshots.csv and the binary
/// snapshots. Runtime errors name the step and phase.
RunResult run_scenario(const Scenario& scenario, const RunOptions& options);

struct FileDiff {
  std::string file;
  double maxDifference = 0.0;
  bool compared = true;  // false for informational files
  bool pass = true;
  std::string note;
};

struct CompareReport {
  std::vector<FileDiff> files;
  bool pass = true;
};

/// Field-by-field and particle-by-particle maximum absolute differences of two
/// run directories. With tolerance 0 values must match bit for bit. Wall
/// times and traffic counters are reported but never fail the comparison.
/// Throws ConfigError for missing files, different scenario hashes or
/// differently shaped outputs.
CompareReport compare_runs(const std::filesystem::path& dirA, const std::filesystem::path& dirB, double tolerance);

/// Fixed-width binary field snapshot: "DGMF", format version, grid dims,
/// origin, spacing, step, time, component count, then values in global cell
/// order (all little-endian).
struct Snapshot {
  std::array<int, 3> dims{};
  Vec3 origin;
  Vec3 spacing;
  int step = 0;
  double time = 0.0;
  int components = 1;
  std::vector<double> values;
};
void write_snapshot(const std::filesystem::path& file, const Snapshot& snapshot);
Snapshot read_snapshot(const std::filesystem::path& file);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace dgm
