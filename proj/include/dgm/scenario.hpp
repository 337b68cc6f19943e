#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dgm/coupling.hpp"

namespace dgm {

inline constexpr int kScenarioSchemaVersion = 1;

struct AlphaRegion {
  Box box;
  double alpha = 1.0;
};

struct FluidProbe {
  std::string name;
  Vec3 position;
};

enum class FineWeights { Uniform, ParticleHistogram };

/// A validated run description. Every field has been checked against the
/// preconditions of the modules it feeds.
struct Scenario {
  std::string name;
  std::string description;
  /// Hash of the canonical JSON text of the scenario file.
  std::uint64_t configHash = 0;

  UniformGrid coarse{{}, {1, 1, 1}, {1, 1, 1}};
  UniformGrid fine{{}, {1, 1, 1}, {1, 1, 1}};
  /// Fluid and DEM grid of monoscale runs; the fine grid when absent.
  std::optional<UniformGrid> single;
  FineWeights fineWeights = FineWeights::Uniform;

  CfdConfig cfd;
  Vec3 initialVelocity;
  double initialAlpha = 1.0;
  std::vector<AlphaRegion> alphaRegions;

  DemConfig dem;
  DragParams drag;
  double epsMin = 0.05;
  CouplingSchedule schedule;
  int steps = 1;

  Strategy strategy = Strategy::Distributed;
  CouplingMode mode = CouplingMode::Multiscale;

  std::vector<Particle> particles;

  int snapshotEvery = 0;  // 0: final snapshot only
  std::vector<FluidProbe> fluidProbes;
  bool probeAllParticles = true;
  std::vector<std::uint64_t> probeParticles;
};

/// Parses and validates a scenario. Relative particle file paths resolve
/// against baseDir. Throws ConfigError naming the offending field.
Scenario parse_scenario(const std::string& jsonText, const std::filesystem::path& baseDir = {});
Scenario load_scenario(const std::filesystem::path& file);

/// DEM grid, fluid grid and fine-grid weights for a mode, plus shared maps and
/// matrices for rankCount ranks. Builds the comm matrices in multiscale mode.
CouplingSetup make_coupling_setup(const Scenario& scenario, CouplingMode mode, Strategy strategy, int rankCount);

/// Sets the initial fluid velocity and alpha on a rank's fluid state.
void apply_initial_fluid(const Scenario& scenario, FluidState& fluid);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& text);

}  // namespace dgm
