#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dgm/cfd.hpp"
#include "dgm/dem.hpp"
#include "dgm/interp.hpp"

namespace dgm {

enum class CouplingMode { Multiscale, Monoscale };
CouplingMode parse_mode(const std::string& name);
std::string to_string(CouplingMode mode);

/// One coupling step is one CFD step of length dt followed by demSubsteps DEM
/// steps of length dt / demSubsteps.
struct CouplingSchedule {
  double dt = 1e-3;
  int demSubsteps = 10;

  void validate() const;
  double dem_dt() const { return dt / demSubsteps; }
};

/// Everything a rank needs to build its share of the coupled system. The maps
/// and matrices are shared, immutable and identical on every rank.
struct CouplingSetup {
  CouplingMode mode = CouplingMode::Multiscale;
  Strategy strategy = Strategy::Distributed;
  CouplingSchedule schedule;
  DragParams drag;
  double epsMin = 0.05;
  CfdConfig cfd;
  DemConfig dem;
  /// DEM decomposition and coarse grid (one map for both).
  std::shared_ptr<const PartitionMap> coarseMap;
  /// Fluid grid; the coarse map itself in monoscale mode.
  std::shared_ptr<const PartitionMap> fineMap;
  /// Coarse -> fine and fine -> coarse matrices; multiscale mode only.
  std::shared_ptr<const CommMatrix> toFine;
  std::shared_ptr<const CommMatrix> toCoarse;

  void validate() const;
};

/// Builds the coarse -> fine matrix once and derives the reverse one by
/// transposition. No-op in monoscale mode.
void prepare_comm_matrices(CouplingSetup& setup);

/// Coarse-grid coupling fields of one rank.
struct CoarseFields {
  explicit CoarseFields(std::shared_ptr<const Subdomain> sub);

  std::shared_ptr<const Subdomain> sub;
  GridField eps;     // porosity
  GridField dragB;   // sum of particle beta per volume
  GridField dragBU;  // sum of beta * u_p per volume
  GridField u;       // fluid solution mapped up from the fine grid
  GridField p;
  GridField rho;
  GridField mu;
};

struct ProjectionStats {
  std::uint64_t particles = 0;
  std::uint64_t flooredCells = 0;
};

/// Assigns every owned particle to the coarse cell holding its centre, sets
/// eps = max(1 - solid volume / cell volume, epsMin) and the drag sources, and
/// stores each particle's beta evaluated with the current coarse fluid values.
/// Purely local. Throws ConsistencyError for a particle whose cell is not
/// owned by this rank.
ProjectionStats project_particles_to_coarse(std::span<Particle> particles, CoarseFields& coarse,
                                            const DragParams& drag, double epsMin);

/// Sent-message totals of one phase, summed over ranks.
struct PhaseTraffic {
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
};

enum class Phase : int { Projection = 0, Interpolation, Cfd, Drag, Dem };
inline constexpr int kPhaseCount = 5;
const char* phase_name(Phase phase);

/// Result of one coupling step. Every field except localSeconds is identical
/// on all ranks.
struct StepReport {
  int step = 0;
  double time = 0.0;
  /// Wall time of each phase on this rank, and the maximum over ranks.
  std::array<double, kPhaseCount> localSeconds{};
  std::array<double, kPhaseCount> maxSeconds{};
  double maxMigrationSeconds = 0.0;
  double maxStepSeconds = 0.0;
  std::array<PhaseTraffic, kPhaseCount> traffic{};
  /// Largest per-rank bytes sent in the interpolation phase.
  std::uint64_t maxRankInterpolationBytes = 0;

  CfdStepReport cfd;
  std::uint64_t particleCount = 0;
  std::uint64_t maxRankParticles = 0;
  std::uint64_t flooredCells = 0;
  double particleVolume = 0.0;
  double coarseSolidVolume = 0.0;
  double fineSolidVolume = 0.0;
  Vec3 dragForce;       // sum of beta (u_f - u_p) over particles
  Vec3 fluidReaction;   // sum of F_fpi V over fine cells
  double actionReaction = 0.0;  // |dragForce + fluidReaction| / sum |F_drag|
  double heavyVolume = 0.0;     // sum of eps alpha V on the fine grid
  double kineticEnergy = 0.0;   // particles, translational
  double maxDivergence = 0.0;   // scaled by the largest cell-face speed over h
};

/// One rank's share of the coupled DEM-CFD system.
class CoupledRank {
 public:
  CoupledRank(const CouplingSetup& setup, int rank);

  const CouplingSetup& setup() const { return setup_; }
  FluidState& fluid() { return fluid_; }
  const FluidState& fluid() const { return fluid_; }
  CoarseFields& coarse() { return coarse_; }
  const CoarseFields& coarse() const { return coarse_; }
  DemDomain& dem() { return dem_; }
  const DemDomain& dem() const { return dem_; }
  int step_index() const { return step_; }
  double time() const { return time_; }

  /// Distributes the particles, builds ghosts and the initial coupling fields.
  /// Fluid u and alpha must already hold the initial state. Collective.
  void initialize(std::span<const Particle> particles, Communicator& comm);

  /// Projection, coarse -> fine mapping, CFD step, fine -> coarse mapping,
  /// drag, DEM sub-steps. Errors are rethrown with the step and phase named.
  /// Collective.
  StepReport step(Communicator& comm);

 private:
  void map_to_fine(Communicator& comm);
  void map_to_coarse(Communicator& comm);
  void set_particle_fluid_velocity();

  CouplingSetup setup_;
  int rank_;
  std::shared_ptr<const Subdomain> coarseSub_;
  std::shared_ptr<const Subdomain> fineSub_;
  FluidState fluid_;
  CoarseFields coarse_;
  DemDomain dem_;
  std::unique_ptr<RankInterpPlan> toFinePlan_;
  std::unique_ptr<RankInterpPlan> toCoarsePlan_;
  int step_ = 0;
  double time_ = 0.0;
};

}  // namespace dgm
