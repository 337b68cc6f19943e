#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgm/partition.hpp"
#include "dgm/transport.hpp"

namespace dgm {

/// Rigid sphere. Mass and inertia follow from radius and density.
struct Particle {
  std::uint64_t id = 0;
  Vec3 x;
  Vec3 u;
  Vec3 omega;
  Quaternion orientation;
  double radius = 0.0;
  double density = 0.0;
  double mass = 0.0;
  double inertia = 0.0;

  // Force state carried between half-kicks.
  Vec3 contactForce;
  Vec3 contactTorque;
  /// Drag coefficient [kg/s] and fluid velocity seen by the particle; both are
  /// held fixed over the DEM sub-steps of one coupling step.
  double beta = 0.0;
  Vec3 fluidVelocity;
  Vec3 acceleration;
};

Particle make_particle(std::uint64_t id, const Vec3& x, const Vec3& u, double radius, double density);

struct ContactParams {
  double k = 1000.0;
  double restitution = 0.9;
  double friction = 0.3;

  void validate() const;
  /// Damping ratio reproducing the restitution coefficient of a linear dashpot.
  double damping_ratio() const;
};

/// Force and torque on the first particle of a contact.
struct ContactResult {
  Vec3 force;
  Vec3 torque;
  bool touching = false;
};

ContactResult contact_force(const Particle& pi, const Particle& pj, const ContactParams& params);

/// Flat wall bounding the domain: the plane x[axis] = position, facing +axis
/// when lower is true and -axis otherwise. Walls do not move.
struct Wall {
  int axis = 0;
  bool lower = true;
  double position = 0.0;
};

ContactResult wall_contact_force(const Particle& p, const Wall& wall, const ContactParams& params);

enum class DragModel { Constant, DiFelice };

struct DragParams {
  DragModel model = DragModel::DiFelice;
  double beta = 0.0;  // Constant model only [kg/s]
};

DragModel parse_drag_model(const std::string& name);

/// Momentum exchange coefficient beta in F_drag = beta (u_f - u_p).
double drag_coefficient(const Particle& p, const Vec3& fluidVelocity, double porosity, double fluidDensity,
                        double fluidViscosity, const DragParams& params);
Vec3 drag_force(const Particle& p, const Vec3& fluidVelocity, double porosity, double fluidDensity,
                double fluidViscosity, const DragParams& params);

/// Largest stable DEM step for a given lightest particle: 0.2 sqrt(m_min / k).
double max_stable_timestep(double minMass, double k);

enum class OutsidePolicy { Reflect, Delete, Error };
OutsidePolicy parse_outside_policy(const std::string& name);

struct DemConfig {
  ContactParams contact;
  Vec3 gravity;
  Vec3 externalMoment;
  /// Per face (x-, x+, y-, y+, z-, z+) of the coarse grid box: solid wall or open.
  std::array<bool, 6> wallFaces{};
  OutsidePolicy outside = OutsidePolicy::Error;
};

struct DemCounters {
  std::uint64_t migratedOut = 0;
  std::uint64_t migratedIn = 0;
  std::uint64_t deleted = 0;
  std::uint64_t reflected = 0;
};

/// One rank's share of the DEM domain. Ownership follows the coarse-grid
/// partition: a particle belongs to the owner of the coarse cell holding its
/// centre. Ghost copies cover the one-coarse-cell layer around the owned cells.
///
/// Forces on a particle are summed over contact partners in ascending id order,
/// and each pair force is evaluated with the lower id first, so results do not
/// depend on how particles are distributed over ranks.
class DemDomain {
 public:
  DemDomain(std::shared_ptr<const PartitionMap> coarse, int rank, DemConfig config);

  /// Keeps the particles whose centre lies in this rank's cells; outside ones
  /// are handled by the configured policy.
  void add_particles(std::span<const Particle> particles);

  std::vector<Particle>& particles() { return owned_; }
  const std::vector<Particle>& particles() const { return owned_; }
  const std::vector<Particle>& ghosts() const { return ghosts_; }
  const PartitionMap& partition() const { return *map_; }
  int rank() const { return rank_; }
  const DemConfig& config() const { return config_; }
  const std::vector<Wall>& walls() const { return walls_; }
  const DemCounters& counters() const { return counters_; }
  /// Wall time spent in exchange() calls made by step().
  double exchange_seconds() const { return exchangeSeconds_; }
  /// Ranks owning coarse cells that touch this rank's cells (faces, edges or corners).
  const std::vector<int>& neighbor_ranks() const { return neighbors_; }

  /// Throws ConfigError when dt exceeds the stability bound or the coarse cells
  /// are too small for a one-cell ghost layer. Collective.
  void check_setup(double dt, Communicator& comm) const;

  /// Moves particles to their owners and rebuilds ghosts. Collective.
  void exchange(Communicator& comm);
  /// Contact forces and torques on owned particles from owned particles, ghosts and walls.
  void compute_contact_forces();
  /// One velocity-Verlet step: half-kick, drift, boundary policy, exchange,
  /// new contact forces, second half-kick with implicit drag. Collective.
  void step(double dt, Communicator& comm);

 private:
  void apply_outside_policy();
  int owner_of(const Vec3& x) const;

  std::shared_ptr<const PartitionMap> map_;
  int rank_;
  DemConfig config_;
  std::vector<Wall> walls_;
  std::vector<int> neighbors_;
  std::vector<char> isNeighbor_;
  /// Per coarse cell: other ranks whose cells touch it (ghost destinations).
  std::vector<std::vector<int>> ghostTargets_;
  std::vector<Particle> owned_;
  std::vector<Particle> ghosts_;
  DemCounters counters_;
  double exchangeSeconds_ = 0.0;
};

/// All particles of all ranks at the root, sorted by id.
std::optional<std::vector<Particle>> gather_particles(const DemDomain& dem, Communicator& comm);

void write_particle(ByteWriter& w, const Particle& p);
Particle read_particle(ByteReader& r);

}  // namespace dgm
