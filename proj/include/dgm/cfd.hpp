#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "dgm/field.hpp"

namespace dgm {

/// Two-phase fluid: phase 1 where alpha = 1 (heavy), phase 2 where alpha = 0.
struct FluidProps {
  double rho1 = 1000.0;
  double rho2 = 1.0;
  double mu1 = 1e-3;
  double mu2 = 1e-5;
  double surfaceTension = 0.0;  // carried for completeness, no force model

  void validate() const;
  double density(double alpha) const { return rho1 * alpha + rho2 * (1.0 - alpha); }
  double viscosity(double alpha) const { return mu1 * alpha + mu2 * (1.0 - alpha); }
};

enum class BoundaryType { Wall, Slip, Inlet, Outlet };
BoundaryType parse_boundary_type(const std::string& name);
std::string to_string(BoundaryType type);

struct FaceBoundary {
  BoundaryType type = BoundaryType::Wall;
  Vec3 velocity;       // Inlet only
  double alpha = 1.0;  // Inlet only
};

struct CfdConfig {
  FluidProps props;
  /// Domain faces in Face order (x-, x+, y-, y+, z-, z+).
  std::array<FaceBoundary, 6> boundaries;
  Vec3 gravity;
  double compression = 1.0;
  double maxCfl = 0.5;
  double maxDiffusionNumber = 0.5;
  double solverTolerance = 1e-8;
  int solverMaxIterations = 2000;

  void validate() const;
  bool has_outlet() const;
};

/// Fine-grid fluid state of one rank.
struct FluidState {
  explicit FluidState(std::shared_ptr<const Subdomain> sub);

  std::shared_ptr<const Subdomain> sub;
  GridField u;        // velocity
  GridField p;        // pressure
  GridField alpha;    // heavy-phase volume fraction
  GridField eps;      // porosity at the new time level
  GridField epsPrev;  // porosity at the previous time level
  GridField rho;
  GridField mu;
  GridField dragB;    // sum of particle beta per volume [kg/(m^3 s)]
  GridField dragBU;   // sum of beta * u_p per volume [N/m^3]
  GridField fpi;      // fluid-particle interaction force density [N/m^3]
  /// Outward normal velocity on the six faces of every owned cell, consistent
  /// with the last projection.
  std::vector<std::array<double, 6>> faceVelocity;
};

struct ProjectionReport {
  int iterations = 0;
  double relativeResidual = 0.0;
  std::vector<double> residualHistory;
};

struct AlphaReport {
  double clippedVolume = 0.0;  // sum of |clip| * eps * V removed or added
  double cfl = 0.0;
};

struct CfdStepReport {
  double cfl = 0.0;
  ProjectionReport projection;
  AlphaReport alpha;
};

/// Updates rho and mu on all local cells from alpha.
void mixture_properties(FluidState& state, const FluidProps& props);

/// Face velocities from cell values and boundary conditions; used once before
/// the first step. Collective.
void initialize_face_velocities(FluidState& state, const CfdConfig& config, Communicator& comm);

/// Global max of |u| dt / h over cell and face velocities. Collective.
double cfl_number(const FluidState& state, double dt, Communicator& comm);

/// Explicit predictor for u with the drag source dragBU - dragB u folded into
/// the diagonal. Throws PhysicsError on CFL or diffusion-number violations.
/// Collective.
void momentum_step(FluidState& state, const CfdConfig& config, double dt, Communicator& comm);

/// Solves for p so that div(eps u) + (eps - epsPrev) / dt = 0 and corrects u
/// and the face velocities. Throws PhysicsError when the solver does not
/// converge. Collective.
ProjectionReport pressure_projection(FluidState& state, const CfdConfig& config, double dt, Communicator& comm);

/// Upwind transport of eps * alpha with interface compression; result clipped
/// to [0, 1]. Collective.
AlphaReport advect_alpha(FluidState& state, const CfdConfig& config, double dt, Communicator& comm);

/// Mixture properties, momentum, projection, alpha transport, mixture properties.
CfdStepReport cfd_step(FluidState& state, const CfdConfig& config, double dt, Communicator& comm);

/// Largest |div(eps u_face) + (eps - epsPrev) / dt| over owned cells (not
/// reduced, not scaled).
double local_max_divergence(const FluidState& state, double dt);

/// Sum of eps * alpha * V over owned cells, as an exact partial sum.
double total_heavy_volume(const FluidState& state, Communicator& comm);

}  // namespace dgm
