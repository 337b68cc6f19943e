#include "dgm/cfd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dgm/collectives.hpp"
#include "dgm/error.hpp"

namespace dgm {

namespace {

struct Geometry {
  Vec3 h;
  Vec3 invH;
  double volume;
  double minSpacing;
};

Geometry geometry_of(const UniformGrid& g) {
  const Vec3 h = g.spacing();
  return {h, {1.0 / h.x, 1.0 / h.y, 1.0 / h.z}, g.cell_volume(), g.min_spacing()};
}

/// Mirror value behind a boundary face so that the face average meets the condition.
Vec3 ghost_velocity(const Vec3& uP, const FaceBoundary& bc, int face) {
  switch (bc.type) {
    case BoundaryType::Wall:
      return -uP;
    case BoundaryType::Inlet:
      return 2.0 * bc.velocity - uP;
    case BoundaryType::Outlet:
      return uP;
    case BoundaryType::Slip: {
      Vec3 g = uP;
      g[face_axis(face)] = -uP[face_axis(face)];
      return g;
    }
  }
  return uP;
}

double boundary_face_velocity(const Vec3& uP, const FaceBoundary& bc, int face) {
  const int a = face_axis(face);
  const double s = face_sign(face);
  switch (bc.type) {
    case BoundaryType::Wall:
    case BoundaryType::Slip:
      return 0.0;
    case BoundaryType::Inlet:
      return s * bc.velocity[a];
    case BoundaryType::Outlet:
      return s * uP[a];
  }
  return 0.0;
}

}  // namespace

void FluidProps::validate() const {
  if (!(rho1 > 0.0 && rho2 > 0.0)) throw ConfigError("fluid densities must be positive");
  if (!(mu1 > 0.0 && mu2 > 0.0)) throw ConfigError("fluid viscosities must be positive");
  if (!(surfaceTension >= 0.0)) throw ConfigError("surface tension must be non-negative");
}

BoundaryType parse_boundary_type(const std::string& name) {
  if (name == "wall") return BoundaryType::Wall;
  if (name == "slip") return BoundaryType::Slip;
  if (name == "inlet") return BoundaryType::Inlet;
  if (name == "outlet") return BoundaryType::Outlet;
  throw ConfigError("unknown boundary type '" + name + "' (expected wall|slip|inlet|outlet)");
}

std::string to_string(BoundaryType type) {
  switch (type) {
    case BoundaryType::Wall:
      return "wall";
    case BoundaryType::Slip:
      return "slip";
    case BoundaryType::Inlet:
      return "inlet";
    case BoundaryType::Outlet:
      return "outlet";
  }
  return "wall";
}

void CfdConfig::validate() const {
  props.validate();
  if (!(compression >= 0.0)) throw ConfigError("interface compression coefficient must be non-negative");
  if (!(maxCfl > 0.0) || !(maxDiffusionNumber > 0.0)) throw ConfigError("CFL limits must be positive");
  if (!(solverTolerance > 0.0) || solverMaxIterations < 1) throw ConfigError("invalid pressure solver settings");
  for (const auto& b : boundaries)
    if (b.type == BoundaryType::Inlet && !(b.alpha >= 0.0 && b.alpha <= 1.0))
      throw ConfigError("inlet alpha must lie in [0, 1]");
}

bool CfdConfig::has_outlet() const {
  return std::any_of(boundaries.begin(), boundaries.end(),
                     [](const FaceBoundary& b) { return b.type == BoundaryType::Outlet; });
}

FluidState::FluidState(std::shared_ptr<const Subdomain> s)
    : sub(std::move(s)),
      u(sub, 3),
      p(sub, 1),
      alpha(sub, 1),
      eps(sub, 1, 1.0),
      epsPrev(sub, 1, 1.0),
      rho(sub, 1),
      mu(sub, 1),
      dragB(sub, 1),
      dragBU(sub, 3),
      fpi(sub, 3),
      faceVelocity(static_cast<std::size_t>(sub->owned_count()), std::array<double, 6>{}) {}

void mixture_properties(FluidState& state, const FluidProps& props) {
  const int n = state.sub->local_count();
  for (int l = 0; l < n; ++l) {
    state.rho(l) = props.density(state.alpha(l));
    state.mu(l) = props.viscosity(state.alpha(l));
  }
}

void initialize_face_velocities(FluidState& state, const CfdConfig& config, Communicator& comm) {
  halo_exchange(state.u, comm);
  const auto& sub = *state.sub;
  for (int l = 0; l < sub.owned_count(); ++l) {
    const Vec3 uP = state.u.vec(l);
    for (int f = 0; f < kFaceCount; ++f) {
      const int nb = sub.neighbor(l, f);
      const int a = face_axis(f);
      double& v = state.faceVelocity[static_cast<std::size_t>(l)][static_cast<std::size_t>(f)];
      if (nb == kBoundary)
        v = boundary_face_velocity(uP, config.boundaries[static_cast<std::size_t>(f)], f);
      else
        v = face_sign(f) * (0.5 * (uP[a] + state.u(nb, a)));
    }
  }
}

namespace {

double local_cfl(const FluidState& state, double dt) {
  const double hmin = state.sub->grid().min_spacing();
  double vmax = 0.0;
  for (int l = 0; l < state.sub->owned_count(); ++l) {
    vmax = std::max(vmax, norm(state.u.vec(l)));
    for (double v : state.faceVelocity[static_cast<std::size_t>(l)]) vmax = std::max(vmax, std::abs(v));
  }
  return vmax * dt / hmin;
}

}  // namespace

double cfl_number(const FluidState& state, double dt, Communicator& comm) {
  return allreduce_max(comm, local_cfl(state, dt));
}

void momentum_step(FluidState& state, const CfdConfig& config, double dt, Communicator& comm) {
  GridField* fields[] = {&state.u, &state.eps, &state.rho, &state.mu};
  halo_exchange(fields, comm);
  const auto& sub = *state.sub;
  const Geometry geo = geometry_of(sub.grid());
  const double invH2 = geo.invH.x * geo.invH.x + geo.invH.y * geo.invH.y + geo.invH.z * geo.invH.z;

  double localNu = 0.0;
  for (int l = 0; l < sub.owned_count(); ++l) localNu = std::max(localNu, state.mu(l) / state.rho(l));
  const double limits[] = {local_cfl(state, dt), localNu * dt * invH2};
  const auto global = allreduce_max(comm, limits);
  if (global[0] > config.maxCfl) {
    std::ostringstream msg;
    msg << "momentum step rejected: CFL " << global[0] << " exceeds " << config.maxCfl;
    throw PhysicsError(msg.str());
  }
  if (global[1] > config.maxDiffusionNumber) {
    std::ostringstream msg;
    msg << "momentum step rejected: diffusion number " << global[1] << " exceeds " << config.maxDiffusionNumber;
    throw PhysicsError(msg.str());
  }

  std::vector<Vec3> predicted(static_cast<std::size_t>(sub.owned_count()));
  for (int l = 0; l < sub.owned_count(); ++l) {
    const Vec3 uP = state.u.vec(l);
    const double epsP = state.eps(l);
    const double rhoP = state.rho(l);
    const double emP = epsP * state.mu(l);
    Vec3 conv, diff;
    for (int f = 0; f < kFaceCount; ++f) {
      const int a = face_axis(f);
      const double area = geo.volume * geo.invH[a];
      const int nb = sub.neighbor(l, f);
      Vec3 uN;
      double em;
      if (nb == kBoundary) {
        uN = ghost_velocity(uP, config.boundaries[static_cast<std::size_t>(f)], f);
        em = emP;
      } else {
        uN = state.u.vec(nb);
        em = 0.5 * (emP + state.eps(nb) * state.mu(nb));
      }
      const double ufn = state.faceVelocity[static_cast<std::size_t>(l)][static_cast<std::size_t>(f)];
      if (ufn < 0.0) conv += (ufn * area) * (uN - uP);
      diff += (em * area * geo.invH[a]) * (uN - uP);
    }
    const double er = epsP * rhoP;
    conv *= er / geo.volume;
    diff *= 1.0 / geo.volume;
    const Vec3 body = er * config.gravity;
    const Vec3 rhs = (er / dt) * uP - conv + diff + body + state.dragBU.vec(l);
    predicted[static_cast<std::size_t>(l)] = rhs / (er / dt + state.dragB(l));
  }
  for (int l = 0; l < sub.owned_count(); ++l) state.u.set_vec(l, predicted[static_cast<std::size_t>(l)]);
}

ProjectionReport pressure_projection(FluidState& state, const CfdConfig& config, double dt, Communicator& comm) {
  GridField* fields[] = {&state.u, &state.eps, &state.rho};
  halo_exchange(fields, comm);
  const auto& sub = *state.sub;
  const int n = sub.owned_count();
  const Geometry geo = geometry_of(sub.grid());

  // Face weights and predicted face velocities.
  std::vector<std::array<double, 6>> w(static_cast<std::size_t>(n));
  std::vector<double> diag(static_cast<std::size_t>(n), 0.0), b(static_cast<std::size_t>(n), 0.0);
  for (int l = 0; l < n; ++l) {
    const Vec3 uP = state.u.vec(l);
    double div = 0.0;
    auto& faces = state.faceVelocity[static_cast<std::size_t>(l)];
    for (int f = 0; f < kFaceCount; ++f) {
      const int a = face_axis(f);
      const double s = face_sign(f);
      const int nb = sub.neighbor(l, f);
      double epsF, ufn, wf;
      if (nb == kBoundary) {
        const auto& bc = config.boundaries[static_cast<std::size_t>(f)];
        epsF = state.eps(l);
        ufn = boundary_face_velocity(uP, bc, f);
        wf = bc.type == BoundaryType::Outlet ? 2.0 * epsF * dt / state.rho(l) * geo.invH[a] * geo.invH[a] : 0.0;
      } else {
        epsF = 0.5 * (state.eps(l) + state.eps(nb));
        ufn = s * (0.5 * (uP[a] + state.u(nb, a)));
        wf = epsF * dt / (0.5 * (state.rho(l) + state.rho(nb))) * geo.invH[a] * geo.invH[a];
      }
      faces[static_cast<std::size_t>(f)] = ufn;
      w[static_cast<std::size_t>(l)][static_cast<std::size_t>(f)] = wf;
      diag[static_cast<std::size_t>(l)] += wf;
      div += epsF * ufn * geo.invH[a];
    }
    div += (state.eps(l) - state.epsPrev(l)) / dt;
    b[static_cast<std::size_t>(l)] = -div;
  }

  // A closed domain leaves the pressure level free: project out the constant mode.
  const bool singular = !config.has_outlet();
  const CellId total = sub.grid().cell_count();
  auto remove_mean = [&](std::vector<double>& v) {
    ExactSum s;
    for (double x : v) s.add(x);
    const double mean = allreduce_sum(comm, s) / static_cast<double>(total);
    for (double& x : v) x -= mean;
  };
  if (singular) remove_mean(b);

  GridField dir(state.sub, 1);
  auto apply = [&](const GridField& x, std::vector<double>& out) {
    for (int l = 0; l < n; ++l) {
      double acc = diag[static_cast<std::size_t>(l)] * x(l);
      for (int f = 0; f < kFaceCount; ++f) {
        const int nb = sub.neighbor(l, f);
        if (nb != kBoundary) acc -= w[static_cast<std::size_t>(l)][static_cast<std::size_t>(f)] * x(nb);
      }
      out[static_cast<std::size_t>(l)] = acc;
    }
  };

  ProjectionReport report;
  const double bnorm = std::sqrt(allreduce_sum(comm, [&] {
    ExactSum s;
    for (double x : b) s.add(x * x);
    return s;
  }()));
  std::vector<double> r(static_cast<std::size_t>(n)), z(static_cast<std::size_t>(n)), q(static_cast<std::size_t>(n));
  auto precondition = [&] {
    for (int l = 0; l < n; ++l) {
      const double d = diag[static_cast<std::size_t>(l)];
      z[static_cast<std::size_t>(l)] = d > 0.0 ? r[static_cast<std::size_t>(l)] / d : r[static_cast<std::size_t>(l)];
    }
  };

  if (bnorm == 0.0) {
    state.p.fill(0.0);
  } else {
    // Warm start from the previous pressure.
    for (int l = 0; l < n; ++l) dir(l) = state.p(l);
    halo_exchange(dir, comm);
    apply(dir, q);
    for (int l = 0; l < n; ++l) r[static_cast<std::size_t>(l)] = b[static_cast<std::size_t>(l)] - q[static_cast<std::size_t>(l)];
    precondition();
    ExactSum parts[2];
    for (int l = 0; l < n; ++l) {
      parts[0].add(r[static_cast<std::size_t>(l)] * z[static_cast<std::size_t>(l)]);
      parts[1].add(r[static_cast<std::size_t>(l)] * r[static_cast<std::size_t>(l)]);
    }
    auto sums = allreduce_sum(comm, parts);
    double rz = sums[0];
    double rnorm = std::sqrt(sums[1]);
    for (int l = 0; l < n; ++l) dir(l) = z[static_cast<std::size_t>(l)];
    int it = 0;
    report.residualHistory.push_back(rnorm / bnorm);
    while (rnorm > config.solverTolerance * bnorm) {
      if (it >= config.solverMaxIterations) {
        std::ostringstream msg;
        msg << "pressure solver did not converge in " << it << " iterations; relative residual history:";
        const std::size_t from = report.residualHistory.size() > 10 ? report.residualHistory.size() - 10 : 0;
        for (std::size_t k = from; k < report.residualHistory.size(); ++k) msg << ' ' << report.residualHistory[k];
        throw PhysicsError(msg.str());
      }
      halo_exchange(dir, comm);
      apply(dir, q);
      std::vector<double> dvals(static_cast<std::size_t>(n));
      for (int l = 0; l < n; ++l) dvals[static_cast<std::size_t>(l)] = dir(l);
      ExactSum dq;
      for (int l = 0; l < n; ++l) dq.add(dvals[static_cast<std::size_t>(l)] * q[static_cast<std::size_t>(l)]);
      const double denom = allreduce_sum(comm, dq);
      if (!(denom > 0.0)) throw PhysicsError("pressure solver breakdown: search direction has no energy");
      const double step = rz / denom;
      for (int l = 0; l < n; ++l) {
        state.p(l) += step * dvals[static_cast<std::size_t>(l)];
        r[static_cast<std::size_t>(l)] -= step * q[static_cast<std::size_t>(l)];
      }
      precondition();
      ExactSum next[2];
      for (int l = 0; l < n; ++l) {
        next[0].add(r[static_cast<std::size_t>(l)] * z[static_cast<std::size_t>(l)]);
        next[1].add(r[static_cast<std::size_t>(l)] * r[static_cast<std::size_t>(l)]);
      }
      sums = allreduce_sum(comm, next);
      const double beta = sums[0] / rz;
      rz = sums[0];
      rnorm = std::sqrt(sums[1]);
      for (int l = 0; l < n; ++l) dir(l) = z[static_cast<std::size_t>(l)] + beta * dvals[static_cast<std::size_t>(l)];
      ++it;
      report.residualHistory.push_back(rnorm / bnorm);
    }
    report.iterations = it;
    report.relativeResidual = rnorm / bnorm;
    if (singular) {
      std::vector<double> pv(static_cast<std::size_t>(n));
      for (int l = 0; l < n; ++l) pv[static_cast<std::size_t>(l)] = state.p(l);
      remove_mean(pv);
      for (int l = 0; l < n; ++l) state.p(l) = pv[static_cast<std::size_t>(l)];
    }
  }

  halo_exchange(state.p, comm);
  for (int l = 0; l < n; ++l) {
    auto& faces = state.faceVelocity[static_cast<std::size_t>(l)];
    Vec3 correction;
    for (int f = 0; f < kFaceCount; ++f) {
      const int a = face_axis(f);
      const double s = face_sign(f);
      const int nb = sub.neighbor(l, f);
      double delta = 0.0;  // outward normal velocity correction
      if (nb == kBoundary) {
        if (config.boundaries[static_cast<std::size_t>(f)].type == BoundaryType::Outlet)
          delta = -dt / state.rho(l) * (0.0 - state.p(l)) * 2.0 * geo.invH[a];
      } else {
        delta = -dt / (0.5 * (state.rho(l) + state.rho(nb))) * (state.p(nb) - state.p(l)) * geo.invH[a];
      }
      faces[static_cast<std::size_t>(f)] += delta;
      correction[a] += 0.5 * s * delta;
    }
    state.u.set_vec(l, state.u.vec(l) + correction);
  }
  return report;
}

AlphaReport advect_alpha(FluidState& state, const CfdConfig& config, double dt, Communicator& comm) {
  GridField* fields[] = {&state.alpha, &state.eps};
  halo_exchange(fields, comm);
  const auto& sub = *state.sub;
  const int n = sub.owned_count();
  const Geometry geo = geometry_of(sub.grid());

  AlphaReport report;
  report.cfl = cfl_number(state, dt, comm);
  if (report.cfl > config.maxCfl) {
    std::ostringstream msg;
    msg << "alpha transport rejected: CFL " << report.cfl << " exceeds " << config.maxCfl;
    throw PhysicsError(msg.str());
  }

  GridField grad(state.sub, 3);
  if (config.compression > 0.0) {
    for (int l = 0; l < n; ++l) {
      Vec3 g;
      for (int a = 0; a < 3; ++a) {
        const int lo = sub.neighbor(l, 2 * a);
        const int hi = sub.neighbor(l, 2 * a + 1);
        const double aLo = lo == kBoundary ? state.alpha(l) : state.alpha(lo);
        const double aHi = hi == kBoundary ? state.alpha(l) : state.alpha(hi);
        g[a] = (aHi - aLo) * 0.5 * geo.invH[a];
      }
      grad.set_vec(l, g);
    }
    halo_exchange(grad, comm);
  }
  const double smallGrad = 1e-8 / geo.minSpacing;

  std::vector<double> next(static_cast<std::size_t>(n));
  for (int l = 0; l < n; ++l) {
    const double aP = state.alpha(l);
    const auto& faces = state.faceVelocity[static_cast<std::size_t>(l)];
    double flux = 0.0;
    for (int f = 0; f < kFaceCount; ++f) {
      const int a = face_axis(f);
      const double s = face_sign(f);
      const double area = geo.volume * geo.invH[a];
      const double ufn = faces[static_cast<std::size_t>(f)];
      const int nb = sub.neighbor(l, f);
      if (nb == kBoundary) {
        const auto& bc = config.boundaries[static_cast<std::size_t>(f)];
        const double aIn = bc.type == BoundaryType::Inlet ? bc.alpha : aP;
        flux += state.eps(l) * ufn * area * (ufn >= 0.0 ? aP : aIn);
        continue;
      }
      const double aN = state.alpha(nb);
      const double epsF = 0.5 * (state.eps(l) + state.eps(nb));
      flux += epsF * ufn * area * (ufn >= 0.0 ? aP : aN);
      if (config.compression > 0.0) {
        Vec3 gf = 0.5 * (grad.vec(l) + grad.vec(nb));
        const double gn = (aN - aP) * geo.invH[a];
        gf[a] = s * gn;
        const double ucn = config.compression * std::abs(ufn) * gn / (norm(gf) + smallGrad);
        const double phi = ucn >= 0.0 ? aP * (1.0 - aN) : aN * (1.0 - aP);
        flux += epsF * ucn * area * phi;
      }
    }
    const double ea = state.epsPrev(l) * aP - dt / geo.volume * flux;
    next[static_cast<std::size_t>(l)] = ea / state.eps(l);
  }

  ExactSum clipped;
  for (int l = 0; l < n; ++l) {
    const double v = next[static_cast<std::size_t>(l)];
    const double c = std::clamp(v, 0.0, 1.0);
    if (c != v) clipped.add(std::abs(c - v) * state.eps(l) * geo.volume);
    state.alpha(l) = c;
  }
  report.clippedVolume = allreduce_sum(comm, clipped);
  return report;
}

CfdStepReport cfd_step(FluidState& state, const CfdConfig& config, double dt, Communicator& comm) {
  CfdStepReport report;
  halo_exchange(state.alpha, comm);
  mixture_properties(state, config.props);
  momentum_step(state, config, dt, comm);
  report.projection = pressure_projection(state, config, dt, comm);
  report.alpha = advect_alpha(state, config, dt, comm);
  report.cfl = report.alpha.cfl;
  halo_exchange(state.alpha, comm);
  mixture_properties(state, config.props);
  return report;
}

double local_max_divergence(const FluidState& state, double dt) {
  const auto& sub = *state.sub;
  const Geometry geo = geometry_of(sub.grid());
  double worst = 0.0;
  for (int l = 0; l < sub.owned_count(); ++l) {
    double div = 0.0;
    for (int f = 0; f < kFaceCount; ++f) {
      const int nb = sub.neighbor(l, f);
      const double epsF = nb == kBoundary ? state.eps(l) : 0.5 * (state.eps(l) + state.eps(nb));
      div += epsF * state.faceVelocity[static_cast<std::size_t>(l)][static_cast<std::size_t>(f)] *
             geo.invH[face_axis(f)];
    }
    div += (state.eps(l) - state.epsPrev(l)) / dt;
    worst = std::max(worst, std::abs(div));
  }
  return worst;
}

double total_heavy_volume(const FluidState& state, Communicator& comm) {
  const double v = state.sub->grid().cell_volume();
  ExactSum s;
  for (int l = 0; l < state.sub->owned_count(); ++l) s.add(state.eps(l) * state.alpha(l) * v);
  return allreduce_sum(comm, s);
}

}  // namespace dgm
