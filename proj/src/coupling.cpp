#include "dgm/coupling.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dgm/collectives.hpp"
#include "dgm/error.hpp"

namespace dgm {

CouplingMode parse_mode(const std::string& name) {
  if (name == "multiscale") return CouplingMode::Multiscale;
  if (name == "monoscale") return CouplingMode::Monoscale;
  throw ConfigError("unknown mode '" + name + "' (expected multiscale|monoscale)");
}

std::string to_string(CouplingMode mode) {
  return mode == CouplingMode::Multiscale ? "multiscale" : "monoscale";
}

void CouplingSchedule::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("schedule.dt must be positive");
  if (demSubsteps < 1) throw ConfigError("schedule.demSubsteps must be at least 1");
}

void CouplingSetup::validate() const {
  schedule.validate();
  cfd.validate();
  dem.contact.validate();
  if (!(epsMin > 0.0 && epsMin < 1.0)) throw ConfigError("coupling.epsMin must lie in (0, 1)");
  if (!coarseMap || !fineMap) throw ConfigError("coupling: partition maps are missing");
  if (coarseMap->rank_count() != fineMap->rank_count())
    throw ConfigError("coupling: coarse and fine partitions have different rank counts");
  if (mode == CouplingMode::Monoscale) {
    if (!(*coarseMap == *fineMap))
      throw ConfigError("monoscale mode needs the fluid grid co-located with the DEM partition");
  } else if (!toFine || !toCoarse) {
    throw ConfigError("multiscale mode needs both communication matrices");
  }
}

void prepare_comm_matrices(CouplingSetup& setup) {
  if (setup.mode == CouplingMode::Monoscale) return;
  auto toFine = std::make_shared<const CommMatrix>(build_comm_matrix(setup.coarseMap, setup.fineMap));
  setup.toCoarse = std::make_shared<const CommMatrix>(toFine->transposed());
  setup.toFine = std::move(toFine);
}

CoarseFields::CoarseFields(std::shared_ptr<const Subdomain> s)
    : sub(s),
      eps(s, 1, 1.0),
      dragB(s, 1),
      dragBU(s, 3),
      u(s, 3),
      p(s, 1),
      rho(s, 1),
      mu(s, 1) {}

ProjectionStats project_particles_to_coarse(std::span<Particle> particles, CoarseFields& coarse,
                                            const DragParams& drag, double epsMin) {
  const auto& sub = *coarse.sub;
  const auto& grid = sub.grid();
  const int n = sub.owned_count();
  const double volume = grid.cell_volume();

  // Per-cell sums run in ascending particle id, so they do not depend on how
  // particles are stored or distributed.
  std::vector<std::size_t> order(particles.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return particles[a].id < particles[b].id; });

  std::vector<int> cellOf(particles.size());
  std::vector<double> solid(static_cast<std::size_t>(n), 0.0);
  for (std::size_t i : order) {
    const auto& p = particles[i];
    const auto cell = locate_cell(grid, p.x);
    const int local = cell ? sub.local_index(*cell) : kBoundary;
    if (local == kBoundary || local >= n) {
      std::ostringstream msg;
      msg << "particle " << p.id << " at (" << p.x.x << ", " << p.x.y << ", " << p.x.z
          << ") is not inside a coarse cell owned by rank " << sub.rank();
      throw ConsistencyError(msg.str());
    }
    cellOf[i] = local;
    solid[static_cast<std::size_t>(local)] += 4.0 / 3.0 * std::numbers::pi * p.radius * p.radius * p.radius;
  }

  ProjectionStats stats;
  stats.particles = particles.size();
  for (int l = 0; l < n; ++l) {
    double e = 1.0 - solid[static_cast<std::size_t>(l)] / volume;
    if (e < epsMin) {
      e = epsMin;
      ++stats.flooredCells;
    }
    coarse.eps(l) = e;
  }

  std::vector<double> sumB(static_cast<std::size_t>(n), 0.0);
  std::vector<Vec3> sumBU(static_cast<std::size_t>(n));
  for (std::size_t i : order) {
    auto& p = particles[i];
    const int l = cellOf[i];
    p.beta = drag_coefficient(p, coarse.u.vec(l), coarse.eps(l), coarse.rho(l), coarse.mu(l), drag);
    sumB[static_cast<std::size_t>(l)] += p.beta;
    sumBU[static_cast<std::size_t>(l)] += p.beta * p.u;
  }
  for (int l = 0; l < n; ++l) {
    coarse.dragB(l) = sumB[static_cast<std::size_t>(l)] / volume;
    coarse.dragBU.set_vec(l, sumBU[static_cast<std::size_t>(l)] / volume);
  }
  return stats;
}

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::Projection: return "projection";
    case Phase::Interpolation: return "interpolation";
    case Phase::Cfd: return "cfd";
    case Phase::Drag: return "drag";
    case Phase::Dem: return "dem";
  }
  return "?";
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Runs one phase, charging its wall time and sent traffic, and rethrows errors
/// with the step and phase named.
template <class F>
void run_phase(Phase phase, int step, Communicator& comm, StepReport& report,
               std::array<PhaseTraffic, kPhaseCount>& local, F&& body) {
  const auto before = comm.counters();
  const auto t0 = Clock::now();
  const std::string where = "step " + std::to_string(step) + ", phase " + phase_name(phase) + ": ";
  try {
    body();
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  } catch (const PhysicsError& e) {
    throw PhysicsError(where + e.what());
  } catch (const ConsistencyError& e) {
    throw ConsistencyError(where + e.what());
  } catch (const TransportError& e) {
    throw TransportError(where + e.what());
  }
  const auto i = static_cast<std::size_t>(phase);
  report.localSeconds[i] += seconds_since(t0);
  const auto delta = comm.counters().since(before);
  local[i].messages += delta.messagesSent;
  local[i].bytes += delta.bytesSent;
}

void copy_owned(const GridField& from, GridField& to) {
  const int n = from.subdomain().owned_count() * from.components();
  std::copy_n(from.values().begin(), n, to.values().begin());
}

}  // namespace

CoupledRank::CoupledRank(const CouplingSetup& setup, int rank)
    : setup_(setup),
      rank_(rank),
      coarseSub_(std::make_shared<const Subdomain>(setup.coarseMap, rank)),
      fineSub_(setup.mode == CouplingMode::Monoscale ? coarseSub_
                                                     : std::make_shared<const Subdomain>(setup.fineMap, rank)),
      fluid_(fineSub_),
      coarse_(coarseSub_),
      dem_(setup.coarseMap, rank, setup.dem) {
  setup_.validate();
  if (setup_.mode == CouplingMode::Multiscale) {
    toFinePlan_ = std::make_unique<RankInterpPlan>(setup_.toFine->plan_for(coarseSub_, fineSub_));
    toCoarsePlan_ = std::make_unique<RankInterpPlan>(setup_.toCoarse->plan_for(fineSub_, coarseSub_));
  }
}

void CoupledRank::map_to_fine(Communicator& comm) {
  copy_owned(fluid_.eps, fluid_.epsPrev);
  if (setup_.mode == CouplingMode::Monoscale) {
    copy_owned(coarse_.eps, fluid_.eps);
    copy_owned(coarse_.dragB, fluid_.dragB);
    copy_owned(coarse_.dragBU, fluid_.dragBU);
    return;
  }
  const auto s = setup_.strategy;
  interpolate(*toFinePlan_, coarse_.eps, fluid_.eps, InterpolationKind::Consistent, s, comm);
  interpolate(*toFinePlan_, coarse_.dragB, fluid_.dragB, InterpolationKind::Conservative, s, comm);
  interpolate(*toFinePlan_, coarse_.dragBU, fluid_.dragBU, InterpolationKind::Conservative, s, comm);
}

void CoupledRank::map_to_coarse(Communicator& comm) {
  if (setup_.mode == CouplingMode::Monoscale) {
    copy_owned(fluid_.u, coarse_.u);
    copy_owned(fluid_.p, coarse_.p);
    copy_owned(fluid_.rho, coarse_.rho);
    copy_owned(fluid_.mu, coarse_.mu);
    return;
  }
  const auto s = setup_.strategy;
  const auto k = InterpolationKind::Consistent;
  interpolate(*toCoarsePlan_, fluid_.u, coarse_.u, k, s, comm);
  interpolate(*toCoarsePlan_, fluid_.p, coarse_.p, k, s, comm);
  interpolate(*toCoarsePlan_, fluid_.rho, coarse_.rho, k, s, comm);
  interpolate(*toCoarsePlan_, fluid_.mu, coarse_.mu, k, s, comm);
}

void CoupledRank::set_particle_fluid_velocity() {
  const auto& grid = coarseSub_->grid();
  for (auto& p : dem_.particles()) {
    const auto cell = locate_cell(grid, p.x);
    const int l = cell ? coarseSub_->local_index(*cell) : kBoundary;
    if (l == kBoundary || l >= coarseSub_->owned_count()) {
      std::ostringstream msg;
      msg << "particle " << p.id << " is not inside a coarse cell owned by rank " << rank_;
      throw ConsistencyError(msg.str());
    }
    p.fluidVelocity = coarse_.u.vec(l);
  }
}

void CoupledRank::initialize(std::span<const Particle> particles, Communicator& comm) {
  dem_.check_setup(setup_.schedule.dem_dt(), comm);
  dem_.add_particles(particles);
  dem_.exchange(comm);
  dem_.compute_contact_forces();

  halo_exchange(fluid_.alpha, comm);
  mixture_properties(fluid_, setup_.cfd.props);
  map_to_coarse(comm);
  project_particles_to_coarse(dem_.particles(), coarse_, setup_.drag, setup_.epsMin);
  map_to_fine(comm);
  copy_owned(fluid_.eps, fluid_.epsPrev);
  initialize_face_velocities(fluid_, setup_.cfd, comm);
  set_particle_fluid_velocity();
}

StepReport CoupledRank::step(Communicator& comm) {
  StepReport report;
  report.step = step_ + 1;
  std::array<PhaseTraffic, kPhaseCount> traffic{};
  const auto stepStart = Clock::now();
  const double dt = setup_.schedule.dt;
  const double migrationBefore = dem_.exchange_seconds();
  ProjectionStats projection;

  run_phase(Phase::Projection, report.step, comm, report, traffic, [&] {
    projection = project_particles_to_coarse(dem_.particles(), coarse_, setup_.drag, setup_.epsMin);
  });
  run_phase(Phase::Interpolation, report.step, comm, report, traffic, [&] { map_to_fine(comm); });
  run_phase(Phase::Cfd, report.step, comm, report, traffic, [&] {
    report.cfd = cfd_step(fluid_, setup_.cfd, dt, comm);
    for (int l = 0; l < fineSub_->owned_count(); ++l)
      fluid_.fpi.set_vec(l, fluid_.dragBU.vec(l) - fluid_.dragB(l) * fluid_.u.vec(l));
  });
  run_phase(Phase::Interpolation, report.step, comm, report, traffic, [&] { map_to_coarse(comm); });

  std::array<ExactSum, 3> dragSum;
  ExactSum dragMagnitude;
  run_phase(Phase::Drag, report.step, comm, report, traffic, [&] {
    set_particle_fluid_velocity();
    auto sorted = dem_.particles();
    std::sort(sorted.begin(), sorted.end(), [](const Particle& a, const Particle& b) { return a.id < b.id; });
    for (const auto& p : sorted) {
      const Vec3 f = p.beta * (p.fluidVelocity - p.u);
      for (int c = 0; c < 3; ++c) dragSum[static_cast<std::size_t>(c)].add(f[c]);
      dragMagnitude.add(norm(f));
    }
  });

  // Diagnostics that must see the fields between the fluid solve and the DEM.
  const double fineVolume = fineSub_->grid().cell_volume();
  const double coarseVolume = coarseSub_->grid().cell_volume();
  std::vector<ExactSum> sums(12);
  for (int c = 0; c < 3; ++c) sums[static_cast<std::size_t>(c)] = dragSum[static_cast<std::size_t>(c)];
  sums[6] = dragMagnitude;
  for (int l = 0; l < fineSub_->owned_count(); ++l) {
    for (int c = 0; c < 3; ++c) sums[static_cast<std::size_t>(3 + c)].add(fluid_.fpi(l, c) * fineVolume);
    sums[7].add((1.0 - fluid_.eps(l)) * fineVolume);
    sums[8].add(fluid_.eps(l) * fluid_.alpha(l) * fineVolume);
  }
  for (int l = 0; l < coarseSub_->owned_count(); ++l) sums[9].add((1.0 - coarse_.eps(l)) * coarseVolume);
  const double divergence = local_max_divergence(fluid_, dt);
  for (const auto& p : dem_.particles()) sums[10].add(4.0 / 3.0 * std::numbers::pi * p.radius * p.radius * p.radius);

  run_phase(Phase::Dem, report.step, comm, report, traffic, [&] {
    for (int s = 0; s < setup_.schedule.demSubsteps; ++s) dem_.step(setup_.schedule.dem_dt(), comm);
  });
  const double migrationSeconds = dem_.exchange_seconds() - migrationBefore;
  const double stepSeconds = seconds_since(stepStart);

  for (const auto& p : dem_.particles()) sums[11].add(0.5 * p.mass * dot(p.u, p.u));
  std::vector<ExactSum> counts(2 * kPhaseCount + 3);
  for (int i = 0; i < kPhaseCount; ++i) {
    counts[static_cast<std::size_t>(2 * i)].add(static_cast<double>(traffic[static_cast<std::size_t>(i)].messages));
    counts[static_cast<std::size_t>(2 * i + 1)].add(static_cast<double>(traffic[static_cast<std::size_t>(i)].bytes));
  }
  counts[2 * kPhaseCount].add(static_cast<double>(dem_.particles().size()));
  counts[2 * kPhaseCount + 1].add(static_cast<double>(projection.flooredCells));
  counts[2 * kPhaseCount + 2].add(static_cast<double>(projection.particles));

  const auto totals = allreduce_sum(comm, sums);
  const auto countTotals = allreduce_sum(comm, counts);
  std::vector<double> maxima(report.localSeconds.begin(), report.localSeconds.end());
  maxima.push_back(migrationSeconds);
  maxima.push_back(stepSeconds);
  maxima.push_back(static_cast<double>(traffic[static_cast<std::size_t>(Phase::Interpolation)].bytes));
  maxima.push_back(static_cast<double>(dem_.particles().size()));
  maxima.push_back(divergence);
  const auto maxTotals = allreduce_max(comm, maxima);
  comm.barrier();

  for (int i = 0; i < kPhaseCount; ++i) {
    report.maxSeconds[static_cast<std::size_t>(i)] = maxTotals[static_cast<std::size_t>(i)];
    report.traffic[static_cast<std::size_t>(i)] = {
        static_cast<std::uint64_t>(countTotals[static_cast<std::size_t>(2 * i)]),
        static_cast<std::uint64_t>(countTotals[static_cast<std::size_t>(2 * i + 1)])};
  }
  report.maxMigrationSeconds = maxTotals[kPhaseCount];
  report.maxStepSeconds = maxTotals[kPhaseCount + 1];
  report.maxRankInterpolationBytes = static_cast<std::uint64_t>(maxTotals[kPhaseCount + 2]);
  report.maxRankParticles = static_cast<std::uint64_t>(maxTotals[kPhaseCount + 3]);
  const double speedOverH = report.cfd.cfl / dt;
  report.maxDivergence = speedOverH > 0.0 ? maxTotals[kPhaseCount + 4] / speedOverH : maxTotals[kPhaseCount + 4];

  report.particleCount = static_cast<std::uint64_t>(countTotals[2 * kPhaseCount]);
  report.flooredCells = static_cast<std::uint64_t>(countTotals[2 * kPhaseCount + 1]);
  report.dragForce = {totals[0], totals[1], totals[2]};
  report.fluidReaction = {totals[3], totals[4], totals[5]};
  const Vec3 imbalance = report.dragForce + report.fluidReaction;
  report.actionReaction = totals[6] > 0.0 ? norm(imbalance) / totals[6] : 0.0;
  report.fineSolidVolume = totals[7];
  report.heavyVolume = totals[8];
  report.coarseSolidVolume = totals[9];
  report.particleVolume = totals[10];
  report.kineticEnergy = totals[11];

  ++step_;
  time_ = step_ * dt;
  report.time = time_;
  return report;
}

}  // namespace dgm
