#include "dgm/dem.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

#include "dgm/collectives.hpp"
#include "dgm/error.hpp"
#include "dgm/tags.hpp"

namespace dgm {

namespace {

struct PairContact {
  Vec3 forceOnA;
  Vec3 torqueA;
  Vec3 torqueB;
  bool touching = false;
};

// Shared by particle-particle and particle-wall contacts. n points from the
// first body towards the second; leverA/leverB are the distances from the
// centres to the contact point.
PairContact dashpot(const Vec3& n, double overlap, double meff, const Vec3& uA, const Vec3& omegaA, double leverA,
                    const Vec3& uB, const Vec3& omegaB, double leverB, const ContactParams& params) {
  const double c = 2.0 * params.damping_ratio() * std::sqrt(params.k * meff);
  const Vec3 vA = uA + cross(omegaA, leverA * n);
  const Vec3 vB = uB + cross(omegaB, -leverB * n);
  const Vec3 vrel = vA - vB;
  const double vn = dot(vrel, n);
  const double fn = params.k * overlap + c * vn;
  Vec3 ft = -c * (vrel - vn * n);
  const double cap = params.friction * std::abs(fn);
  const double ftMag = norm(ft);
  if (ftMag > cap) ft *= (ftMag > 0.0 ? cap / ftMag : 0.0);
  PairContact out;
  out.touching = true;
  out.forceOnA = -fn * n + ft;
  out.torqueA = leverA * cross(n, ft);
  out.torqueB = leverB * cross(n, ft);
  return out;
}

// Evaluated with the lower id first so both owners of a cross-rank pair get the same bits.
PairContact pair_contact(const Particle& a, const Particle& b, const ContactParams& params) {
  const Vec3 d = b.x - a.x;
  const double reach = a.radius + b.radius;
  const double d2 = dot(d, d);
  if (d2 >= reach * reach) return {};
  const double dist = std::sqrt(d2);
  const double overlap = reach - dist;
  if (dist <= 0.0 || overlap >= reach) {
    std::ostringstream msg;
    msg << "particles " << a.id << " and " << b.id << " have coincident centres";
    throw PhysicsError(msg.str());
  }
  const Vec3 n = d / dist;
  const double meff = a.mass * b.mass / (a.mass + b.mass);
  return dashpot(n, overlap, meff, a.u, a.omega, a.radius - 0.5 * overlap, b.u, b.omega, b.radius - 0.5 * overlap,
                 params);
}

constexpr std::size_t kParticleBytes = 8 + 8 * (3 * 3 + 4 + 4 + 6 + 1 + 3 + 3);

}  // namespace

Particle make_particle(std::uint64_t id, const Vec3& x, const Vec3& u, double radius, double density) {
  if (!(radius > 0.0) || !(density > 0.0))
    throw ConfigError("particle " + std::to_string(id) + ": radius and density must be positive");
  Particle p;
  p.id = id;
  p.x = x;
  p.u = u;
  p.radius = radius;
  p.density = density;
  p.mass = density * 4.0 / 3.0 * std::numbers::pi * radius * radius * radius;
  p.inertia = 0.4 * p.mass * radius * radius;
  return p;
}

void ContactParams::validate() const {
  if (!(k > 0.0)) throw ConfigError("contact spring constant must be positive");
  if (!(restitution > 0.0 && restitution <= 1.0)) throw ConfigError("restitution must lie in (0, 1]");
  if (!(friction >= 0.0)) throw ConfigError("friction coefficient must be non-negative");
}

double ContactParams::damping_ratio() const {
  const double l = std::log(restitution);
  return -l / std::sqrt(std::numbers::pi * std::numbers::pi + l * l);
}

ContactResult contact_force(const Particle& pi, const Particle& pj, const ContactParams& params) {
  if (pi.id <= pj.id) {
    const auto c = pair_contact(pi, pj, params);
    return {c.forceOnA, c.torqueA, c.touching};
  }
  const auto c = pair_contact(pj, pi, params);
  return {-c.forceOnA, c.torqueB, c.touching};
}

ContactResult wall_contact_force(const Particle& p, const Wall& wall, const ContactParams& params) {
  const double dist = wall.lower ? p.x[wall.axis] - wall.position : wall.position - p.x[wall.axis];
  const double overlap = p.radius - dist;
  if (overlap <= 0.0) return {};
  if (dist <= 0.0) {
    std::ostringstream msg;
    msg << "particle " << p.id << " centre crossed the wall at axis " << wall.axis << " position " << wall.position;
    throw PhysicsError(msg.str());
  }
  Vec3 n;
  n[wall.axis] = wall.lower ? -1.0 : 1.0;
  const auto c = dashpot(n, overlap, p.mass, p.u, p.omega, p.radius - 0.5 * overlap, {}, {}, 0.0, params);
  return {c.forceOnA, c.torqueA, true};
}

DragModel parse_drag_model(const std::string& name) {
  if (name == "constant") return DragModel::Constant;
  if (name == "di-felice") return DragModel::DiFelice;
  throw ConfigError("unknown drag model '" + name + "' (expected constant|di-felice)");
}

double drag_coefficient(const Particle& p, const Vec3& fluidVelocity, double porosity, double fluidDensity,
                        double fluidViscosity, const DragParams& params) {
  if (!(porosity > 0.0)) {
    std::ostringstream msg;
    msg << "porosity " << porosity << " at particle " << p.id << " is not positive";
    throw PhysicsError(msg.str());
  }
  if (params.model == DragModel::Constant) return params.beta;
  if (!(fluidDensity > 0.0) || !(fluidViscosity > 0.0))
    throw PhysicsError("drag: fluid density and viscosity must be positive");
  const double eps = std::min(porosity, 1.0);
  const double d = 2.0 * p.radius;
  const double slip = norm(fluidVelocity - p.u);
  const double re = fluidDensity * eps * slip * d / fluidViscosity;
  double chi = 3.7;
  if (re > 0.0) {
    const double t = 1.5 - std::log10(re);
    chi = 3.7 - 0.65 * std::exp(-0.5 * t * t);
  }
  // C_D |s| with C_D = (0.63 + 4.8 / sqrt(Re))^2, finite at zero slip.
  const double root = 0.63 * std::sqrt(slip) + 4.8 * std::sqrt(fluidViscosity / (fluidDensity * eps * d));
  const double area = std::numbers::pi * p.radius * p.radius;
  return 0.5 * root * root * fluidDensity * area * std::pow(eps, 2.0 - chi);
}

Vec3 drag_force(const Particle& p, const Vec3& fluidVelocity, double porosity, double fluidDensity,
                double fluidViscosity, const DragParams& params) {
  return drag_coefficient(p, fluidVelocity, porosity, fluidDensity, fluidViscosity, params) * (fluidVelocity - p.u);
}

double max_stable_timestep(double minMass, double k) { return 0.2 * std::sqrt(minMass / k); }

OutsidePolicy parse_outside_policy(const std::string& name) {
  if (name == "reflect") return OutsidePolicy::Reflect;
  if (name == "delete") return OutsidePolicy::Delete;
  if (name == "error") return OutsidePolicy::Error;
  throw ConfigError("unknown outside policy '" + name + "' (expected reflect|delete|error)");
}

void write_particle(ByteWriter& w, const Particle& p) {
  w.put(p.id);
  w.put(p.x);
  w.put(p.u);
  w.put(p.omega);
  w.put(p.orientation.w);
  w.put(p.orientation.x);
  w.put(p.orientation.y);
  w.put(p.orientation.z);
  w.put(p.radius);
  w.put(p.density);
  w.put(p.mass);
  w.put(p.inertia);
  w.put(p.contactForce);
  w.put(p.contactTorque);
  w.put(p.beta);
  w.put(p.fluidVelocity);
  w.put(p.acceleration);
}

Particle read_particle(ByteReader& r) {
  Particle p;
  p.id = r.get<std::uint64_t>();
  p.x = r.get_vec3();
  p.u = r.get_vec3();
  p.omega = r.get_vec3();
  p.orientation.w = r.get<double>();
  p.orientation.x = r.get<double>();
  p.orientation.y = r.get<double>();
  p.orientation.z = r.get<double>();
  p.radius = r.get<double>();
  p.density = r.get<double>();
  p.mass = r.get<double>();
  p.inertia = r.get<double>();
  p.contactForce = r.get_vec3();
  p.contactTorque = r.get_vec3();
  p.beta = r.get<double>();
  p.fluidVelocity = r.get_vec3();
  p.acceleration = r.get_vec3();
  return p;
}

DemDomain::DemDomain(std::shared_ptr<const PartitionMap> coarse, int rank, DemConfig config)
    : map_(std::move(coarse)), rank_(rank), config_(config) {
  config_.contact.validate();
  const auto& g = map_->grid();
  const auto& dims = g.dims();
  for (int f = 0; f < kFaceCount; ++f) {
    if (!config_.wallFaces[static_cast<std::size_t>(f)]) continue;
    const int axis = face_axis(f);
    const bool lower = face_sign(f) < 0;
    walls_.push_back({axis, lower, g.face_coordinate(axis, lower ? 0 : dims[static_cast<std::size_t>(axis)])});
  }

  isNeighbor_.assign(static_cast<std::size_t>(map_->rank_count()), 0);
  ghostTargets_.resize(static_cast<std::size_t>(g.cell_count()));
  std::set<int> nb;
  for (CellId c : map_->cells_of(rank_)) {
    const auto cc = g.coord(c);
    std::set<int> targets;
    for (int dk = -1; dk <= 1; ++dk)
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const CellCoord n{cc.i + di, cc.j + dj, cc.k + dk};
          if (!g.contains(n)) continue;
          const int r = map_->owner(g.index(n));
          if (r != rank_) targets.insert(r);
        }
    ghostTargets_[static_cast<std::size_t>(c)].assign(targets.begin(), targets.end());
    nb.insert(targets.begin(), targets.end());
  }
  neighbors_.assign(nb.begin(), nb.end());
  for (int r : neighbors_) isNeighbor_[static_cast<std::size_t>(r)] = 1;
}

int DemDomain::owner_of(const Vec3& x) const {
  const auto cell = locate_cell(map_->grid(), x);
  if (!cell) {
    std::ostringstream msg;
    msg << "particle position (" << x.x << ", " << x.y << ", " << x.z << ") is outside the DEM domain";
    throw PhysicsError(msg.str());
  }
  return map_->owner(*cell);
}

void DemDomain::apply_outside_policy() {
  const auto& g = map_->grid();
  std::vector<Particle> kept;
  kept.reserve(owned_.size());
  for (auto& p : owned_) {
    bool keep = true;
    for (int a = 0; a < 3 && keep; ++a) {
      const double lo = g.face_coordinate(a, 0);
      const double hi = g.face_coordinate(a, g.dims()[static_cast<std::size_t>(a)]);
      if (p.x[a] >= lo && p.x[a] < hi) continue;
      switch (config_.outside) {
        case OutsidePolicy::Error: {
          std::ostringstream msg;
          msg << "particle " << p.id << " left the domain at (" << p.x.x << ", " << p.x.y << ", " << p.x.z << ")";
          throw PhysicsError(msg.str());
        }
        case OutsidePolicy::Delete:
          keep = false;
          ++counters_.deleted;
          break;
        case OutsidePolicy::Reflect:
          p.x[a] = p.x[a] < lo ? 2.0 * lo - p.x[a] : 2.0 * hi - p.x[a];
          p.x[a] = std::clamp(p.x[a], lo, std::nextafter(hi, lo));
          p.u[a] = -p.u[a];
          ++counters_.reflected;
          break;
      }
    }
    if (keep) kept.push_back(p);
  }
  owned_ = std::move(kept);
}

void DemDomain::add_particles(std::span<const Particle> particles) {
  std::vector<Particle> saved = std::move(owned_);
  owned_.assign(particles.begin(), particles.end());
  apply_outside_policy();
  std::vector<Particle> mine;
  for (const auto& p : owned_)
    if (owner_of(p.x) == rank_) mine.push_back(p);
  saved.insert(saved.end(), mine.begin(), mine.end());
  owned_ = std::move(saved);
  std::sort(owned_.begin(), owned_.end(), [](const Particle& a, const Particle& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < owned_.size(); ++i)
    if (owned_[i].id == owned_[i - 1].id) throw ConfigError("duplicate particle id " + std::to_string(owned_[i].id));
}

void DemDomain::check_setup(double dt, Communicator& comm) const {
  double negMinMass = -std::numeric_limits<double>::infinity();
  double maxRadius = 0.0;
  for (const auto& p : owned_) {
    negMinMass = std::max(negMinMass, -p.mass);
    maxRadius = std::max(maxRadius, p.radius);
  }
  const double values[] = {negMinMass, maxRadius};
  const auto global = allreduce_max(comm, values);
  if (global[1] > 0.0) {
    const double bound = max_stable_timestep(-global[0], config_.contact.k);
    if (dt > bound) {
      std::ostringstream msg;
      msg << "DEM time step " << dt << " s exceeds the stability bound 0.2*sqrt(m_min/k) = " << bound << " s";
      throw ConfigError(msg.str());
    }
    if (map_->grid().min_spacing() < 2.0 * global[1]) {
      std::ostringstream msg;
      msg << "coarse cells (" << map_->grid().min_spacing() << " m) must be at least one particle diameter ("
          << 2.0 * global[1] << " m) wide";
      throw ConfigError(msg.str());
    }
  }
}

void DemDomain::exchange(Communicator& comm) {
  // Migration to neighbour ranks. Every neighbour gets a (possibly empty)
  // message so the receive pattern is static.
  const int P = map_->rank_count();
  if (P > 1) {
    std::vector<std::vector<const Particle*>> out(static_cast<std::size_t>(P));
    std::vector<Particle> stay;
    stay.reserve(owned_.size());
    std::vector<Particle> leaving;
    for (const auto& p : owned_) {
      const int r = owner_of(p.x);
      if (r == rank_) {
        stay.push_back(p);
        continue;
      }
      if (!isNeighbor_[static_cast<std::size_t>(r)]) {
        std::ostringstream msg;
        msg << "particle " << p.id << " jumped from rank " << rank_ << " to non-adjacent rank " << r
            << "; reduce the DEM time step";
        throw PhysicsError(msg.str());
      }
      leaving.push_back(p);
    }
    for (const auto& p : leaving) out[static_cast<std::size_t>(owner_of(p.x))].push_back(&p);
    for (int r : neighbors_) {
      const auto& list = out[static_cast<std::size_t>(r)];
      ByteWriter w(4 + list.size() * kParticleBytes);
      w.put(static_cast<std::uint32_t>(list.size()));
      for (const auto* p : list) write_particle(w, *p);
      counters_.migratedOut += list.size();
      comm.send(r, tags::kMigrate, std::move(w).take());
    }
    for (int r : neighbors_) {
      const Bytes payload = comm.receive(r, tags::kMigrate);
      ByteReader rd(payload);
      const auto n = rd.get<std::uint32_t>();
      for (std::uint32_t i = 0; i < n; ++i) stay.push_back(read_particle(rd));
      counters_.migratedIn += n;
    }
    owned_ = std::move(stay);
  }
  std::sort(owned_.begin(), owned_.end(), [](const Particle& a, const Particle& b) { return a.id < b.id; });

  ghosts_.clear();
  if (P > 1) {
    const auto& g = map_->grid();
    std::vector<ByteWriter> out(static_cast<std::size_t>(P));
    std::vector<std::uint32_t> count(static_cast<std::size_t>(P), 0);
    for (const auto& p : owned_) {
      const auto cell = locate_cell(g, p.x);
      for (int r : ghostTargets_[static_cast<std::size_t>(*cell)]) {
        write_particle(out[static_cast<std::size_t>(r)], p);
        ++count[static_cast<std::size_t>(r)];
      }
    }
    for (int r : neighbors_) {
      ByteWriter w(4 + count[static_cast<std::size_t>(r)] * kParticleBytes);
      w.put(count[static_cast<std::size_t>(r)]);
      Bytes body = std::move(out[static_cast<std::size_t>(r)]).take();
      Bytes msg = std::move(w).take();
      msg.insert(msg.end(), body.begin(), body.end());
      comm.send(r, tags::kGhost, std::move(msg));
    }
    for (int r : neighbors_) {
      const Bytes payload = comm.receive(r, tags::kGhost);
      ByteReader rd(payload);
      const auto n = rd.get<std::uint32_t>();
      for (std::uint32_t i = 0; i < n; ++i) ghosts_.push_back(read_particle(rd));
    }
    std::sort(ghosts_.begin(), ghosts_.end(), [](const Particle& a, const Particle& b) { return a.id < b.id; });
  }
}

void DemDomain::compute_contact_forces() {
  const std::size_t nOwned = owned_.size();
  const std::size_t nAll = nOwned + ghosts_.size();
  auto at = [&](std::size_t i) -> const Particle& { return i < nOwned ? owned_[i] : ghosts_[i - nOwned]; };

  double rmax = 0.0;
  for (std::size_t i = 0; i < nAll; ++i) rmax = std::max(rmax, at(i).radius);
  const double bin = 2.0 * rmax;
  const Vec3 origin = map_->grid().origin();
  auto binOf = [&](const Vec3& x) {
    return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor((x.x - origin.x) / bin)),
                                       static_cast<std::int64_t>(std::floor((x.y - origin.y) / bin)),
                                       static_cast<std::int64_t>(std::floor((x.z - origin.z) / bin))};
  };
  auto keyOf = [](std::int64_t i, std::int64_t j, std::int64_t k) {
    constexpr std::int64_t kOffset = 1 << 20;
    return ((i + kOffset) << 42) | ((j + kOffset) << 21) | (k + kOffset);
  };

  std::vector<std::pair<std::int64_t, std::uint32_t>> sorted(nAll);
  for (std::size_t i = 0; i < nAll; ++i) {
    const auto b = binOf(at(i).x);
    sorted[i] = {keyOf(b[0], b[1], b[2]), static_cast<std::uint32_t>(i)};
  }
  std::sort(sorted.begin(), sorted.end());
  std::unordered_map<std::int64_t, std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t s = 0; s < sorted.size();) {
    std::size_t e = s;
    while (e < sorted.size() && sorted[e].first == sorted[s].first) ++e;
    ranges[sorted[s].first] = {s, e};
    s = e;
  }

  std::vector<std::pair<std::uint64_t, ContactResult>> contacts;
  for (std::size_t i = 0; i < nOwned; ++i) {
    Particle& p = owned_[i];
    contacts.clear();
    if (bin > 0.0) {
      const auto b = binOf(p.x);
      for (std::int64_t dk = -1; dk <= 1; ++dk)
        for (std::int64_t dj = -1; dj <= 1; ++dj)
          for (std::int64_t di = -1; di <= 1; ++di) {
            auto it = ranges.find(keyOf(b[0] + di, b[1] + dj, b[2] + dk));
            if (it == ranges.end()) continue;
            for (std::size_t s = it->second.first; s < it->second.second; ++s) {
              const std::size_t j = sorted[s].second;
              if (j == i) continue;
              const Particle& q = at(j);
              auto c = contact_force(p, q, config_.contact);
              if (c.touching) contacts.emplace_back(q.id, c);
            }
          }
    }
    std::sort(contacts.begin(), contacts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Vec3 f, t;
    for (const auto& [id, c] : contacts) {
      f += c.force;
      t += c.torque;
    }
    for (const auto& w : walls_) {
      const auto c = wall_contact_force(p, w, config_.contact);
      if (!c.touching) continue;
      f += c.force;
      t += c.torque;
    }
    p.contactForce = f;
    p.contactTorque = t;
  }
}

void DemDomain::step(double dt, Communicator& comm) {
  const double h = 0.5 * dt;
  const Vec3 g = config_.gravity;
  for (auto& p : owned_) {
    const Vec3 a = (p.contactForce + p.mass * g + p.beta * (p.fluidVelocity - p.u)) / p.mass;
    p.u += h * a;
    p.omega += (h / p.inertia) * (p.contactTorque + config_.externalMoment);
    p.x += dt * p.u;
    p.orientation = rotate_by(p.orientation, p.omega, dt);
  }
  apply_outside_policy();
  const auto t0 = std::chrono::steady_clock::now();
  exchange(comm);
  exchangeSeconds_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  compute_contact_forces();
  for (auto& p : owned_) {
    // Drag is taken implicitly over the second half step.
    const double s = h / p.mass;
    p.u = (p.u + s * (p.contactForce + p.mass * g + p.beta * p.fluidVelocity)) / (1.0 + s * p.beta);
    p.omega += (h / p.inertia) * (p.contactTorque + config_.externalMoment);
    p.acceleration = (p.contactForce + p.mass * g + p.beta * (p.fluidVelocity - p.u)) / p.mass;
  }
}

std::optional<std::vector<Particle>> gather_particles(const DemDomain& dem, Communicator& comm) {
  ByteWriter w(4 + dem.particles().size() * kParticleBytes);
  w.put(static_cast<std::uint32_t>(dem.particles().size()));
  for (const auto& p : dem.particles()) write_particle(w, p);
  auto all = comm.gather_to_root(std::move(w).take());
  if (!all) return std::nullopt;
  std::vector<Particle> out;
  for (const auto& payload : *all) {
    ByteReader r(payload);
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(read_particle(r));
  }
  std::sort(out.begin(), out.end(), [](const Particle& a, const Particle& b) { return a.id < b.id; });
  return out;
}

}  // namespace dgm
