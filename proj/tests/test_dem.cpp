#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dgm/dem.hpp"
#include "dgm/error.hpp"

using namespace dgm;

namespace {

std::shared_ptr<const PartitionMap> box_map(const std::array<int, 3>& dims, double h, int P) {
  UniformGrid g({0, 0, 0}, {h, h, h}, dims);
  return std::make_shared<const PartitionMap>(colocate_partition(g, P));
}

DemConfig free_config(double k = 1000.0, double e = 0.9, double mu = 0.3) {
  DemConfig c;
  c.contact = {k, e, mu};
  c.outside = OutsidePolicy::Error;
  return c;
}

// Restitution of the linear spring-dashpot by direct RK4 integration of
// m x'' = -k x - c x' from the moment of contact until the force vanishes.
double oscillator_restitution(double meff, double k, double e) {
  const double l = std::log(e);
  const double zeta = -l / std::sqrt(std::numbers::pi * std::numbers::pi + l * l);
  const double c = 2 * zeta * std::sqrt(k * meff);
  double x = 0, v = 1;
  const double h = std::sqrt(meff / k) * 1e-5;
  auto acc = [&](double xx, double vv) { return (-k * xx - c * vv) / meff; };
  do {
    const double k1x = v, k1v = acc(x, v);
    const double k2x = v + 0.5 * h * k1v, k2v = acc(x + 0.5 * h * k1x, v + 0.5 * h * k1v);
    const double k3x = v + 0.5 * h * k2v, k3v = acc(x + 0.5 * h * k2x, v + 0.5 * h * k2v);
    const double k4x = v + h * k3v, k4v = acc(x + h * k3x, v + h * k3v);
    x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
    v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
  } while (x > 0);
  return -v;
}

double kinetic_energy(const std::vector<Particle>& ps) {
  double e = 0;
  for (const auto& p : ps) e += 0.5 * p.mass * dot(p.u, p.u) + 0.5 * p.inertia * dot(p.omega, p.omega);
  return e;
}

}  // namespace

TEST_CASE("particle mass and inertia") {
  auto p = make_particle(1, {}, {}, 0.01, 2500);
  CHECK(p.mass == doctest::Approx(2500 * 4.0 / 3.0 * std::numbers::pi * 1e-6));
  CHECK(p.inertia == doctest::Approx(0.4 * p.mass * 1e-4));
  CHECK_THROWS_AS(make_particle(2, {}, {}, 0.0, 1000), ConfigError);
}

TEST_CASE("contact force: separated pair, Hooke law and third law") {
  ContactParams elastic{1000.0, 1.0, 0.3};
  auto a = make_particle(1, {0, 0, 0}, {}, 0.01, 2500);
  auto b = make_particle(2, {0.03, 0, 0}, {}, 0.01, 2500);
  auto none = contact_force(a, b, elastic);
  CHECK_FALSE(none.touching);
  CHECK(none.force == Vec3{});
  b.x = {0.02 - 1e-4, 0, 0};
  auto c = contact_force(a, b, elastic);
  CHECK(c.touching);
  CHECK(c.force.x == doctest::Approx(-0.1).epsilon(1e-9));
  CHECK(c.force.y == 0.0);
  b.x = a.x;
  CHECK_THROWS_AS(contact_force(a, b, elastic), PhysicsError);
}

TEST_CASE("pair forces cancel exactly for random contacts") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(-1, 1);
  ContactParams params{1000.0, 0.7, 0.4};
  for (int trial = 0; trial < 500; ++trial) {
    auto a = make_particle(static_cast<std::uint64_t>(2 * trial), {U(rng) * 1e-3, U(rng) * 1e-3, U(rng) * 1e-3},
                           {U(rng), U(rng), U(rng)}, 0.002 + 0.001 * U(rng), 2500);
    auto b = make_particle(static_cast<std::uint64_t>(2 * trial + 1), {0.003, U(rng) * 1e-3, 0}, {U(rng), 0, U(rng)},
                           0.002, 1000);
    a.omega = {U(rng) * 50, U(rng) * 50, U(rng) * 50};
    b.omega = {U(rng) * 50, U(rng) * 50, U(rng) * 50};
    auto fa = contact_force(a, b, params);
    auto fb = contact_force(b, a, params);
    REQUIRE(fa.touching == fb.touching);
    for (int ax = 0; ax < 3; ++ax) CHECK(std::abs(fa.force[ax] + fb.force[ax]) <= 1e-12);
    // Coulomb cap on the tangential part.
    const Vec3 n = (b.x - a.x) / norm(b.x - a.x);
    const Vec3 fn = dot(fa.force, n) * n;
    CHECK(norm(fa.force - fn) <= params.friction * norm(fn) * (1 + 1e-12) + 1e-15);
  }
}

TEST_CASE("head-on impact restitution matches the dashpot oracle") {
  for (double e : {0.9, 0.5}) {
    auto map = box_map({4, 4, 4}, 0.01, 1);
    auto cfg = free_config(1000.0, e, 0.3);
    const double v = 0.5;
    auto a = make_particle(1, {0.015, 0.02, 0.02}, {v / 2, 0, 0}, 0.002, 2500);
    auto b = make_particle(2, {0.025, 0.02, 0.02}, {-v / 2, 0, 0}, 0.002, 2500);
    const double dt = max_stable_timestep(a.mass, 1000.0) / 10;
    run_ranks(1, Backend::Deterministic, [&](Communicator& comm) {
      DemDomain dem(map, 0, cfg);
      std::vector<Particle> ps{a, b};
      dem.add_particles(ps);
      dem.check_setup(dt, comm);
      for (int s = 0; s < 200000; ++s) {
        dem.step(dt, comm);
        const auto& q = dem.particles();
        if (norm(q[1].x - q[0].x) > 0.0045 && q[1].u.x > q[0].u.x) break;
      }
      const auto& q = dem.particles();
      const double ratio = (q[1].u.x - q[0].u.x) / v;
      const double oracle = oscillator_restitution(a.mass / 2, 1000.0, e);
      CHECK(oracle == doctest::Approx(e).epsilon(1e-4));
      CHECK(std::abs(ratio - e) <= 0.02 * e);
      // Energy went down, momentum stayed.
      CHECK(kinetic_energy(q) < 0.5 * a.mass * v * v);
      CHECK(std::abs(q[0].u.x + q[1].u.x) <= 1e-12);
    });
  }
}

TEST_CASE("ball bouncing on a wall rebounds with the restitution coefficient") {
  auto map = box_map({2, 2, 2}, 0.01, 1);
  auto cfg = free_config(1000.0, 0.9, 0.3);
  cfg.wallFaces[static_cast<int>(Face::ZMinus)] = true;
  auto p = make_particle(1, {0.01, 0.01, 0.003}, {0, 0, -0.4}, 0.002, 2500);
  const double dt = max_stable_timestep(p.mass, 1000.0) / 10;
  run_ranks(1, Backend::Deterministic, [&](Communicator& comm) {
    DemDomain dem(map, 0, cfg);
    dem.add_particles(std::span<const Particle>(&p, 1));
    for (int s = 0; s < 100000; ++s) {
      dem.step(dt, comm);
      const auto& q = dem.particles()[0];
      if (q.u.z > 0 && q.x.z > 0.0025) break;
    }
    const double ratio = dem.particles()[0].u.z / 0.4;
    CHECK(std::abs(ratio - 0.9) <= 0.02 * 0.9);
  });
}

TEST_CASE("free flight and constant gravity are integrated exactly") {
  auto map = box_map({10, 10, 10}, 1.0, 1);
  auto cfg = free_config();
  run_ranks(1, Backend::Deterministic, [&](Communicator& comm) {
    DemDomain dem(map, 0, cfg);
    auto p = make_particle(1, {1, 5, 5}, {1, 0, 0}, 0.1, 1000);
    dem.add_particles(std::span<const Particle>(&p, 1));
    dem.step(0.1, comm);
    CHECK(dem.particles()[0].x.x == doctest::Approx(1.1).epsilon(1e-15));
  });
  cfg.gravity = {0, 0, -9.81};
  run_ranks(1, Backend::Deterministic, [&](Communicator& comm) {
    DemDomain dem(map, 0, cfg);
    auto p = make_particle(1, {5, 5, 9}, {}, 0.1, 1000);
    dem.add_particles(std::span<const Particle>(&p, 1));
    const double dt = 1e-3;
    for (int s = 0; s < 1000; ++s) dem.step(dt, comm);
    const auto& q = dem.particles()[0];
    CHECK(std::abs(q.u.z - (-9.81)) <= 1e-12 * 9.81);
    CHECK(q.x.z == doctest::Approx(9 - 0.5 * 9.81).epsilon(1e-9));
    CHECK(std::abs(q.orientation.norm() - 1.0) <= 1e-12);
  });
}

TEST_CASE("drag force: zero slip and constant beta") {
  auto p = make_particle(1, {}, {0.3, 0, 0}, 0.001, 2500);
  DragParams df{DragModel::DiFelice, 0};
  CHECK(drag_force(p, p.u, 0.6, 1000, 1e-3, df) == Vec3{});
  DragParams constant{DragModel::Constant, 2.0};
  p.u = {};
  auto f = drag_force(p, {1, 0, 0}, 1.0, 1000, 1e-3, constant);
  CHECK(f == Vec3{2, 0, 0});
  CHECK_THROWS_AS(drag_force(p, {1, 0, 0}, 0.0, 1000, 1e-3, df), PhysicsError);
}

TEST_CASE("Di Felice drag reduces to its low and high Reynolds limits") {
  const double r = 1e-3, mu = 1e-3, rho = 1000;
  auto p = make_particle(1, {}, {}, r, 2500);
  DragParams df{DragModel::DiFelice, 0};
  // Creeping flow: beta -> 0.5 * 4.8^2 * mu / (rho d) * rho * pi r^2.
  const double stokesLike = 0.5 * 4.8 * 4.8 * mu / (2 * r) * std::numbers::pi * r * r;
  CHECK(drag_coefficient(p, {1e-12, 0, 0}, 1.0, rho, mu, df) == doctest::Approx(stokesLike).epsilon(1e-4));
  // Porosity correction at zero slip: eps^(2 - 3.7) times the 1/eps from the viscous term.
  CHECK(drag_coefficient(p, {}, 0.5, rho, mu, df) == doctest::Approx(stokesLike * std::pow(0.5, 1 - 3.7)));
  // Large slip: C_D -> 0.63^2, chi -> 3.7 again.
  const double s = 1e4;
  const double re = rho * s * 2 * r / mu;
  const double cd = std::pow(0.63 + 4.8 / std::sqrt(re), 2);
  const double chi = 3.7 - 0.65 * std::exp(-0.5 * std::pow(1.5 - std::log10(re), 2));
  CHECK(drag_coefficient(p, {s, 0, 0}, 1.0, rho, mu, df) ==
        doctest::Approx(0.5 * cd * s * rho * std::numbers::pi * r * r * std::pow(1.0, 2 - chi)));
}

TEST_CASE("constant-beta relaxation follows the exponential solution") {
  auto map = box_map({40, 4, 4}, 1.0, 1);
  auto cfg = free_config();
  run_ranks(1, Backend::Deterministic, [&](Communicator& comm) {
    DemDomain dem(map, 0, cfg);
    auto p = make_particle(1, {0.5, 2, 2}, {}, 0.01, 2500);
    const double beta = 1e-3;
    p.beta = beta;
    p.fluidVelocity = {1.0, 0, 0};
    dem.add_particles(std::span<const Particle>(&p, 1));
    const double tau = p.mass / beta;
    const int steps = 1000;
    const double dt = tau / steps;
    for (int s = 0; s < steps; ++s) dem.step(dt, comm);
    const double expected = 1.0 - std::exp(-1.0);
    CHECK(std::abs(dem.particles()[0].u.x - expected) <= 1e-6 * expected);
  });
}

TEST_CASE("stability bound and ghost-layer width are enforced") {
  auto cfg = free_config();
  auto p = make_particle(1, {0.5, 0.5, 0.5}, {}, 0.01, 2500);
  run_ranks(1, Backend::Deterministic, [&](Communicator& comm) {
    DemDomain dem(box_map({4, 4, 4}, 1.0, 1), 0, cfg);
    dem.add_particles(std::span<const Particle>(&p, 1));
    const double bound = max_stable_timestep(p.mass, 1000.0);
    CHECK_NOTHROW(dem.check_setup(bound, comm));
    try {
      dem.check_setup(bound * 1.01, comm);
      FAIL("expected a configuration error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("stability bound") != std::string::npos);
    }
    DemDomain tight(box_map({4, 4, 4}, 0.015, 1), 0, cfg);
    auto q = make_particle(1, {0.03, 0.03, 0.03}, {}, 0.01, 2500);
    tight.add_particles(std::span<const Particle>(&q, 1));
    CHECK_THROWS_AS(tight.check_setup(1e-6, comm), ConfigError);
  });
}

TEST_CASE("outside policies") {
  auto map = box_map({2, 2, 2}, 1.0, 1);
  for (auto policy : {OutsidePolicy::Reflect, OutsidePolicy::Delete, OutsidePolicy::Error}) {
    auto cfg = free_config();
    cfg.outside = policy;
    auto body = [&](Communicator& comm) {
      DemDomain dem(map, 0, cfg);
      auto p = make_particle(1, {1.95, 1, 1}, {1, 0, 0}, 0.01, 1000);
      dem.add_particles(std::span<const Particle>(&p, 1));
      dem.step(0.1, comm);
      if (policy == OutsidePolicy::Reflect) {
        REQUIRE(dem.particles().size() == 1);
        CHECK(dem.particles()[0].x.x == doctest::Approx(1.95));
        CHECK(dem.particles()[0].u.x == -1.0);
      } else {
        CHECK(dem.particles().empty());
        CHECK(dem.counters().deleted == 1);
      }
    };
    if (policy == OutsidePolicy::Error)
      CHECK_THROWS_AS(run_ranks(1, Backend::Deterministic, body), PhysicsError);
    else
      run_ranks(1, Backend::Deterministic, body);
  }
}

TEST_CASE("a particle crossing a rank boundary migrates once") {
  auto map = box_map({4, 1, 1}, 1.0, 2);
  auto cfg = free_config();
  std::vector<std::vector<std::uint64_t>> seen(2);
  run_ranks(2, Backend::Deterministic, [&](Communicator& comm) {
    DemDomain dem(map, comm.rank(), cfg);
    auto p = make_particle(7, {1.9, 0.5, 0.5}, {1, 0, 0}, 0.01, 1000);
    dem.add_particles(std::span<const Particle>(&p, 1));
    CHECK(dem.particles().size() == (comm.rank() == 0 ? 1u : 0u));
    dem.step(0.2, comm);
    CHECK(dem.particles().size() == (comm.rank() == 1 ? 1u : 0u));
    if (comm.rank() == 1) CHECK(dem.particles()[0].x.x == doctest::Approx(2.1));
    CHECK(dem.counters().migratedOut == (comm.rank() == 0 ? 1u : 0u));
  });
}

TEST_CASE("random cloud: every rank count reproduces the sequential run bitwise") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> X(0.005, 0.075), V(-0.3, 0.3);
  std::vector<Particle> cloud;
  for (std::uint64_t id = 0; cloud.size() < 300; ++id) {
    auto p = make_particle(id, {X(rng), X(rng), X(rng)}, {V(rng), V(rng), V(rng)}, 0.002, 2500);
    bool free = true;
    for (const auto& q : cloud) free = free && norm(q.x - p.x) > 0.0041;
    if (free) cloud.push_back(p);
  }
  auto cfg = free_config(1000, 0.8, 0.3);
  cfg.gravity = {0, 0, -9.81};
  cfg.wallFaces.fill(true);
  cfg.outside = OutsidePolicy::Reflect;
  const double dt = 2e-5;

  auto run = [&](int P, Backend backend) {
    std::vector<Particle> out;
    double momentumBefore = 0;
    run_ranks(P, backend, [&](Communicator& comm) {
      DemDomain dem(box_map({8, 8, 8}, 0.01, P), comm.rank(), cfg);
      dem.add_particles(cloud);
      dem.exchange(comm);
      dem.compute_contact_forces();
      dem.check_setup(dt, comm);
      for (int s = 0; s < 300; ++s) dem.step(dt, comm);
      auto all = gather_particles(dem, comm);
      if (all) out = std::move(*all);
    });
    (void)momentumBefore;
    return out;
  };
  const auto reference = run(1, Backend::Deterministic);
  REQUIRE(reference.size() == cloud.size());
  for (int P : {2, 4, 8}) {
    for (auto backend : {Backend::Deterministic, Backend::Threads}) {
      const auto out = run(P, backend);
      REQUIRE(out.size() == reference.size());
      for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i].id == reference[i].id);
        CHECK(out[i].x == reference[i].x);
        CHECK(out[i].u == reference[i].u);
        CHECK(out[i].omega == reference[i].omega);
      }
    }
  }
}

TEST_CASE("migration conserves particle count and momentum without walls or gravity") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> X(0.1, 0.7), V(-1, 1);
  std::vector<Particle> cloud;
  for (std::uint64_t id = 0; id < 50; ++id)
    cloud.push_back(make_particle(id, {X(rng), X(rng), X(rng)}, {V(rng), V(rng), V(rng)}, 0.001, 2500));
  Vec3 before;
  for (const auto& p : cloud) before += p.mass * p.u;
  std::vector<Particle> after;
  run_ranks(4, Backend::Deterministic, [&](Communicator& comm) {
    DemDomain dem(box_map({8, 8, 8}, 0.1, 4), comm.rank(), free_config());
    dem.add_particles(cloud);
    for (int s = 0; s < 20; ++s) dem.step(0.005, comm);
    auto all = gather_particles(dem, comm);
    if (all) after = *all;
  });
  REQUIRE(after.size() == cloud.size());
  Vec3 m;
  for (const auto& p : after) m += p.mass * p.u;
  for (int a = 0; a < 3; ++a) CHECK(std::abs(m[a] - before[a]) <= 1e-12 * norm(before));
}

TEST_CASE("oblique contacts never create energy") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> U(-1, 1);
  auto map = box_map({4, 4, 4}, 0.01, 1);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = make_particle(1, {0.015, 0.02, 0.02}, {0.3, 0.05 * U(rng), 0.05 * U(rng)}, 0.002, 2500);
    auto b = make_particle(2, {0.025, 0.02 + 0.002 * U(rng), 0.02 + 0.002 * U(rng)}, {-0.3, 0, 0}, 0.002, 2500);
    a.omega = {40 * U(rng), 40 * U(rng), 40 * U(rng)};
    const double dt = max_stable_timestep(a.mass, 1000.0) / 20;
    run_ranks(1, Backend::Deterministic, [&](Communicator& comm) {
      DemDomain dem(map, 0, free_config(1000, 0.8, 0.5));
      std::vector<Particle> ps{a, b};
      dem.add_particles(ps);
      const double before = kinetic_energy(dem.particles());
      for (int s = 0; s < 20000; ++s) dem.step(dt, comm);
      const auto& q = dem.particles();
      CHECK(norm(q[1].x - q[0].x) > q[0].radius + q[1].radius);
      CHECK(kinetic_energy(q) <= before);
    });
  }
}
