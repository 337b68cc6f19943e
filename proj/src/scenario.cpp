#include "dgm/scenario.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "dgm/error.hpp"

namespace dgm {

using nlohmann::json;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

/// JSON object view that names the full path of a field in every error.
class Node {
 public:
  Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j_->is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path_ + ": " + what); }
  [[noreturn]] static void fail_at(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_->contains(key); }

  const json& raw(const std::string& key) const {
    if (!has(key)) fail_at(at(key), "missing required field");
    return (*j_)[key];
  }
  Node child(const std::string& key) const { return Node(raw(key), at(key)); }
  std::optional<Node> optional_child(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return child(key);
  }

  double number(const std::string& key) const {
    const auto& v = raw(key);
    if (!v.is_number()) fail_at(at(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail_at(at(key), "expected a finite number");
    return d;
  }
  double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

  int integer(const std::string& key) const {
    const auto& v = raw(key);
    if (!v.is_number_integer()) fail_at(at(key), "expected an integer");
    return v.get<int>();
  }
  int integer(const std::string& key, int fallback) const { return has(key) ? integer(key) : fallback; }

  std::string text(const std::string& key) const {
    const auto& v = raw(key);
    if (!v.is_string()) fail_at(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string text(const std::string& key, const std::string& fallback) const {
    return has(key) ? text(key) : fallback;
  }

  Vec3 vec(const std::string& key) const { return to_vec(raw(key), at(key)); }
  Vec3 vec(const std::string& key, const Vec3& fallback) const { return has(key) ? vec(key) : fallback; }

  static Vec3 to_vec(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3) fail_at(path, "expected an array of 3 numbers");
    Vec3 r;
    for (int a = 0; a < 3; ++a) {
      if (!v[static_cast<std::size_t>(a)].is_number()) fail_at(path, "expected an array of 3 numbers");
      r[a] = v[static_cast<std::size_t>(a)].get<double>();
      if (!std::isfinite(r[a])) fail_at(path, "expected finite numbers");
    }
    return r;
  }

  std::array<int, 3> dims(const std::string& key) const {
    const auto& v = raw(key);
    if (!v.is_array() || v.size() != 3) fail_at(at(key), "expected an array of 3 integers");
    std::array<int, 3> r{};
    for (std::size_t a = 0; a < 3; ++a) {
      if (!v[a].is_number_integer()) fail_at(at(key), "expected an array of 3 integers");
      r[a] = v[a].get<int>();
      if (r[a] < 1) fail_at(at(key), "every entry must be at least 1");
    }
    return r;
  }

  const std::string& path() const { return path_; }
  const json& value() const { return *j_; }

 private:
  const json* j_;
  std::string path_;
};

UniformGrid parse_grid(const Node& n) {
  const Vec3 origin = n.vec("origin", {});
  const auto dims = n.dims("dims");
  Vec3 spacing;
  if (n.has("spacing")) {
    spacing = n.vec("spacing");
  } else {
    const Vec3 size = n.vec("size");
    for (int a = 0; a < 3; ++a) spacing[a] = size[a] / dims[static_cast<std::size_t>(a)];
  }
  for (int a = 0; a < 3; ++a)
    if (!(spacing[a] > 0.0)) Node::fail_at(n.at(n.has("spacing") ? "spacing" : "size"), "must be positive");
  return UniformGrid(origin, spacing, dims);
}

int face_index(const std::string& name, const std::string& path) {
  static const char* names[] = {"x-", "x+", "y-", "y+", "z-", "z+"};
  for (int f = 0; f < kFaceCount; ++f)
    if (name == names[f]) return f;
  Node::fail_at(path, "unknown face '" + name + "' (expected x-, x+, y-, y+, z- or z+)");
}

Box parse_box(const Node& n) {
  Box b{n.vec("lower"), n.vec("upper")};
  for (int a = 0; a < 3; ++a)
    if (!(b.upper[a] > b.lower[a])) Node::fail_at(n.at("upper"), "must exceed lower on every axis");
  return b;
}

/// Uniform doubles in [0, 1) from a 64-bit Mersenne twister, independent of
/// the standard library's distribution implementations.
class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double in(double lo, double hi) { return lo + (hi - lo) * (*this)(); }

 private:
  std::mt19937_64 rng_;
};

struct ParticleTemplate {
  double radius = 0.0;
  double density = 0.0;
  Vec3 velocity;
};

ParticleTemplate parse_template(const Node& n) {
  ParticleTemplate t;
  t.radius = n.has("diameter") ? 0.5 * n.number("diameter") : n.number("radius");
  t.density = n.number("density");
  t.velocity = n.vec("velocity", {});
  if (!(t.radius > 0.0)) n.fail_at(n.at(n.has("diameter") ? "diameter" : "radius"), "must be positive");
  if (!(t.density > 0.0)) n.fail_at(n.at("density"), "must be positive");
  return t;
}

std::vector<Particle> lattice_particles(const Node& n, std::uint64_t firstId) {
  const auto t = parse_template(n);
  const Box box = parse_box(n);
  const double spacing = n.number("spacing", 2.0 * t.radius);
  if (!(spacing >= 2.0 * t.radius)) n.fail_at(n.at("spacing"), "must be at least one particle diameter");
  const double jitter = n.number("jitter", 0.0);
  if (jitter < 0.0 || jitter * spacing > 0.5 * (spacing - 2.0 * t.radius) + 1e-15)
    n.fail_at(n.at("jitter"), "must keep neighbouring particles apart (0 <= jitter <= (spacing - d) / (2 spacing))");
  const int maxCount = n.integer("maxCount", -1);
  Uniform rnd(static_cast<std::uint64_t>(n.integer("seed", 1)));

  std::array<int, 3> count{};
  for (int a = 0; a < 3; ++a) {
    count[static_cast<std::size_t>(a)] = static_cast<int>(std::floor((box.upper[a] - box.lower[a]) / spacing));
    if (count[static_cast<std::size_t>(a)] < 1) n.fail_at(n.at("upper"), "box holds no lattice layer");
  }
  std::vector<Particle> out;
  // Layers fill from the bottom (z), then y, then x.
  for (int k = 0; k < count[2]; ++k)
    for (int j = 0; j < count[1]; ++j)
      for (int i = 0; i < count[0]; ++i) {
        if (maxCount >= 0 && static_cast<int>(out.size()) >= maxCount) return out;
        Vec3 x{box.lower.x + (i + 0.5) * spacing, box.lower.y + (j + 0.5) * spacing,
               box.lower.z + (k + 0.5) * spacing};
        if (jitter > 0.0)
          for (int a = 0; a < 3; ++a) x[a] += jitter * spacing * (2.0 * rnd() - 1.0);
        out.push_back(make_particle(firstId + out.size(), x, t.velocity, t.radius, t.density));
      }
  return out;
}

std::vector<Particle> random_particles(const Node& n, std::uint64_t firstId) {
  const auto t = parse_template(n);
  const Box box = parse_box(n);
  const int count = n.integer("count");
  if (count < 0) n.fail_at(n.at("count"), "must be non-negative");
  const double speed = n.number("speed", 0.0);
  Uniform rnd(static_cast<std::uint64_t>(n.integer("seed", 1)));
  const double r = t.radius;
  for (int a = 0; a < 3; ++a)
    if (box.upper[a] - box.lower[a] <= 2.0 * r) n.fail_at(n.at("upper"), "box is thinner than one particle");

  const double bin = 2.0 * r;
  auto key = [&](const Vec3& x, int di, int dj, int dk) {
    const auto i = static_cast<std::int64_t>(std::floor((x.x - box.lower.x) / bin)) + di;
    const auto j = static_cast<std::int64_t>(std::floor((x.y - box.lower.y) / bin)) + dj;
    const auto k = static_cast<std::int64_t>(std::floor((x.z - box.lower.z) / bin)) + dk;
    return (i * 1000003 + j) * 1000003 + k;
  };
  std::unordered_map<std::int64_t, std::vector<std::size_t>> bins;
  std::vector<Particle> out;
  const long long maxAttempts = 1000LL * count + 1000;
  long long attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > maxAttempts)
      n.fail_at(n.path(), "could not place " + std::to_string(count) + " non-overlapping particles in the box");
    Vec3 x;
    for (int a = 0; a < 3; ++a) x[a] = rnd.in(box.lower[a] + r, box.upper[a] - r);
    bool free = true;
    for (int di = -1; di <= 1 && free; ++di)
      for (int dj = -1; dj <= 1 && free; ++dj)
        for (int dk = -1; dk <= 1 && free; ++dk) {
          auto it = bins.find(key(x, di, dj, dk));
          if (it == bins.end()) continue;
          for (std::size_t o : it->second)
            if (norm(out[o].x - x) <= 2.0 * r) {
              free = false;
              break;
            }
        }
    if (!free) continue;
    Vec3 u = t.velocity;
    for (int a = 0; a < 3; ++a) u[a] += speed * (2.0 * rnd() - 1.0);
    bins[key(x, 0, 0, 0)].push_back(out.size());
    out.push_back(make_particle(firstId + out.size(), x, u, r, t.density));
  }
  return out;
}

std::vector<Particle> list_particles(const Node& n, std::uint64_t firstId) {
  const auto& items = n.raw("items");
  if (!items.is_array()) n.fail_at(n.at("items"), "expected an array");
  std::vector<Particle> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Node p(items[i], n.at("items") + "[" + std::to_string(i) + "]");
    const auto t = parse_template(p);
    const auto id = p.has("id") ? static_cast<std::uint64_t>(p.integer("id")) : firstId + i;
    out.push_back(make_particle(id, p.vec("x"), t.velocity, t.radius, t.density));
  }
  return out;
}

/// One particle per line: id x y z ux uy uz radius density. '#' starts a comment.
std::vector<Particle> file_particles(const Node& n, const std::filesystem::path& baseDir) {
  std::filesystem::path path = n.text("path");
  if (path.is_relative()) path = baseDir / path;
  std::ifstream in(path);
  if (!in) n.fail_at(n.at("path"), "cannot open '" + path.string() + "'");
  std::vector<Particle> out;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream s(line);
    std::uint64_t id;
    Vec3 x, u;
    double r, rho;
    if (!(s >> id)) continue;
    if (!(s >> x.x >> x.y >> x.z >> u.x >> u.y >> u.z >> r >> rho) || !(r > 0.0) || !(rho > 0.0))
      n.fail_at(n.at("path"), path.string() + ":" + std::to_string(lineNo) + ": malformed particle line");
    out.push_back(make_particle(id, x, u, r, rho));
  }
  return out;
}

std::vector<Particle> parse_particles(const json& j, const std::string& path, const std::filesystem::path& baseDir) {
  std::vector<Particle> all;
  auto add_group = [&](const Node& n) {
    const auto generator = n.text("generator");
    const std::uint64_t firstId = all.empty() ? 0 : all.back().id + 1;
    std::vector<Particle> group;
    if (generator == "lattice")
      group = lattice_particles(n, firstId);
    else if (generator == "random")
      group = random_particles(n, firstId);
    else if (generator == "list")
      group = list_particles(n, firstId);
    else if (generator == "file")
      group = file_particles(n, baseDir);
    else
      n.fail_at(n.at("generator"), "unknown generator '" + generator + "' (expected lattice|random|list|file)");
    all.insert(all.end(), group.begin(), group.end());
  };
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) add_group(Node(j[i], path + "[" + std::to_string(i) + "]"));
  } else {
    add_group(Node(j, path));
  }
  std::vector<std::uint64_t> ids;
  for (const auto& p : all) ids.push_back(p.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) Node::fail_at(path, "particle ids are not unique");
  return all;
}

bool inside(const UniformGrid& g, const Vec3& x) { return locate_cell(g, x).has_value(); }

}  // namespace

Scenario parse_scenario(const std::string& jsonText, const std::filesystem::path& baseDir) {
  json doc;
  try {
    doc = json::parse(jsonText);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("scenario: invalid JSON: ") + e.what());
  }
  const Node root(doc, "");
  Scenario s;
  const int version = root.integer("schemaVersion");
  if (version != kScenarioSchemaVersion)
    root.fail_at("schemaVersion", "unsupported version " + std::to_string(version) + " (expected " +
                                      std::to_string(kScenarioSchemaVersion) + ")");
  s.configHash = fnv1a(doc.dump());
  s.name = root.text("name");
  s.description = root.text("description", "");

  const auto grids = root.child("grids");
  s.coarse = parse_grid(grids.child("coarse"));
  s.fine = parse_grid(grids.child("fine"));
  if (grids.has("single")) s.single = parse_grid(grids.child("single"));
  if (auto part = root.optional_child("partition")) {
    const auto w = part->text("fineWeights", "uniform");
    if (w == "uniform")
      s.fineWeights = FineWeights::Uniform;
    else if (w == "particle-histogram")
      s.fineWeights = FineWeights::ParticleHistogram;
    else
      part->fail_at(part->at("fineWeights"), "expected uniform|particle-histogram");
  }

  const auto fluid = root.child("fluid");
  auto& props = s.cfd.props;
  props.rho1 = fluid.number("rho1");
  props.rho2 = fluid.number("rho2", props.rho1);
  props.mu1 = fluid.number("mu1");
  props.mu2 = fluid.number("mu2", props.mu1);
  props.surfaceTension = fluid.number("surfaceTension", 0.0);
  s.cfd.gravity = fluid.vec("gravity", {});
  s.cfd.compression = fluid.number("compression", 1.0);
  s.cfd.maxCfl = fluid.number("maxCfl", 0.5);
  s.cfd.maxDiffusionNumber = fluid.number("maxDiffusionNumber", 0.5);
  s.cfd.solverTolerance = fluid.number("solverTolerance", 1e-8);
  s.cfd.solverMaxIterations = fluid.integer("solverMaxIterations", 2000);
  if (auto bcs = fluid.optional_child("boundaries")) {
    for (const auto& [face, value] : bcs->value().items()) {
      const std::string path = bcs->at(face);
      const int f = face_index(face, path);
      const Node b(value, path);
      auto& bc = s.cfd.boundaries[static_cast<std::size_t>(f)];
      try {
        bc.type = parse_boundary_type(b.text("type"));
      } catch (const ConfigError& e) {
        b.fail_at(b.at("type"), e.what());
      }
      bc.velocity = b.vec("velocity", {});
      bc.alpha = b.number("alpha", 1.0);
      if (bc.type == BoundaryType::Inlet && !b.has("velocity")) b.fail_at(b.at("velocity"), "inlet needs a velocity");
    }
  }
  if (auto init = fluid.optional_child("initial")) {
    s.initialVelocity = init->vec("velocity", {});
    s.initialAlpha = init->number("alpha", 1.0);
    if (init->has("regions")) {
      const auto& regions = init->raw("regions");
      if (!regions.is_array()) init->fail_at(init->at("regions"), "expected an array");
      for (std::size_t i = 0; i < regions.size(); ++i) {
        const Node r(regions[i], init->at("regions") + "[" + std::to_string(i) + "]");
        s.alphaRegions.push_back({parse_box(r), r.number("alpha")});
      }
    }
  }
  try {
    s.cfd.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("fluid: ") + e.what());
  }
  auto check_unit = [&](double a, const std::string& path) {
    if (!(a >= 0.0 && a <= 1.0)) root.fail_at(path, "alpha must lie in [0, 1]");
  };
  check_unit(s.initialAlpha, "fluid.initial.alpha");
  for (const auto& r : s.alphaRegions) check_unit(r.alpha, "fluid.initial.regions");

  const auto dem = root.child("dem");
  s.dem.contact.k = dem.number("k");
  s.dem.contact.restitution = dem.number("restitution");
  s.dem.contact.friction = dem.number("friction", 0.0);
  s.dem.gravity = dem.vec("gravity", s.cfd.gravity);
  s.dem.externalMoment = dem.vec("externalMoment", {});
  try {
    s.dem.contact.validate();
    s.dem.outside = parse_outside_policy(dem.text("outside", "error"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("dem: ") + e.what());
  }
  if (dem.has("walls")) {
    const auto& walls = dem.raw("walls");
    if (!walls.is_array()) dem.fail_at(dem.at("walls"), "expected an array of face names");
    for (const auto& w : walls) {
      if (!w.is_string()) dem.fail_at(dem.at("walls"), "expected an array of face names");
      s.dem.wallFaces[static_cast<std::size_t>(face_index(w.get<std::string>(), dem.at("walls")))] = true;
    }
  }

  const auto coupling = root.child("coupling");
  s.schedule.dt = coupling.number("dt");
  s.schedule.demSubsteps = coupling.integer("demSubsteps", 10);
  s.epsMin = coupling.number("epsMin", 0.05);
  if (coupling.has("steps")) {
    s.steps = coupling.integer("steps");
  } else {
    const double end = coupling.number("endTime");
    s.steps = static_cast<int>(std::llround(end / s.schedule.dt));
  }
  if (s.steps < 1) coupling.fail_at(coupling.at("steps"), "must be at least 1");
  try {
    s.schedule.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("coupling: ") + e.what());
  }
  if (!(s.epsMin > 0.0 && s.epsMin < 1.0)) coupling.fail_at(coupling.at("epsMin"), "must lie in (0, 1)");
  if (auto drag = coupling.optional_child("drag")) {
    try {
      s.drag.model = parse_drag_model(drag->text("model", "di-felice"));
    } catch (const ConfigError& e) {
      drag->fail_at(drag->at("model"), e.what());
    }
    s.drag.beta = drag->number("beta", 0.0);
    if (s.drag.model == DragModel::Constant && !(s.drag.beta >= 0.0))
      drag->fail_at(drag->at("beta"), "must be non-negative");
  }
  try {
    s.strategy = parse_strategy(coupling.text("strategy", "distributed"));
    s.mode = parse_mode(coupling.text("mode", "multiscale"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("coupling: ") + e.what());
  }

  if (root.has("particles")) s.particles = parse_particles(root.raw("particles"), "particles", baseDir);
  for (const auto& p : s.particles) {
    if (!inside(s.coarse, p.x) || !inside(s.fine, p.x)) {
      std::ostringstream msg;
      msg << "particle " << p.id << " at (" << p.x.x << ", " << p.x.y << ", " << p.x.z << ") lies outside the grids";
      root.fail_at("particles", msg.str());
    }
  }

  if (auto out = root.optional_child("output")) {
    s.snapshotEvery = out->integer("snapshotEvery", 0);
    if (s.snapshotEvery < 0) out->fail_at(out->at("snapshotEvery"), "must be non-negative");
    if (out->has("fluidProbes")) {
      const auto& probes = out->raw("fluidProbes");
      if (!probes.is_array()) out->fail_at(out->at("fluidProbes"), "expected an array");
      for (std::size_t i = 0; i < probes.size(); ++i) {
        const Node p(probes[i], out->at("fluidProbes") + "[" + std::to_string(i) + "]");
        FluidProbe probe{p.text("name"), p.vec("position")};
        if (!inside(s.fine, probe.position)) p.fail_at(p.at("position"), "outside the fine grid");
        s.fluidProbes.push_back(probe);
      }
    }
    if (out->has("particleProbes")) {
      const auto& pp = out->raw("particleProbes");
      if (pp.is_string() && pp.get<std::string>() == "all") {
        s.probeAllParticles = true;
      } else if (pp.is_array()) {
        s.probeAllParticles = false;
        for (const auto& id : pp) {
          if (!id.is_number_integer()) out->fail_at(out->at("particleProbes"), "expected \"all\" or an array of ids");
          s.probeParticles.push_back(id.get<std::uint64_t>());
        }
      } else {
        out->fail_at(out->at("particleProbes"), "expected \"all\" or an array of ids");
      }
    }
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open scenario file '" + file.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario(buffer.str(), file.parent_path());
}

CouplingSetup make_coupling_setup(const Scenario& scenario, CouplingMode mode, Strategy strategy, int rankCount) {
  CouplingSetup setup;
  setup.mode = mode;
  setup.strategy = strategy;
  setup.schedule = scenario.schedule;
  setup.drag = scenario.drag;
  setup.epsMin = scenario.epsMin;
  setup.cfd = scenario.cfd;
  setup.dem = scenario.dem;
  if (mode == CouplingMode::Monoscale) {
    const UniformGrid grid = scenario.single.value_or(scenario.fine);
    setup.coarseMap = std::make_shared<const PartitionMap>(colocate_partition(grid, rankCount));
    setup.fineMap = setup.coarseMap;
  } else {
    setup.coarseMap = std::make_shared<const PartitionMap>(colocate_partition(scenario.coarse, rankCount));
    LoadWeights weights = LoadWeights::uniform(scenario.fine);
    if (scenario.fineWeights == FineWeights::ParticleHistogram && !scenario.particles.empty()) {
      std::vector<Vec3> points;
      for (const auto& p : scenario.particles) points.push_back(p.x);
      weights = LoadWeights::histogram(scenario.fine, points);
    }
    setup.fineMap = std::make_shared<const PartitionMap>(rcb_partition(scenario.fine, weights, rankCount));
    prepare_comm_matrices(setup);
  }
  setup.validate();
  return setup;
}

void apply_initial_fluid(const Scenario& scenario, FluidState& fluid) {
  const auto& sub = *fluid.sub;
  const auto& grid = sub.grid();
  for (int l = 0; l < sub.local_count(); ++l) {
    const Box cell = grid.cell_box(sub.global_id(l));
    double alpha = scenario.initialAlpha;
    for (const auto& r : scenario.alphaRegions) {
      double fraction = 1.0;
      for (int a = 0; a < 3; ++a) {
        const double lo = std::max(cell.lower[a], r.box.lower[a]);
        const double hi = std::min(cell.upper[a], r.box.upper[a]);
        fraction *= std::max(0.0, hi - lo) / (cell.upper[a] - cell.lower[a]);
      }
      alpha = alpha * (1.0 - fraction) + r.alpha * fraction;
    }
    fluid.alpha(l) = alpha;
    fluid.u.set_vec(l, scenario.initialVelocity);
  }
}

}  // namespace dgm
