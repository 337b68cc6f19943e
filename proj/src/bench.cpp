#include "dgm/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dgm/error.hpp"

#ifndef DGM_VERSION
#define DGM_VERSION "unknown"
#endif

namespace dgm {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_snapshot(const fs::path& file, const Snapshot& s) {
  ByteWriter w(96 + s.values.size() * 8);
  w.put(std::uint32_t{1});
  for (int d : s.dims) w.put(static_cast<std::int32_t>(d));
  w.put(s.origin);
  w.put(s.spacing);
  w.put(static_cast<std::int32_t>(s.step));
  w.put(s.time);
  w.put(static_cast<std::int32_t>(s.components));
  w.put(static_cast<std::uint64_t>(s.values.size()));
  w.put_doubles(s.values);
  const Bytes bytes = std::move(w).take();
  std::ofstream out(file, std::ios::binary);
  out.write("DGMF", 4);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("cannot write snapshot '" + file.string() + "'");
}

Snapshot read_snapshot(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open snapshot '" + file.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < 4 || std::string(raw.data(), 4) != "DGMF") throw ConfigError("'" + file.string() + "' is not a snapshot");
  ByteReader r(std::span(reinterpret_cast<const std::byte*>(raw.data()) + 4, raw.size() - 4));
  Snapshot s;
  try {
    if (r.get<std::uint32_t>() != 1) throw ConfigError("'" + file.string() + "': unsupported snapshot version");
    for (int& d : s.dims) d = r.get<std::int32_t>();
    s.origin = r.get_vec3();
    s.spacing = r.get_vec3();
    s.step = r.get<std::int32_t>();
    s.time = r.get<double>();
    s.components = r.get<std::int32_t>();
    s.values.resize(r.get<std::uint64_t>());
    r.get_doubles(s.values);
  } catch (const std::out_of_range&) {
    throw ConfigError("'" + file.string() + "': truncated snapshot");
  }
  return s;
}

namespace {

using Clock = std::chrono::steady_clock;

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

std::ofstream open_csv(const fs::path& file, const std::string& header) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write '" + file.string() + "'");
  out << header << '\n';
  return out;
}

/// Writes one CSV row from mixed values.
class Row {
 public:
  Row& operator<<(double v) { return add(format_double(v)); }
  Row& operator<<(int v) { return add(std::to_string(v)); }
  Row& operator<<(std::uint64_t v) { return add(std::to_string(v)); }
  Row& operator<<(const std::string& v) { return add(v); }
  Row& operator<<(const Vec3& v) { return *this << v.x << v.y << v.z; }
  std::string str() const { return text_; }

 private:
  Row& add(const std::string& s) {
    if (!text_.empty()) text_ += ',';
    text_ += s;
    return *this;
  }
  std::string text_;
};

const char* kPhaseColumns[kPhaseCount] = {"projection", "interpolation", "cfd", "drag", "dem"};

std::string phase_header(const std::string& suffix) {
  std::string h;
  for (int i = 0; i < kPhaseCount; ++i) h += std::string(",") + kPhaseColumns[i] + suffix;
  return h;
}

/// Root-side output files of one run.
class RunWriter {
 public:
  RunWriter(const fs::path& dir) : dir_(dir) {
    fs::create_directories(dir_ / "snapshots");
    metrics_ = open_csv(dir_ / "metrics.csv",
                        "step,time,particles,floored_cells,particle_volume,coarse_solid_volume,fine_solid_volume,"
                        "drag_x,drag_y,drag_z,reaction_x,reaction_y,reaction_z,action_reaction,heavy_volume,"
                        "kinetic_energy,cfl,pcg_iterations,pcg_residual,clipped_volume,max_divergence");
    traffic_ = open_csv(dir_ / "traffic.csv", "step" + phase_header("_messages") + phase_header("_bytes") +
                                                  ",interpolation_max_rank_bytes,max_rank_particles");
    timing_ = open_csv(dir_ / "timing.csv", "step" + phase_header("_seconds") + ",migration_seconds,step_seconds");
    probes_ = open_csv(dir_ / "probes.csv", "step,time,id,owner,x,y,z,ux,uy,uz,ax,ay,az");
    fluidProbes_ = open_csv(dir_ / "probes_fluid.csv", "step,time,probe,x,y,z,ux,uy,uz,p,alpha,eps");
    snapshots_ = open_csv(dir_ / "snapshots.csv", "step,time,grid,field,components,file");
  }

  void step(const StepReport& r) {
    Row m;
    m << r.step << r.time << r.particleCount << r.flooredCells << r.particleVolume << r.coarseSolidVolume
      << r.fineSolidVolume << r.dragForce << r.fluidReaction << r.actionReaction << r.heavyVolume
      << r.kineticEnergy << r.cfd.cfl << r.cfd.projection.iterations << r.cfd.projection.relativeResidual
      << r.cfd.alpha.clippedVolume << r.maxDivergence;
    metrics_ << m.str() << '\n';
    Row t;
    t << r.step;
    for (const auto& p : r.traffic) t << p.messages;
    for (const auto& p : r.traffic) t << p.bytes;
    t << r.maxRankInterpolationBytes << r.maxRankParticles;
    traffic_ << t.str() << '\n';
    Row w;
    w << r.step;
    for (double s : r.maxSeconds) w << s;
    w << r.maxMigrationSeconds << r.maxStepSeconds;
    timing_ << w.str() << '\n';
  }

  void particle_probe(const ParticleSample& s) {
    Row r;
    r << s.step << s.time << s.id << s.owner << s.x << s.u << s.a;
    probes_ << r.str() << '\n';
  }

  void fluid_probe(int step, double time, const FluidProbe& probe, const Vec3& u, double p, double alpha,
                   double eps) {
    Row r;
    r << step << time << probe.name << probe.position << u << p << alpha << eps;
    fluidProbes_ << r.str() << '\n';
  }

  void snapshot(const std::string& gridName, const std::string& field, const UniformGrid& grid, int step,
                double time, int components, std::vector<double> values) {
    std::ostringstream name;
    name << "step_";
    name.width(6);
    name.fill('0');
    name << step;
    name << '_' << gridName << '_' << field << ".dgmf";
    Snapshot s;
    s.dims = grid.dims();
    s.origin = grid.origin();
    s.spacing = grid.spacing();
    s.step = step;
    s.time = time;
    s.components = components;
    s.values = std::move(values);
    write_snapshot(dir_ / "snapshots" / name.str(), s);
    Row r;
    r << step << time << gridName << field << components << ("snapshots/" + name.str());
    snapshots_ << r.str() << '\n';
  }

  void final_particles(const std::vector<Particle>& particles) {
    auto out = open_csv(dir_ / "particles.csv", "id,x,y,z,ux,uy,uz,wx,wy,wz,qw,qx,qy,qz,radius,density");
    for (const auto& p : particles) {
      Row r;
      r << p.id << p.x << p.u << p.omega << p.orientation.w << p.orientation.x << p.orientation.y
        << p.orientation.z << p.radius << p.density;
      out << r.str() << '\n';
    }
  }

  void manifest(const nlohmann::json& j) {
    std::ofstream out(dir_ / "manifest.json");
    out << j.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::ofstream metrics_, traffic_, timing_, probes_, fluidProbes_, snapshots_;
};

bool probed(const Scenario& s, std::uint64_t id) {
  return s.probeAllParticles || std::find(s.probeParticles.begin(), s.probeParticles.end(), id) != s.probeParticles.end();
}

std::vector<ParticleSample> sample_particles(const Scenario& scenario, const DemDomain& dem, int step, double time,
                                             Communicator& comm) {
  ByteWriter w;
  std::vector<const Particle*> mine;
  for (const auto& p : dem.particles())
    if (probed(scenario, p.id)) mine.push_back(&p);
  w.put(static_cast<std::uint32_t>(mine.size()));
  for (const auto* p : mine) {
    w.put(p->id);
    w.put(p->x);
    w.put(p->u);
    w.put(p->acceleration);
  }
  auto all = comm.gather_to_root(std::move(w).take());
  std::vector<ParticleSample> out;
  if (!all) return out;
  for (std::size_t rank = 0; rank < all->size(); ++rank) {
    ByteReader r((*all)[rank]);
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      ParticleSample s;
      s.step = step;
      s.time = time;
      s.id = r.get<std::uint64_t>();
      s.owner = static_cast<int>(rank);
      s.x = r.get_vec3();
      s.u = r.get_vec3();
      s.a = r.get_vec3();
      out.push_back(s);
    }
  }
  std::sort(out.begin(), out.end(), [](const ParticleSample& a, const ParticleSample& b) { return a.id < b.id; });
  return out;
}

void sample_fluid(const Scenario& scenario, const FluidState& fluid, int step, double time, Communicator& comm,
                  RunWriter* writer) {
  if (scenario.fluidProbes.empty()) return;
  const auto& sub = *fluid.sub;
  ByteWriter w;
  std::vector<std::uint32_t> mine;
  for (std::size_t i = 0; i < scenario.fluidProbes.size(); ++i) {
    const auto cell = locate_cell(sub.grid(), scenario.fluidProbes[i].position);
    if (!cell) continue;
    const int l = sub.local_index(*cell);
    if (l != kBoundary && l < sub.owned_count()) mine.push_back(static_cast<std::uint32_t>(i));
  }
  w.put(static_cast<std::uint32_t>(mine.size()));
  for (auto i : mine) {
    const int l = sub.local_index(*locate_cell(sub.grid(), scenario.fluidProbes[i].position));
    w.put(i);
    w.put(fluid.u.vec(l));
    w.put(fluid.p(l));
    w.put(fluid.alpha(l));
    w.put(fluid.eps(l));
  }
  auto all = comm.gather_to_root(std::move(w).take());
  if (!all || !writer) return;
  struct Value {
    Vec3 u;
    double p, alpha, eps;
  };
  std::map<std::uint32_t, Value> values;
  for (const auto& payload : *all) {
    ByteReader r(payload);
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < n; ++k) {
      const auto i = r.get<std::uint32_t>();
      Value v;
      v.u = r.get_vec3();
      v.p = r.get<double>();
      v.alpha = r.get<double>();
      v.eps = r.get<double>();
      values[i] = v;
    }
  }
  for (const auto& [i, v] : values) writer->fluid_probe(step, time, scenario.fluidProbes[i], v.u, v.p, v.alpha, v.eps);
}

void write_snapshots(const CoupledRank& sys, int step, double time, Communicator& comm, RunWriter* writer) {
  struct Item {
    const char* grid;
    const char* name;
    const GridField* field;
  };
  const Item items[] = {{"fine", "u", &sys.fluid().u},       {"fine", "p", &sys.fluid().p},
                        {"fine", "alpha", &sys.fluid().alpha}, {"fine", "eps", &sys.fluid().eps},
                        {"coarse", "eps", &sys.coarse().eps},  {"coarse", "u", &sys.coarse().u}};
  for (const auto& item : items) {
    auto values = gather_global(*item.field, comm);
    if (values && writer)
      writer->snapshot(item.grid, item.name, item.field->subdomain().grid(), step, time, item.field->components(),
                       std::move(*values));
  }
}

}  // namespace

RunResult run_scenario(const Scenario& scenario, const RunOptions& options) {
  if (options.ranks < 1) throw ConfigError("--ranks must be at least 1");
  const CouplingMode mode = options.mode.value_or(scenario.mode);
  const Strategy strategy = options.strategy.value_or(scenario.strategy);
  const int steps = options.steps.value_or(scenario.steps);
  if (steps < 1) throw ConfigError("step count must be at least 1");

  const auto buildsBefore = CommMatrix::build_count();
  const CouplingSetup setup = make_coupling_setup(scenario, mode, strategy, options.ranks);

  RunResult result;
  result.fineCellImbalance = imbalance_factor(*setup.fineMap, LoadWeights::uniform(setup.fineMap->grid()));
  result.initialParticlesPerRank.assign(static_cast<std::size_t>(options.ranks), 0);
  {
    const auto& grid = setup.coarseMap->grid();
    for (const auto& p : scenario.particles)
      if (auto c = locate_cell(grid, p.x)) ++result.initialParticlesPerRank[static_cast<std::size_t>(setup.coarseMap->owner(*c))];
    const auto total = scenario.particles.size();
    if (total > 0) {
      const auto most = *std::max_element(result.initialParticlesPerRank.begin(), result.initialParticlesPerRank.end());
      result.demImbalance = static_cast<double>(most) * options.ranks / static_cast<double>(total);
    }
  }

  std::unique_ptr<RunWriter> writer;
  if (!options.outDir.empty()) writer = std::make_unique<RunWriter>(options.outDir);

  const auto t0 = Clock::now();
  result.rankTraffic = run_ranks(options.ranks, options.backend, [&](Communicator& comm) {
    const bool root = comm.rank() == 0;
    RunWriter* out = root ? writer.get() : nullptr;
    CoupledRank sys(setup, comm.rank());
    apply_initial_fluid(scenario, sys.fluid());
    sys.initialize(scenario.particles, comm);

    auto record_probes = [&](int step, double time) {
      auto samples = sample_particles(scenario, sys.dem(), step, time, comm);
      for (const auto& s : samples) {
        if (out) out->particle_probe(s);
      }
      if (root) result.probes.insert(result.probes.end(), samples.begin(), samples.end());
      sample_fluid(scenario, sys.fluid(), step, time, comm, out);
    };
    record_probes(0, 0.0);
    if (writer) write_snapshots(sys, 0, 0.0, comm, out);

    for (int s = 1; s <= steps; ++s) {
      const StepReport report = sys.step(comm);
      if (root) result.reports.push_back(report);
      if (out) out->step(report);
      record_probes(report.step, report.time);
      const bool due = s == steps || (scenario.snapshotEvery > 0 && s % scenario.snapshotEvery == 0);
      if (writer && due) write_snapshots(sys, report.step, report.time, comm, out);
    }
    auto particles = gather_particles(sys.dem(), comm);
    if (root && particles) result.finalParticles = std::move(*particles);
  });
  result.wallSeconds = std::chrono::duration<double>(Clock::now() - t0).count();
  result.commMatrixBuilds = CommMatrix::build_count() - buildsBefore;

  if (writer) {
    writer->final_particles(result.finalParticles);
    nlohmann::json m;
    m["scenario"] = scenario.name;
    m["configHash"] = hex(scenario.configHash);
    m["codeVersion"] = DGM_VERSION;
    m["backend"] = to_string(options.backend);
    m["ranks"] = options.ranks;
    m["strategy"] = to_string(strategy);
    m["mode"] = to_string(mode);
    m["steps"] = steps;
    m["dt"] = scenario.schedule.dt;
    m["demSubsteps"] = scenario.schedule.demSubsteps;
    m["commMatrixBuilds"] = result.commMatrixBuilds;
    m["particles"] = scenario.particles.size();
    m["demImbalance"] = result.demImbalance;
    m["fineCellImbalance"] = result.fineCellImbalance;
    m["fluidGridDims"] = setup.fineMap->grid().dims();
    m["coarseGridDims"] = setup.coarseMap->grid().dims();
    m["wallSeconds"] = result.wallSeconds;
    writer->manifest(m);
  }
  return result;
}

namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Table read_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("missing output file '" + file.string() + "'");
  Table t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  if (std::getline(in, line)) t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Largest absolute difference of two values; infinite when they are not
/// comparable. NaN matches NaN.
double difference(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b) ? 0.0 : INFINITY;
  if (a == b) return 0.0;
  return std::abs(a - b);
}

FileDiff compare_tables(const fs::path& a, const fs::path& b, const std::string& name, double tol,
                        const std::vector<std::string>& ignored) {
  const Table ta = read_csv(a / name);
  const Table tb = read_csv(b / name);
  FileDiff d;
  d.file = name;
  if (ta.header != tb.header) throw ConfigError(name + ": column headers differ");
  if (ta.rows.size() != tb.rows.size())
    throw ConfigError(name + ": row counts differ (" + std::to_string(ta.rows.size()) + " vs " +
                      std::to_string(tb.rows.size()) + ")");
  for (std::size_t r = 0; r < ta.rows.size(); ++r) {
    if (ta.rows[r].size() != ta.header.size() || tb.rows[r].size() != ta.header.size())
      throw ConfigError(name + ": malformed row " + std::to_string(r + 2));
    for (std::size_t c = 0; c < ta.header.size(); ++c) {
      if (std::find(ignored.begin(), ignored.end(), ta.header[c]) != ignored.end()) continue;
      const auto& x = ta.rows[r][c];
      const auto& y = tb.rows[r][c];
      if (x == y) continue;
      const auto vx = parse_number(x);
      const auto vy = parse_number(y);
      const double diff = vx && vy ? difference(*vx, *vy) : INFINITY;
      if (diff > d.maxDifference) {
        d.maxDifference = diff;
        d.note = "worst at row " + std::to_string(r + 2) + ", column " + ta.header[c];
      }
    }
  }
  d.pass = tol == 0.0 ? d.maxDifference == 0.0 : d.maxDifference <= tol;
  return d;
}

FileDiff compare_snapshots(const fs::path& a, const fs::path& b, double tol) {
  const Table ta = read_csv(a / "snapshots.csv");
  const Table tb = read_csv(b / "snapshots.csv");
  FileDiff d;
  d.file = "snapshots";
  if (ta.rows.size() != tb.rows.size()) throw ConfigError("snapshots.csv: snapshot counts differ");
  std::size_t fileCol = ta.header.size() - 1;
  for (std::size_t r = 0; r < ta.rows.size(); ++r) {
    if (ta.rows[r] != tb.rows[r]) throw ConfigError("snapshots.csv: index rows differ at row " + std::to_string(r + 2));
    const auto sa = read_snapshot(a / ta.rows[r][fileCol]);
    const auto sb = read_snapshot(b / tb.rows[r][fileCol]);
    if (sa.dims != sb.dims || sa.components != sb.components || sa.values.size() != sb.values.size())
      throw ConfigError(ta.rows[r][fileCol] + ": snapshot shapes differ");
    for (std::size_t i = 0; i < sa.values.size(); ++i) {
      const double diff = difference(sa.values[i], sb.values[i]);
      if (diff > d.maxDifference) {
        d.maxDifference = diff;
        d.note = "worst in " + ta.rows[r][fileCol];
      }
    }
  }
  d.pass = tol == 0.0 ? d.maxDifference == 0.0 : d.maxDifference <= tol;
  return d;
}

nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("missing '" + (dir / "manifest.json").string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError((dir / "manifest.json").string() + ": " + e.what());
  }
}

}  // namespace

CompareReport compare_runs(const fs::path& dirA, const fs::path& dirB, double tolerance) {
  if (!(tolerance >= 0.0)) throw ConfigError("--tol must be non-negative");
  const auto ma = read_manifest(dirA);
  const auto mb = read_manifest(dirB);
  if (ma.value("configHash", "") != mb.value("configHash", ""))
    throw ConfigError("runs come from different scenarios (config hash " + ma.value("configHash", "?") + " vs " +
                      mb.value("configHash", "?") + ")");
  if (ma.value("steps", -1) != mb.value("steps", -1)) throw ConfigError("runs have different step counts");

  CompareReport report;
  report.files.push_back(compare_tables(dirA, dirB, "metrics.csv", tolerance, {}));
  report.files.push_back(compare_tables(dirA, dirB, "probes.csv", tolerance, {"owner"}));
  report.files.push_back(compare_tables(dirA, dirB, "probes_fluid.csv", tolerance, {}));
  report.files.push_back(compare_tables(dirA, dirB, "particles.csv", tolerance, {}));
  report.files.push_back(compare_snapshots(dirA, dirB, tolerance));
  for (const char* info : {"traffic.csv", "timing.csv"}) {
    FileDiff d;
    d.file = info;
    d.compared = false;
    try {
      const auto t = compare_tables(dirA, dirB, info, 0.0, {});
      d.maxDifference = t.maxDifference;
      d.note = t.maxDifference == 0.0 ? "identical" : "differs (informational)";
    } catch (const ConfigError& e) {
      d.note = std::string("not comparable: ") + e.what();
    }
    report.files.push_back(d);
  }
  for (const auto& f : report.files)
    if (f.compared && !f.pass) report.pass = false;
  return report;
}

}  // namespace dgm
