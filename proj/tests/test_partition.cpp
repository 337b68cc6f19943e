#include <doctest.h>

#include <numeric>
#include <random>

#include "dgm/error.hpp"
#include "dgm/partition.hpp"

using namespace dgm;

namespace {

void check_complete(const PartitionMap& map) {
  auto counts = map.cell_counts();
  CHECK(std::accumulate(counts.begin(), counts.end(), CellId{0}) == map.grid().cell_count());
  for (int r = 0; r < map.rank_count(); ++r) CHECK(counts[static_cast<std::size_t>(r)] > 0);
}

std::vector<double> rank_weights(const PartitionMap& map, const LoadWeights& w) {
  std::vector<double> out(static_cast<std::size_t>(map.rank_count()), 0.0);
  for (CellId c = 0; c < map.grid().cell_count(); ++c)
    out[static_cast<std::size_t>(map.owner(c))] += w.perCell[static_cast<std::size_t>(c)];
  return out;
}

}  // namespace

TEST_CASE("colocated slab split of a 4x1x1 grid") {
  UniformGrid g({0, 0, 0}, {1, 1, 1}, {4, 1, 1});
  auto m = colocate_partition(g, 2);
  CHECK(m.owner(0) == 0);
  CHECK(m.owner(1) == 0);
  CHECK(m.owner(2) == 1);
  CHECK(m.owner(3) == 1);
  CHECK_THROWS_AS(colocate_partition(g, 5), ConfigError);
}

TEST_CASE("colocated partition on one rank") {
  UniformGrid g({0, 0, 0}, {1, 1, 1}, {3, 5, 2});
  auto m = colocate_partition(g, 1);
  for (CellId c = 0; c < g.cell_count(); ++c) CHECK(m.owner(c) == 0);
}

TEST_CASE("colocated 6x6x6 on 4 ranks gives equal face-connected boxes") {
  UniformGrid g({0, 0, 0}, {1, 1, 1}, {6, 6, 6});
  auto m = colocate_partition(g, 4);
  check_complete(m);
  for (int r = 0; r < 4; ++r) {
    CHECK(m.cells_of(r).size() == 54);
    CHECK(is_face_connected(m, r));
    auto b = owned_bounds(m, r);
    const CellId boxCells = CellId{b.hi.i - b.lo.i + 1} * (b.hi.j - b.lo.j + 1) * (b.hi.k - b.lo.k + 1);
    CHECK(boxCells == 54);
  }
}

TEST_CASE("colocated boxes balance awkward grids") {
  UniformGrid g({0, 0, 0}, {1, 1, 1}, {6, 3, 9});
  auto m = colocate_partition(g, 8);
  check_complete(m);
  CHECK(imbalance_factor(m, LoadWeights::uniform(g)) < 1.4);
  for (int r = 0; r < 8; ++r) CHECK(is_face_connected(m, r));
}

TEST_CASE("rcb with uniform weights gives exact eighths") {
  UniformGrid g({0, 0, 0}, {1, 1, 1}, {8, 8, 8});
  auto m = rcb_partition(g, LoadWeights::uniform(g), 8);
  check_complete(m);
  for (int r = 0; r < 8; ++r) {
    CHECK(m.cells_of(r).size() == 64);
    CHECK(is_face_connected(m, r));
  }
  CHECK(imbalance_factor(m, LoadWeights::uniform(g)) == 1.0);
}

TEST_CASE("rcb rejects invalid rank counts and weights") {
  UniformGrid g({0, 0, 0}, {1, 1, 1}, {4, 4, 4});
  CHECK_THROWS_AS(rcb_partition(g, LoadWeights::uniform(g), 3), ConfigError);
  CHECK_THROWS_AS(rcb_partition(g, LoadWeights{std::vector<double>(64, 0.0)}, 2), ConfigError);
  auto one = rcb_partition(g, LoadWeights::uniform(g), 1);
  for (CellId c = 0; c < g.cell_count(); ++c) CHECK(one.owner(c) == 0);
}

TEST_CASE("rcb split with weight in one octant lands inside the octant") {
  UniformGrid g({0, 0, 0}, {1, 1, 1}, {8, 8, 8});
  LoadWeights w{std::vector<double>(static_cast<std::size_t>(g.cell_count()), 0.0)};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(0.5, 1.5);
  for (CellId c = 0; c < g.cell_count(); ++c) {
    auto cc = g.coord(c);
    if (cc.i < 4 && cc.j < 4 && cc.k < 4) w.perCell[static_cast<std::size_t>(c)] = U(rng);
  }
  auto m = rcb_partition(g, w, 2);
  auto rw = rank_weights(m, w);
  const double total = rw[0] + rw[1];
  // Cell-level cut: the lighter side is at most one cell weight away from half.
  double slab = 0.0;
  for (CellId c = 0; c < g.cell_count(); ++c) slab = std::max(slab, w.perCell[static_cast<std::size_t>(c)]);
  CHECK(std::abs(rw[0] - 0.5 * total) <= slab);
  // Both ranks own weighted cells, so the cut passes through the octant.
  CHECK(rw[0] > 0.0);
  CHECK(rw[1] > 0.0);
}

TEST_CASE("rcb weight balance bound holds on random weights") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int P : {2, 4, 8, 16}) {
    for (int trial = 0; trial < 5; ++trial) {
      UniformGrid g({0, 0, 0}, {1, 1, 1}, {7, 5, 6});
      LoadWeights w{std::vector<double>(static_cast<std::size_t>(g.cell_count()))};
      double wmax = 0.0, total = 0.0;
      for (auto& x : w.perCell) {
        x = U(rng) < 0.3 ? 0.0 : std::pow(U(rng), 3);
        wmax = std::max(wmax, x);
        total += x;
      }
      auto m = rcb_partition(g, w, P);
      check_complete(m);
      auto rw = rank_weights(m, w);
      const double mean = total / P;
      const double mx = *std::max_element(rw.begin(), rw.end());
      CHECK(mx <= mean + wmax * (1 + 1e-12));
      if (P == 2) CHECK(mx <= (1 + 2 * wmax / total) * mean * (1 + 1e-12));
    }
  }
}

TEST_CASE("imbalance factor extremes") {
  UniformGrid g({0, 0, 0}, {1, 1, 1}, {4, 1, 1});
  auto m = colocate_partition(g, 2);
  CHECK(imbalance_factor(m, LoadWeights::uniform(g)) == 1.0);
  auto m4 = colocate_partition(g, 4);
  CHECK(imbalance_factor(m4, LoadWeights{{0, 0, 5, 0}}) == 4.0);
  CHECK_THROWS_AS(imbalance_factor(m4, LoadWeights{{0, 0, 0, 0}}), ConfigError);
}

TEST_CASE("rcb on a corner-loaded histogram stays balanced at 8 ranks") {
  UniformGrid g({0, 0, 0}, {0.005, 0.005, 0.005}, {40, 20, 60});
  std::vector<Vec3> pts;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> X(0.0, 0.05), Y(0.0, 0.1), Z(0.0, 0.01);
  for (int n = 0; n < 2000; ++n) pts.push_back({X(rng), Y(rng), Z(rng)});
  auto w = LoadWeights::histogram(g, pts);
  auto m = rcb_partition(g, w, 8);
  CHECK(imbalance_factor(m, w) <= 1.1);
}

TEST_CASE("shift_ranks relabels owners") {
  UniformGrid g({0, 0, 0}, {1, 1, 1}, {4, 1, 1});
  auto m = shift_ranks(colocate_partition(g, 2), 1);
  CHECK(m.owner(0) == 1);
  CHECK(m.owner(3) == 0);
}
