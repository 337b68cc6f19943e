#include "dgm/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>

#include "dgm/error.hpp"

namespace dgm {

PartitionMap::PartitionMap(const UniformGrid& grid, std::vector<int> owner, int rankCount)
    : grid_(grid), owner_(std::move(owner)), rankCount_(rankCount) {
  if (rankCount_ < 1) throw ConfigError("rank count must be positive");
  if (static_cast<CellId>(owner_.size()) != grid_.cell_count())
    throw ConfigError("partition owner array does not match grid cell count");
  for (int r : owner_)
    if (r < 0 || r >= rankCount_) throw ConfigError("partition owner out of range: " + std::to_string(r));
}

std::vector<CellId> PartitionMap::cells_of(int rank) const {
  std::vector<CellId> out;
  for (CellId c = 0; c < grid_.cell_count(); ++c)
    if (owner_[static_cast<std::size_t>(c)] == rank) out.push_back(c);
  return out;
}

std::vector<CellId> PartitionMap::cell_counts() const {
  std::vector<CellId> counts(static_cast<std::size_t>(rankCount_), 0);
  for (int r : owner_) ++counts[static_cast<std::size_t>(r)];
  return counts;
}

LoadWeights LoadWeights::uniform(const UniformGrid& grid) {
  return {std::vector<double>(static_cast<std::size_t>(grid.cell_count()), 1.0)};
}

LoadWeights LoadWeights::histogram(const UniformGrid& grid, std::span<const Vec3> points) {
  LoadWeights w{std::vector<double>(static_cast<std::size_t>(grid.cell_count()), 0.0)};
  for (const auto& p : points)
    if (auto c = locate_cell(grid, p)) w.perCell[static_cast<std::size_t>(*c)] += 1.0;
  return w;
}

void LoadWeights::validate(const UniformGrid& grid) const {
  if (static_cast<CellId>(perCell.size()) != grid.cell_count())
    throw ConfigError("load weights size does not match grid cell count");
  bool positive = false;
  for (double w : perCell) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("load weights must be finite and >= 0");
    positive = positive || w > 0.0;
  }
  if (!positive) throw ConfigError("load weights must contain at least one positive entry");
}

namespace {

// Splits n cells into p contiguous parts; the first n % p parts get one more.
std::vector<int> split_points(int n, int p) {
  std::vector<int> starts(static_cast<std::size_t>(p) + 1, 0);
  for (int i = 0; i < p; ++i) starts[i + 1] = starts[i] + n / p + (i < n % p ? 1 : 0);
  return starts;
}

int part_of(const std::vector<int>& starts, int idx) {
  const auto it = std::upper_bound(starts.begin(), starts.end(), idx);
  return static_cast<int>(it - starts.begin()) - 1;
}

}  // namespace

PartitionMap colocate_partition(const UniformGrid& coarse, int rankCount) {
  if (rankCount < 1) throw ConfigError("rank count must be positive");
  if (rankCount > coarse.cell_count())
    throw ConfigError("rank count " + std::to_string(rankCount) + " exceeds coarse cell count " +
                      std::to_string(coarse.cell_count()));
  const auto& d = coarse.dims();

  using Key = std::tuple<long long, long long, int, int, int>;
  bool found = false;
  Key best{};
  for (int px = 1; px <= rankCount; ++px) {
    if (rankCount % px) continue;
    for (int py = 1; py <= rankCount / px; ++py) {
      if ((rankCount / px) % py) continue;
      const int pz = rankCount / px / py;
      if (px > d[0] || py > d[1] || pz > d[2]) continue;
      const long long maxCells = static_cast<long long>((d[0] + px - 1) / px) * ((d[1] + py - 1) / py) *
                                 ((d[2] + pz - 1) / pz);
      const long long cut = static_cast<long long>(px - 1) * d[1] * d[2] +
                            static_cast<long long>(py - 1) * d[0] * d[2] +
                            static_cast<long long>(pz - 1) * d[0] * d[1];
      const Key key{maxCells, cut, px, py, pz};
      if (!found || key < best) {
        best = key;
        found = true;
      }
    }
  }

  std::vector<int> owner(static_cast<std::size_t>(coarse.cell_count()));
  if (found) {
    const auto [maxCells, cut, px, py, pz] = best;
    const auto sx = split_points(d[0], px);
    const auto sy = split_points(d[1], py);
    const auto sz = split_points(d[2], pz);
    for (CellId c = 0; c < coarse.cell_count(); ++c) {
      const auto cc = coarse.coord(c);
      owner[static_cast<std::size_t>(c)] =
          part_of(sx, cc.i) + px * (part_of(sy, cc.j) + py * part_of(sz, cc.k));
    }
  } else {
    const auto starts = split_points(static_cast<int>(coarse.cell_count()), rankCount);
    for (CellId c = 0; c < coarse.cell_count(); ++c)
      owner[static_cast<std::size_t>(c)] = part_of(starts, static_cast<int>(c));
  }
  return PartitionMap(coarse, std::move(owner), rankCount);
}

namespace {

void bisect(const UniformGrid& grid, const std::vector<double>& weights, std::vector<CellId> cells,
            int firstRank, int nRanks, std::vector<int>& owner) {
  if (nRanks == 1) {
    for (CellId c : cells) owner[static_cast<std::size_t>(c)] = firstRank;
    return;
  }
  std::array<int, 3> lo{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(),
                        std::numeric_limits<int>::max()};
  std::array<int, 3> hi{-1, -1, -1};
  for (CellId c : cells) {
    const auto cc = grid.coord(c);
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], cc[a]);
      hi[a] = std::max(hi[a], cc[a]);
    }
  }
  int axis = 0;
  double longest = -1.0;
  for (int a = 0; a < 3; ++a) {
    const double len = (hi[a] - lo[a] + 1) * grid.spacing()[a];
    if (len > longest) {
      longest = len;
      axis = a;
    }
  }
  const int a1 = (axis + 1) % 3;
  const int a2 = (axis + 2) % 3;
  const int b1 = std::min(a1, a2);
  const int b2 = std::max(a1, a2);
  std::sort(cells.begin(), cells.end(), [&](CellId x, CellId y) {
    const auto cx = grid.coord(x);
    const auto cy = grid.coord(y);
    return std::tuple(cx[axis], cx[b1], cx[b2], x) < std::tuple(cy[axis], cy[b1], cy[b2], y);
  });

  const int leftRanks = nRanks / 2;
  double total = 0.0;
  for (CellId c : cells) total += weights[static_cast<std::size_t>(c)];
  const double target = total * leftRanks / nRanks;

  const std::size_t kMin = static_cast<std::size_t>(leftRanks);
  const std::size_t kMax = cells.size() - static_cast<std::size_t>(nRanks - leftRanks);
  double prefix = 0.0;
  for (std::size_t i = 0; i < kMin; ++i) prefix += weights[static_cast<std::size_t>(cells[i])];
  std::size_t bestK = kMin;
  double bestErr = std::fabs(prefix - target);
  for (std::size_t k = kMin + 1; k <= kMax; ++k) {
    prefix += weights[static_cast<std::size_t>(cells[k - 1])];
    const double err = std::fabs(prefix - target);
    if (err < bestErr) {
      bestErr = err;
      bestK = k;
    }
  }
  std::vector<CellId> right(cells.begin() + static_cast<std::ptrdiff_t>(bestK), cells.end());
  cells.resize(bestK);
  bisect(grid, weights, std::move(cells), firstRank, leftRanks, owner);
  bisect(grid, weights, std::move(right), firstRank + leftRanks, nRanks - leftRanks, owner);
}

}  // namespace

PartitionMap rcb_partition(const UniformGrid& grid, const LoadWeights& weights, int rankCount) {
  if (rankCount < 1 || (rankCount & (rankCount - 1)) != 0)
    throw ConfigError("rcb partition requires a power-of-two rank count, got " + std::to_string(rankCount));
  if (rankCount > grid.cell_count())
    throw ConfigError("rank count " + std::to_string(rankCount) + " exceeds cell count " +
                      std::to_string(grid.cell_count()));
  weights.validate(grid);
  std::vector<CellId> cells(static_cast<std::size_t>(grid.cell_count()));
  std::iota(cells.begin(), cells.end(), CellId{0});
  std::vector<int> owner(cells.size(), 0);
  bisect(grid, weights.perCell, std::move(cells), 0, rankCount, owner);
  return PartitionMap(grid, std::move(owner), rankCount);
}

PartitionMap shift_ranks(const PartitionMap& map, int offset) {
  const int p = map.rank_count();
  std::vector<int> owner(map.owners().begin(), map.owners().end());
  for (int& r : owner) r = ((r + offset) % p + p) % p;
  return PartitionMap(map.grid(), std::move(owner), p);
}

double imbalance_factor(const PartitionMap& map, const LoadWeights& weights) {
  if (static_cast<CellId>(weights.perCell.size()) != map.grid().cell_count())
    throw ConfigError("load weights and partition refer to different grids");
  std::vector<double> load(static_cast<std::size_t>(map.rank_count()), 0.0);
  double total = 0.0;
  for (CellId c = 0; c < map.grid().cell_count(); ++c) {
    const double w = weights.perCell[static_cast<std::size_t>(c)];
    load[static_cast<std::size_t>(map.owner(c))] += w;
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("imbalance factor undefined for zero total weight");
  const double mean = total / map.rank_count();
  return *std::max_element(load.begin(), load.end()) / mean;
}

bool is_face_connected(const PartitionMap& map, int rank) {
  const auto cells = map.cells_of(rank);
  if (cells.empty()) return false;
  const auto& grid = map.grid();
  std::vector<char> seen(static_cast<std::size_t>(grid.cell_count()), 0);
  std::vector<CellId> stack{cells.front()};
  seen[static_cast<std::size_t>(cells.front())] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const CellId c = stack.back();
    stack.pop_back();
    ++reached;
    for (int f = 0; f < kFaceCount; ++f) {
      const auto n = grid.neighbor(c, f);
      if (!n || seen[static_cast<std::size_t>(*n)] || map.owner(*n) != rank) continue;
      seen[static_cast<std::size_t>(*n)] = 1;
      stack.push_back(*n);
    }
  }
  return reached == cells.size();
}

CellRange owned_bounds(const PartitionMap& map, int rank) {
  CellRange r{{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), std::numeric_limits<int>::max()},
              {-1, -1, -1}};
  for (CellId c = 0; c < map.grid().cell_count(); ++c) {
    if (map.owner(c) != rank) continue;
    const auto cc = map.grid().coord(c);
    r.lo = {std::min(r.lo.i, cc.i), std::min(r.lo.j, cc.j), std::min(r.lo.k, cc.k)};
    r.hi = {std::max(r.hi.i, cc.i), std::max(r.hi.j, cc.j), std::max(r.hi.k, cc.k)};
  }
  return r;
}

}  // namespace dgm
