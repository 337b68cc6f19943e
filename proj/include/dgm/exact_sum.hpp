#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace dgm {

/// Exact floating-point accumulator.
///
/// Every finite double is an integer multiple of 2^-1074, so the running sum
/// is kept as a wide fixed-point integer in 32-bit digits with spare carry
/// bits. The rounded result depends only on the multiset of added values,
/// never on their order or grouping. Reductions built on it give
/// bitwise-identical results for any rank count, which is what makes parallel
/// runs reproduce the sequential run exactly.
class ExactSum {
 public:
  void add(double x);
  void merge(const ExactSum& other);
  /// Adds every value of a partials() list.
  void merge_partials(std::span<const double> partials);

  /// Correctly rounded value of the exact sum.
  double value() const;

  /// Non-overlapping doubles, increasing in magnitude, that sum exactly to the
  /// accumulated value. Valid until the next modification.
  std::span<const double> partials() const;

 private:
  static constexpr int kDigits = 67;
  void normalize();

  std::array<std::int64_t, kDigits> digits_{};
  std::uint32_t pending_ = 0;   // adds since the last carry propagation
  double nonFinite_ = 0.0;      // sum of inf/nan inputs
  bool hasNonFinite_ = false;
  mutable std::vector<double> partials_;
};

}  // namespace dgm
