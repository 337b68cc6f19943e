#include "dgm/exact_sum.hpp"

#include <bit>
#include <cmath>

namespace dgm {

namespace {

constexpr std::int64_t kDigitMask = 0xffffffffLL;

/// Shewchuk's exact two-sum accumulation into non-overlapping partials.
void grow(std::vector<double>& partials, double x) {
  std::size_t i = 0;
  for (double y : partials) {
    if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials[i++] = lo;
    x = hi;
  }
  partials.resize(i);
  partials.push_back(x);
}

}  // namespace

void ExactSum::add(double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  const int biased = static_cast<int>((bits >> 52) & 0x7ff);
  if (biased == 0x7ff) {
    nonFinite_ += x;
    hasNonFinite_ = true;
    return;
  }
  std::uint64_t mantissa = bits & ((std::uint64_t{1} << 52) - 1);
  if (biased != 0) mantissa |= std::uint64_t{1} << 52;
  if (mantissa == 0) return;
  // x = mantissa * 2^(max(biased, 1) - 1075); bit position above 2^-1074:
  const int position = (biased == 0 ? 1 : biased) - 1;
  const int digit = position >> 5;
  const auto wide = static_cast<unsigned __int128>(mantissa) << (position & 31);
  const auto d0 = static_cast<std::int64_t>(static_cast<std::uint64_t>(wide) & kDigitMask);
  const auto d1 = static_cast<std::int64_t>(static_cast<std::uint64_t>(wide >> 32) & kDigitMask);
  const auto d2 = static_cast<std::int64_t>(static_cast<std::uint64_t>(wide >> 64));
  if (bits >> 63) {
    digits_[static_cast<std::size_t>(digit)] -= d0;
    digits_[static_cast<std::size_t>(digit + 1)] -= d1;
    digits_[static_cast<std::size_t>(digit + 2)] -= d2;
  } else {
    digits_[static_cast<std::size_t>(digit)] += d0;
    digits_[static_cast<std::size_t>(digit + 1)] += d1;
    digits_[static_cast<std::size_t>(digit + 2)] += d2;
  }
  // Each add moves a digit by less than 2^32; propagate carries long before
  // 2^63 could be reached.
  if (++pending_ == (1u << 30)) normalize();
}

void ExactSum::normalize() {
  for (int i = 0; i + 1 < kDigits; ++i) {
    const std::int64_t carry = digits_[static_cast<std::size_t>(i)] >> 32;  // floor division
    digits_[static_cast<std::size_t>(i)] -= carry * (kDigitMask + 1);
    digits_[static_cast<std::size_t>(i + 1)] += carry;
  }
  pending_ = 0;
}

void ExactSum::merge(const ExactSum& other) {
  for (double p : other.partials()) add(p);
}

void ExactSum::merge_partials(std::span<const double> partials) {
  for (double p : partials) add(p);
}

std::span<const double> ExactSum::partials() const {
  ExactSum canonical = *this;
  canonical.normalize();
  // Work on the magnitude so that no digit carries a huge negative weight.
  const bool negative = canonical.digits_[kDigits - 1] < 0;
  if (negative) {
    for (auto& d : canonical.digits_) d = -d;
    canonical.normalize();
  }
  partials_.clear();
  for (int i = 0; i < kDigits; ++i) {
    const std::int64_t d = canonical.digits_[static_cast<std::size_t>(i)];
    if (d != 0) grow(partials_, std::ldexp(static_cast<double>(negative ? -d : d), 32 * i - 1074));
  }
  if (hasNonFinite_) partials_.push_back(nonFinite_);
  return partials_;
}

double ExactSum::value() const {
  if (hasNonFinite_) return nonFinite_;
  const auto parts = partials();
  // Same final rounding step as CPython's math.fsum.
  if (parts.empty()) return 0.0;
  std::size_t n = parts.size();
  double hi = parts[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = parts[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && parts[n - 1] < 0.0) || (lo > 0.0 && parts[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    const double yr = x - hi;
    if (y == yr) hi = x;
  }
  return hi;
}

}  // namespace dgm
