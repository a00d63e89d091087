#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace reachlab::stats {

double mean(std::span<const double> x);
// Unbiased sample variance (n - 1). Requires n >= 2.
double variance(std::span<const double> x);
double median(std::span<const double> x);

// Average ranks (1-based), ties share their mean rank.
std::vector<double> ranks(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Ordinary least squares y = slope * x + intercept. Throws ContractViolation
// on fewer than 2 points or zero spread in x.
LinearFit least_squares(std::span<const double> x, std::span<const double> y);

// Fixed-range histogram normalized to probabilities. Samples outside
// [lo, hi) are counted in `outside` and left out of the bins; the bins are
// normalized by the total count, so out-of-range mass lowers their sum.
struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> counts;
  double outside = 0.0;
  double total = 0.0;

  Histogram(double lo, double hi, std::size_t bins);
  void add(double x);
  std::size_t bins() const { return counts.size(); }
  double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
  double bin_center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * bin_width(); }
  std::vector<double> probabilities() const;
};

// 0.5 * sum |p - q|, with the out-of-range masses treated as one extra cell.
double total_variation(std::span<const double> p, std::span<const double> q);

}  // namespace reachlab::stats
