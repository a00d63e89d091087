#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "reachlab/errors.hpp"
#include "reachlab/parallel.hpp"
#include "reachlab/rng.hpp"
#include "reachlab/stats.hpp"

using namespace reachlab;

// Known-answer vectors published with the Random123 reference implementation.
TEST_CASE("philox4x32-10 known answers") {
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) ==
        PhiloxBlock{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        PhiloxBlock{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        PhiloxBlock{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are reproducible and distinct") {
  RandomStream a(42, 3), b(42, 3), c(42, 4), d(43, 3);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs_c = differs_c || x != c.next_u64();
    differs_d = differs_d || x != d.next_u64();
  }
  CHECK(differs_c);
  CHECK(differs_d);
}

TEST_CASE("uniform and normal moments") {
  RandomStream s(7, 0);
  const int n = 200000;
  double su = 0, su2 = 0, sn = 0, sn2 = 0, sn4 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = s.next_uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    su += u;
    su2 += u * u;
    const double z = s.next_normal();
    sn += z;
    sn2 += z * z;
    sn4 += z * z * z * z;
  }
  // Tolerances are 5 standard errors of each sample moment.
  CHECK(std::abs(su / n - 0.5) < 5 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(su2 / n - 1.0 / 3) < 5 * std::sqrt((1.0 / 5 - 1.0 / 9) / n));
  CHECK(std::abs(sn / n) < 5 / std::sqrt(n));
  CHECK(std::abs(sn2 / n - 1.0) < 5 * std::sqrt(2.0 / n));
  CHECK(std::abs(sn4 / n - 3.0) < 5 * std::sqrt(96.0 / n));
}

TEST_CASE("next_index is uniform") {
  RandomStream s(11, 2);
  const std::uint64_t k = 7;
  const int n = 70000;
  std::vector<int> counts(k, 0);
  for (int i = 0; i < n; ++i) {
    const auto j = s.next_index(k);
    REQUIRE(j < k);
    ++counts[j];
  }
  double chi2 = 0.0;
  const double e = static_cast<double>(n) / k;
  for (int c : counts) chi2 += (c - e) * (c - e) / e;
  // 6 degrees of freedom; 0.999 quantile is 22.46.
  CHECK(chi2 < 22.46);
  CHECK_THROWS(s.next_index(0));
}

TEST_CASE("derive_seed separates tags") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 64; ++tag) seen.insert(derive_seed(5, tag));
  CHECK(seen.size() == 64);
  CHECK(derive_seed(5, 1) == derive_seed(5, 1));
  CHECK(derive_seed(5, 1) != derive_seed(6, 1));
}

TEST_CASE("mean, variance, median") {
  std::vector<double> x{3, 1, 4, 1, 5, 9, 2, 6};
  CHECK(stats::mean(x) == doctest::Approx(31.0 / 8));
  double m = 31.0 / 8, ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  CHECK(stats::variance(x) == doctest::Approx(ss / 7));
  CHECK(stats::median(x) == 3.5);
  std::vector<double> odd{5, 1, 3};
  CHECK(stats::median(odd) == 3.0);
}

TEST_CASE("ranks average ties and spearman follows") {
  std::vector<double> x{10, 20, 20, 30};
  auto r = stats::ranks(x);
  CHECK(r == std::vector<double>{1, 2.5, 2.5, 4});
  std::vector<double> a{1, 2, 3, 4, 5}, b{2, 4, 8, 16, 32}, c{5, 4, 3, 2, 1};
  CHECK(stats::spearman(a, b) == doctest::Approx(1.0));
  CHECK(stats::spearman(a, c) == doctest::Approx(-1.0));
  CHECK(stats::pearson(a, a) == doctest::Approx(1.0));
}

TEST_CASE("least squares recovers an exact line") {
  std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  auto f = stats::least_squares(x, y);
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r2 == doctest::Approx(1.0));
  std::vector<double> flat{2, 2, 2, 2};
  CHECK_THROWS_AS(stats::least_squares(flat, y), ContractViolation);
}

TEST_CASE("histogram normalization and total variation") {
  stats::Histogram h(0.0, 1.0, 4);
  for (double v : {0.1, 0.3, 0.6, 0.9, 1.5}) h.add(v);
  auto p = h.probabilities();
  CHECK(h.outside == 1.0);
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(0.8));
  CHECK(h.bin_center(0) == doctest::Approx(0.125));

  std::vector<double> q{0.25, 0.25, 0.25, 0.25};
  // Bins differ by 0.05 each and the outside cell by 0.2.
  CHECK(stats::total_variation(p, q) == doctest::Approx(0.5 * (4 * 0.05 + 0.2)));
  CHECK(stats::total_variation(q, q) == 0.0);
}

TEST_CASE("parallel_for fills every slot and rethrows") {
  std::vector<int> out(100, 0);
  parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i * i));
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 5) throw SimulationError("boom");
                               }),
                  SimulationError);
}
