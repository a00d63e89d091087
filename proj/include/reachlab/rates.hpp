#pragma once
// Kramers rates and Arrhenius-style fits of log passage times.

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reachlab/diffusion.hpp"
#include "reachlab/landscape.hpp"

namespace reachlab {

// prefactor * exp(-delta_c / D)
double kramers_rate_complexity(double delta_c, double D, double prefactor);

// sqrt(U''(min) |U''(saddle)|) / (2 pi) * exp(-(U(saddle) - U(min)) / D)
// for a 1D potential. Throws ContractViolation on wrong curvature signs.
double kramers_double_well(const Potential& p, double D, double min_loc, double saddle_loc);

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::vector<std::pair<double, double>> points;  // (x, log time)

  // Barrier under exp(-barrier / D), i.e. the slope when x = 1/D.
  double barrier() const { return slope; }
  // Barrier under exp(-barrier / 2D).
  double barrier_half_convention() const { return 2.0 * slope; }
  double predict_log_time(double x) const { return slope * x + intercept; }
  nlohmann::json to_json() const;
  // Two columns (x, predicted log time) over the fitted points.
  void write_plot(std::ostream& out) const;
};

// Least-squares fit of log(mean_time) against x. Needs >= 3 points, positive
// times, and at least two distinct x.
RateFit arrhenius_fit(const std::vector<std::pair<double, double>>& points);

// Censored fraction must stay below 10% for an escape ensemble to feed a fit.
bool accept_for_fit(const EscapeStats& s);

}  // namespace reachlab
