#include "reachlab/rates.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include "reachlab/errors.hpp"
#include "reachlab/stats.hpp"

namespace reachlab {

double kramers_rate_complexity(double delta_c, double D, double prefactor) {
  require(D > 0.0, "kramers_rate_complexity: D must be positive");
  require(prefactor > 0.0, "kramers_rate_complexity: prefactor must be positive");
  return prefactor * std::exp(-delta_c / D);
}

double kramers_double_well(const Potential& p, double D, double min_loc, double saddle_loc) {
  require(p.dim() == 1, "kramers_double_well: potential must be one-dimensional");
  require(D > 0.0, "kramers_double_well: D must be positive");
  WeightVector wm(1), ws(1);
  wm << min_loc;
  ws << saddle_loc;
  const double hm = p.hessian(wm)(0, 0);
  const double hs = p.hessian(ws)(0, 0);
  require(hm > 0.0, "kramers_double_well: U'' at the minimum must be positive");
  require(hs < 0.0, "kramers_double_well: U'' at the saddle must be negative");
  const double barrier = p.value(ws) - p.value(wm);
  return std::sqrt(hm * -hs) / (2.0 * std::numbers::pi) * std::exp(-barrier / D);
}

nlohmann::json RateFit::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& [x, y] : points) pts.push_back({x, y});
  return {{"slope", slope},
          {"intercept", intercept},
          {"r2", r2},
          {"barrier", barrier()},
          {"barrier_half_convention", barrier_half_convention()},
          {"points", pts}};
}

void RateFit::write_plot(std::ostream& out) const {
  out.precision(17);
  out << "# x predicted_log_time\n";
  for (const auto& pt : points) out << pt.first << ' ' << predict_log_time(pt.first) << '\n';
}

RateFit arrhenius_fit(const std::vector<std::pair<double, double>>& points) {
  require(points.size() >= 3, "arrhenius_fit: need at least 3 points");
  std::vector<double> x, y;
  RateFit fit;
  for (const auto& [xi, ti] : points) {
    require(std::isfinite(xi), "arrhenius_fit: non-finite x");
    require(ti > 0.0 && std::isfinite(ti), "arrhenius_fit: times must be positive and finite");
    x.push_back(xi);
    y.push_back(std::log(ti));
    fit.points.emplace_back(xi, y.back());
  }
  const auto ls = stats::least_squares(x, y);
  fit.slope = ls.slope;
  fit.intercept = ls.intercept;
  fit.r2 = ls.r2;
  return fit;
}

bool accept_for_fit(const EscapeStats& s) {
  return s.n_runs() > 0 && static_cast<double>(s.n_censored) < 0.1 * static_cast<double>(s.n_runs());
}

}  // namespace reachlab
