#pragma once
// Discretized Onsager-Machlup actions, their static/dynamic split, and
// minimum-action (critical) paths with fixed endpoints and horizon.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "reachlab/diffusion.hpp"
#include "reachlab/landscape.hpp"

namespace reachlab {

struct ActionBreakdown {
  double total = 0.0;
  double static_term = 0.0;   // (U(end) - U(start)) / 2D
  double dynamic_term = 0.0;  // (1/2D) sum dt (|v|^2 / 2 + V(mid))
  std::vector<double> per_segment;

  // total - static - dynamic
  double defect() const { return total - static_term - dynamic_term; }
  nlohmann::json to_json() const;
};

// Midpoint rule over segments: dt [ |v - f(mid)|^2 / 4D + div f(mid) / 2 ].
ActionBreakdown om_action(const Potential& p, const Path& path, double D);

struct PathOptConfig {
  std::size_t max_iters = 2000;
  // Converged when el_residual <= grad_tol * max(1, max_grad_v).
  double grad_tol = 1e-9;

  nlohmann::json to_json() const;
  static PathOptConfig from_json(const nlohmann::json& j);
};

struct CriticalPath {
  Path path;
  // max over interior knots of |w'' - grad V| in the discretization matching
  // the midpoint action, i.e. (2D / dt) |dS / dw_k|.
  double el_residual = 0.0;
  // Same with w'' as a plain second difference and grad V at the knot.
  // Differs from el_residual by O(dt^2).
  double el_residual_fd = 0.0;
  double max_grad_v = 0.0;  // max |grad V| over interior knots
  ActionBreakdown action;
  bool converged = false;
  std::size_t iterations = 0;
  std::string start;  // which initial interpolant produced it

  nlohmann::json to_json() const;
};

struct MinimumActionResult {
  CriticalPath best;
  // Distinct local minima from all starts, best first.
  std::vector<CriticalPath> distinct;
};

// Minimize the discretized action over interior knots with fixed endpoints,
// starting from the linear, forward gradient-flow, and backward gradient-flow
// interpolants. Damped Newton steps on the block-tridiagonal Hessian, which is
// assembled from finite differences of the analytic gradient.
MinimumActionResult minimum_action_path(const Potential& p, const WeightVector& w0, const WeightVector& wf,
                                        double T, std::size_t n_knots, double D,
                                        const PathOptConfig& cfg = {});

// Discrete gradient of om_action with respect to every knot (endpoints
// included).
std::vector<Vector> om_action_gradient(const Potential& p, const Path& path, double D);

struct ElResidual {
  double discrete = 0.0;  // (2D / dt) max |dS / dw_k|
  double fd = 0.0;        // max |(w+ - 2w + w-) / dt^2 - grad V(w)|
  double max_grad_v = 0.0;
};

ElResidual euler_lagrange_residual(const Potential& p, const Path& path, double D);

struct TransitionRatios {
  std::vector<std::size_t> hits;
  std::vector<double> ratios;      // hits[i] / hits[0]
  std::vector<double> log_ratio_se;  // binomial delta-method standard error
  std::size_t n_runs = 0;

  nlohmann::json to_json() const;
};

// Fraction of Langevin runs inside each candidate ball at time T, normalized
// to the first candidate. params.max_steps is ignored; T / params.dt steps run.
TransitionRatios transition_ratio(const Potential& p, const WeightVector& w0,
                                  const std::vector<WeightVector>& candidates, double radius, double T,
                                  const DiffusionParams& params, std::size_t n_runs, std::size_t workers = 1);

struct ChannelReport {
  std::vector<double> bin_centers;
  std::vector<double> empirical;    // bin probabilities of u
  std::vector<double> corrected;    // from exp(-a/D) b^(-1/2)
  std::vector<double> uncorrected;  // from exp(-a/D)
  double tv_corrected = 0.0;
  double tv_uncorrected = 0.0;
  double separation_ratio = 0.0;  // min b / max |a''| on the box
  bool equilibrated = true;
  double drift_z = 0.0;  // z-score of first-half vs second-half mean of u
  std::size_t samples = 0;

  nlohmann::json to_json() const;
};

// Run n_runs 2D Langevin chains from (u0, 0) for params.max_steps steps each,
// drop the first 10%, histogram u every 10 steps, and compare with the
// marginal predictions.
ChannelReport channel_marginal_check(const Channel2D& ch, double u0, double D, const DiffusionParams& params,
                                     std::size_t n_runs, std::size_t bins, std::size_t workers = 1);

}  // namespace reachlab
