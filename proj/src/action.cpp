#include "reachlab/action.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <tuple>

#include "reachlab/errors.hpp"
#include "reachlab/json_util.hpp"
#include "reachlab/log.hpp"
#include "reachlab/parallel.hpp"
#include "reachlab/stats.hpp"

namespace reachlab {

using nlohmann::json;

namespace {

double path_dt(const Path& path) {
  path.validate();
  return path.times[1] - path.times[0];
}

}  // namespace

json ActionBreakdown::to_json() const {
  return {{"total", total},
          {"static_term", static_term},
          {"dynamic_term", dynamic_term},
          {"defect", defect()},
          {"segments", per_segment.size()}};
}

ActionBreakdown om_action(const Potential& p, const Path& path, double D) {
  require(D > 0.0, "om_action: the action is undefined for D <= 0");
  require(path.size() >= 3, "om_action: path needs at least 3 knots");
  const double dt = path_dt(path);
  ActionBreakdown a;
  a.per_segment.reserve(path.size() - 1);
  const double inv4d = 1.0 / (4.0 * D);
  const double inv2d = 1.0 / (2.0 * D);
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const WeightVector mid = 0.5 * (path.points[k] + path.points[k + 1]);
    const Vector v = (path.points[k + 1] - path.points[k]) / dt;
    const Vector g = p.grad(mid);
    const double lap = p.hessian(mid).trace();
    const double seg = dt * (inv4d * (v + g).squaredNorm() - 0.5 * lap);
    a.per_segment.push_back(seg);
    a.total += seg;
    const double vpot = 0.5 * g.squaredNorm() - D * lap;
    a.dynamic_term += dt * inv2d * (0.5 * v.squaredNorm() + vpot);
  }
  a.static_term = (p.value(path.points.back()) - p.value(path.points.front())) * inv2d;
  return a;
}

std::vector<Vector> om_action_gradient(const Potential& p, const Path& path, double D) {
  require(D > 0.0, "om_action_gradient: D must be positive");
  const double dt = path_dt(path);
  const auto d = path.points.front().size();
  std::vector<Vector> grad(path.size(), Vector::Zero(d));
  const double inv2d = 1.0 / (2.0 * D);
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const WeightVector mid = 0.5 * (path.points[k] + path.points[k + 1]);
    const Vector r = (path.points[k + 1] - path.points[k]) / dt + p.grad(mid);
    const Vector shared = (0.5 * dt * inv2d) * (p.hessian(mid) * r) - (0.25 * dt) * p.laplacian_grad(mid);
    grad[k + 1] += inv2d * r + shared;
    grad[k] += -inv2d * r + shared;
  }
  return grad;
}

ElResidual euler_lagrange_residual(const Potential& p, const Path& path, double D) {
  const double dt = path_dt(path);
  const auto grads = om_action_gradient(p, path, D);
  ElResidual out;
  for (std::size_t k = 1; k + 1 < path.size(); ++k) {
    out.discrete = std::max(out.discrete, (2.0 * D / dt) * grads[k].norm());
    const Vector acc = (path.points[k + 1] - 2.0 * path.points[k] + path.points[k - 1]) / (dt * dt);
    const Vector gv = path_potential_grad(p, path.points[k], D);
    out.fd = std::max(out.fd, (acc - gv).norm());
    out.max_grad_v = std::max(out.max_grad_v, gv.norm());
  }
  return out;
}

// ---- minimum-action paths ---------------------------------------------------

json PathOptConfig::to_json() const { return {{"max_iters", max_iters}, {"grad_tol", grad_tol}}; }

PathOptConfig PathOptConfig::from_json(const json& j) {
  using namespace json_util;
  expect_keys(j, {"max_iters", "grad_tol"}, "path_opt");
  PathOptConfig c;
  c.max_iters = get_or(j, "max_iters", c.max_iters);
  c.grad_tol = get_or(j, "grad_tol", c.grad_tol);
  require(c.max_iters >= 1 && c.grad_tol > 0.0, "path_opt: max_iters >= 1 and grad_tol > 0 required");
  return c;
}

json CriticalPath::to_json() const {
  return {{"action", action.to_json()}, {"el_residual", el_residual}, {"el_residual_fd", el_residual_fd},
          {"max_grad_v", max_grad_v},   {"converged", converged},     {"iterations", iterations},
          {"start", start},             {"knots", path.size()}};
}

namespace {

// Interior knots flattened knot-major: x[(k - 1) * d + j].
struct KnotProblem {
  const Potential& p;
  WeightVector w0, wf;
  double T;
  std::size_t n_knots;
  double D;
  std::size_t d;
  double dt;

  std::size_t interior() const { return n_knots - 2; }

  Path unpack(const Vector& x) const {
    Path path;
    for (std::size_t k = 0; k < n_knots; ++k) {
      path.times.push_back(k + 1 == n_knots ? T : static_cast<double>(k) * dt);
      if (k == 0) path.points.push_back(w0);
      else if (k + 1 == n_knots) path.points.push_back(wf);
      else path.points.push_back(x.segment(static_cast<Eigen::Index>((k - 1) * d), static_cast<Eigen::Index>(d)));
    }
    return path;
  }

  Vector pack(const Path& path) const {
    Vector x(static_cast<Eigen::Index>(interior() * d));
    for (std::size_t k = 1; k + 1 < n_knots; ++k)
      x.segment(static_cast<Eigen::Index>((k - 1) * d), static_cast<Eigen::Index>(d)) = path.points[k];
    return x;
  }

  double value(const Vector& x) const { return om_action(p, unpack(x), D).total; }

  Vector gradient(const Vector& x) const {
    const auto grads = om_action_gradient(p, unpack(x), D);
    Vector g(x.size());
    for (std::size_t k = 1; k + 1 < n_knots; ++k)
      g.segment(static_cast<Eigen::Index>((k - 1) * d), static_cast<Eigen::Index>(d)) = grads[k];
    return g;
  }

  // el_residual from an interior gradient.
  double residual(const Vector& g) const {
    double r = 0.0;
    for (std::size_t k = 0; k < interior(); ++k)
      r = std::max(r, g.segment(static_cast<Eigen::Index>(k * d), static_cast<Eigen::Index>(d)).norm());
    return (2.0 * D / dt) * r;
  }
};

// Symmetric block-tridiagonal matrix: diag[i] and upper[i] = block (i, i+1).
struct BlockTridiag {
  std::vector<Matrix> diag, upper;
};

// Knot k only couples to k-1 and k+1, so three colorings per coordinate
// recover every block from central differences of the gradient.
BlockTridiag fd_hessian(const KnotProblem& prob, const Vector& x) {
  const std::size_t m = prob.interior(), d = prob.d;
  const auto di = static_cast<Eigen::Index>(d);
  BlockTridiag h{std::vector<Matrix>(m, Matrix::Zero(di, di)), std::vector<Matrix>(m > 0 ? m - 1 : 0, Matrix::Zero(di, di))};
  std::vector<Matrix> lower(h.upper.size(), Matrix::Zero(di, di));
  for (std::size_t color = 0; color < 3; ++color) {
    for (std::size_t j = 0; j < d; ++j) {
      Vector xp = x, xm = x;
      std::vector<double> step(m, 0.0);
      for (std::size_t k = color; k < m; k += 3) {
        const auto idx = static_cast<Eigen::Index>(k * d + j);
        step[k] = 1e-5 * (1.0 + std::abs(x[idx]));
        xp[idx] += step[k];
        xm[idx] -= step[k];
      }
      const Vector dg = prob.gradient(xp) - prob.gradient(xm);
      for (std::size_t k = color; k < m; k += 3) {
        const double inv = 1.0 / (2.0 * step[k]);
        for (std::size_t r = (k > 0 ? k - 1 : 0); r <= std::min(k + 1, m - 1); ++r) {
          const Vector col = dg.segment(static_cast<Eigen::Index>(r * d), di) * inv;
          const auto jj = static_cast<Eigen::Index>(j);
          if (r == k) h.diag[k].col(jj) = col;
          else if (r + 1 == k) h.upper[r].col(jj) = col;  // d g_r / d x_{r+1}
          else lower[k].col(jj) = col;                   // d g_{k+1} / d x_k
        }
      }
    }
  }
  for (auto& b : h.diag) b = (0.5 * (b + b.transpose())).eval();
  for (std::size_t i = 0; i < h.upper.size(); ++i) h.upper[i] = 0.5 * (h.upper[i] + lower[i].transpose());
  return h;
}

// Solve (H + mu I) p = b by block Cholesky elimination. Returns nullopt if a
// pivot block is not positive definite.
std::optional<Vector> solve_damped(const BlockTridiag& h, double mu, const Vector& b, std::size_t d) {
  const std::size_t m = h.diag.size();
  const auto di = static_cast<Eigen::Index>(d);
  std::vector<Eigen::LLT<Matrix>> piv;
  piv.reserve(m);
  std::vector<Vector> y(m);
  for (std::size_t i = 0; i < m; ++i) {
    Matrix s = h.diag[i] + mu * Matrix::Identity(di, di);
    Vector yi = b.segment(static_cast<Eigen::Index>(i * d), di);
    if (i > 0) {
      const Matrix& c = h.upper[i - 1];
      s -= c.transpose() * piv.back().solve(c);
      yi -= c.transpose() * piv.back().solve(y[i - 1]);
    }
    piv.emplace_back(s);
    if (piv.back().info() != Eigen::Success) return std::nullopt;
    y[i] = std::move(yi);
  }
  Vector x(b.size());
  Vector next;
  for (std::size_t i = m; i-- > 0;) {
    Vector rhs = y[i];
    if (i + 1 < m) rhs -= h.upper[i] * next;
    next = piv[i].solve(rhs);
    x.segment(static_cast<Eigen::Index>(i * d), di) = next;
  }
  if (!x.allFinite()) return std::nullopt;
  return x;
}

struct NewtonOutcome {
  Vector x;
  bool converged = false;
  std::size_t iters = 0;
};

NewtonOutcome damped_newton(const KnotProblem& prob, Vector x, const PathOptConfig& cfg) {
  // Damping in units of the kinetic stiffness 1 / (D dt).
  const double kinetic = 1.0 / (prob.D * prob.dt);
  double mu = 0.0;
  double f = prob.value(x);
  Vector g = prob.gradient(x);
  NewtonOutcome out;
  for (out.iters = 0; out.iters < cfg.max_iters; ++out.iters) {
    const double scale = std::max(1.0, euler_lagrange_residual(prob.p, prob.unpack(x), prob.D).max_grad_v);
    if (prob.residual(g) <= cfg.grad_tol * scale) {
      out.converged = true;
      break;
    }
    const BlockTridiag h = fd_hessian(prob, x);
    bool stepped = false;
    for (int attempt = 0; attempt < 60 && !stepped; ++attempt) {
      const auto p = solve_damped(h, mu * kinetic, -g, prob.d);
      if (!p || !(g.dot(*p) < 0.0)) {
        mu = std::max(4.0 * mu, 1e-8);
        continue;
      }
      double t = 1.0;
      for (int ls = 0; ls < 30; ++ls) {
        const Vector xn = x + t * *p;
        const double fn = prob.value(xn);
        if (std::isfinite(fn) && fn <= f + 1e-4 * t * g.dot(*p)) {
          x = xn;
          f = fn;
          g = prob.gradient(x);
          stepped = true;
          break;
        }
        t *= 0.5;
      }
      if (stepped) mu = t == 1.0 ? mu * 0.25 : mu;
      else mu = std::max(4.0 * mu, 1e-8);
      if (mu < 1e-12) mu = 0.0;
    }
    if (!stepped) break;
  }
  out.x = std::move(x);
  return out;
}

// Gradient flow with RK4 substeps; sign = -1 descends, +1 ascends.
std::vector<WeightVector> flow(const Potential& p, const WeightVector& start, double dt, std::size_t n, double sign) {
  constexpr int kSub = 10;
  const double h = dt / kSub;
  std::vector<WeightVector> out{start};
  WeightVector w = start;
  for (std::size_t k = 1; k < n; ++k) {
    for (int s = 0; s < kSub; ++s) {
      const Vector k1 = sign * p.grad(w);
      const Vector k2 = sign * p.grad(w + 0.5 * h * k1);
      const Vector k3 = sign * p.grad(w + 0.5 * h * k2);
      const Vector k4 = sign * p.grad(w + h * k3);
      w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    out.push_back(w);
  }
  return out;
}

}  // namespace

MinimumActionResult minimum_action_path(const Potential& p, const WeightVector& w0, const WeightVector& wf, double T,
                                        std::size_t n_knots, double D, const PathOptConfig& cfg) {
  require(n_knots >= 10, "minimum_action_path: n_knots must be >= 10");
  require(T > 0.0, "minimum_action_path: T must be positive");
  require(D > 0.0, "minimum_action_path: D must be positive");
  check_dim(p, w0);
  check_dim(p, wf);
  const KnotProblem prob{p, w0, wf, T, n_knots, D, p.dim(), T / static_cast<double>(n_knots - 1)};
  const double bound = 1e3 * (1.0 + w0.norm() + wf.norm());

  auto make_path = [&](auto point_at) {
    Path path;
    for (std::size_t k = 0; k < n_knots; ++k) {
      path.times.push_back(k + 1 == n_knots ? T : static_cast<double>(k) * prob.dt);
      path.points.push_back(point_at(k, static_cast<double>(k) / static_cast<double>(n_knots - 1)));
    }
    return path;
  };
  std::vector<std::pair<std::string, Path>> starts;
  starts.emplace_back("linear", make_path([&](std::size_t, double s) -> WeightVector { return w0 + s * (wf - w0); }));
  // Flow interpolants are blended linearly onto the far endpoint.
  auto blended = [&](std::vector<WeightVector> pts, bool forward) -> std::optional<Path> {
    for (const auto& w : pts)
      if (!w.allFinite() || w.norm() > bound) return std::nullopt;
    const WeightVector miss = forward ? WeightVector(wf - pts.back()) : WeightVector(w0 - pts.front());
    return make_path(
        [&](std::size_t k, double s) -> WeightVector { return pts[k] + (forward ? s : 1.0 - s) * miss; });
  };
  if (auto fwd = blended(flow(p, w0, prob.dt, n_knots, -1.0), true)) starts.emplace_back("gradient_flow_forward", *fwd);
  {
    auto back = flow(p, wf, prob.dt, n_knots, +1.0);
    std::reverse(back.begin(), back.end());
    if (auto bwd = blended(back, false)) starts.emplace_back("gradient_flow_backward", *bwd);
  }

  std::vector<CriticalPath> found;
  for (auto& [label, init] : starts) {
    const NewtonOutcome o = damped_newton(prob, prob.pack(init), cfg);
    CriticalPath cp;
    cp.path = prob.unpack(o.x);
    cp.action = om_action(p, cp.path, D);
    const ElResidual el = euler_lagrange_residual(p, cp.path, D);
    cp.el_residual = el.discrete;
    cp.el_residual_fd = el.fd;
    cp.max_grad_v = el.max_grad_v;
    cp.converged = o.converged;
    cp.iterations = o.iters;
    cp.start = label;
    found.push_back(std::move(cp));
  }
  std::stable_sort(found.begin(), found.end(),
                   [](const auto& a, const auto& b) { return a.action.total < b.action.total; });
  MinimumActionResult result;
  for (auto& cp : found) {
    bool dup = false;
    for (const auto& kept : result.distinct) {
      double diff = 0.0;
      for (std::size_t k = 0; k < n_knots; ++k)
        diff = std::max(diff, (cp.path.points[k] - kept.path.points[k]).cwiseAbs().maxCoeff());
      dup = dup || diff < 1e-4 * (1.0 + w0.norm() + wf.norm());
    }
    if (!dup) result.distinct.push_back(cp);
  }
  result.best = result.distinct.front();
  return result;
}

// ---- transition ratios ------------------------------------------------------

json TransitionRatios::to_json() const {
  return {{"hits", hits}, {"ratios", ratios}, {"log_ratio_se", log_ratio_se}, {"n_runs", n_runs}};
}

TransitionRatios transition_ratio(const Potential& p, const WeightVector& w0,
                                  const std::vector<WeightVector>& candidates, double radius, double T,
                                  const DiffusionParams& params, std::size_t n_runs, std::size_t workers) {
  require(candidates.size() >= 2, "transition_ratio: need at least 2 candidates");
  require(radius > 0.0 && T > 0.0, "transition_ratio: radius and T must be positive");
  require(n_runs >= 1, "transition_ratio: n_runs must be >= 1");
  require(params.D >= 0.0 && params.dt > 0.0, "transition_ratio: invalid diffusion parameters");
  check_dim(p, w0);
  for (const auto& c : candidates) check_dim(p, c);
  const auto steps = static_cast<std::size_t>(std::llround(T / params.dt));
  constexpr std::size_t kChunk = 256;
  const std::size_t n_chunks = (n_runs + kChunk - 1) / kChunk;
  std::vector<std::vector<std::size_t>> chunk_hits(n_chunks, std::vector<std::size_t>(candidates.size(), 0));
  parallel_for(n_chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t count = std::min(kChunk, n_runs - begin);
    LangevinEnsemble ens(p, std::vector<WeightVector>(count, w0), params.D, params.dt, params.seed, begin);
    for (std::size_t k = 0; k < steps; ++k) ens.step();
    for (std::size_t a = 0; a < ens.active(); ++a) {
      const WeightVector w = ens.point(a);
      if (!w.allFinite()) throw SimulationError("transition_ratio: non-finite state");
      for (std::size_t i = 0; i < candidates.size(); ++i)
        if ((w - candidates[i]).norm() <= radius) ++chunk_hits[c][i];
    }
  });
  TransitionRatios out;
  out.n_runs = n_runs;
  out.hits.assign(candidates.size(), 0);
  for (const auto& ch : chunk_hits)
    for (std::size_t i = 0; i < ch.size(); ++i) out.hits[i] += ch[i];
  if (out.hits[0] == 0)
    throw SimulationError("transition_ratio: no run reached the reference candidate; increase radius, T or n_runs");
  const double n = static_cast<double>(n_runs);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.ratios.push_back(static_cast<double>(out.hits[i]) / static_cast<double>(out.hits[0]));
    auto var_log = [n](double h) { return h > 0 ? (1.0 - h / n) / h : std::numeric_limits<double>::infinity(); };
    out.log_ratio_se.push_back(i == 0 ? 0.0
                                      : std::sqrt(var_log(static_cast<double>(out.hits[i])) +
                                                  var_log(static_cast<double>(out.hits[0]))));
  }
  return out;
}

// ---- channel marginalization ------------------------------------------------

json ChannelReport::to_json() const {
  return {{"bin_centers", bin_centers},
          {"empirical", empirical},
          {"corrected", corrected},
          {"uncorrected", uncorrected},
          {"tv_corrected", tv_corrected},
          {"tv_uncorrected", tv_uncorrected},
          {"separation_ratio", separation_ratio},
          {"equilibrated", equilibrated},
          {"drift_z", drift_z},
          {"samples", samples}};
}

ChannelReport channel_marginal_check(const Channel2D& ch, double u0, double D, const DiffusionParams& params,
                                     std::size_t n_runs, std::size_t bins, std::size_t workers) {
  require(D > 0.0, "channel_marginal_check: D must be positive");
  require(params.dt > 0.0 && params.max_steps >= 100, "channel_marginal_check: need dt > 0 and max_steps >= 100");
  require(n_runs >= 2 && bins >= 2, "channel_marginal_check: need n_runs >= 2 and bins >= 2");
  const Polynomial& a = ch.base();
  const Polynomial& b = ch.transverse();
  const Polynomial d2a = a.derivative().derivative();
  ChannelReport rep;

  // Predicted u-densities on a fine grid over the box.
  constexpr std::size_t kGrid = 20001;
  const double lo = ch.box_lo(), hi = ch.box_hi();
  const double h = (hi - lo) / (kGrid - 1);
  double amin = std::numeric_limits<double>::infinity(), bmin = amin, a2max = 0.0;
  for (std::size_t i = 0; i < kGrid; ++i) {
    const double u = lo + h * static_cast<double>(i);
    amin = std::min(amin, a(u));
    bmin = std::min(bmin, b(u));
    a2max = std::max(a2max, std::abs(d2a(u)));
  }
  rep.separation_ratio = a2max > 0.0 ? bmin / a2max : std::numeric_limits<double>::infinity();
  if (rep.separation_ratio < 10.0)
    warn("channel_marginal_check: min b / max|a''| = " + std::to_string(rep.separation_ratio) +
         "; transverse relaxation is not much faster than the drift along u");
  auto dens = [&](double u, bool corrected) {
    const double base = std::exp(-(a(u) - amin) / D);
    return corrected ? base / std::sqrt(b(u)) : base;
  };
  // Simpson integral of a density on [x0, x1].
  auto integrate = [&](double x0, double x1, bool corrected) {
    constexpr int m = 64;
    const double s = (x1 - x0) / m;
    double acc = dens(x0, corrected) + dens(x1, corrected);
    for (int i = 1; i < m; ++i) acc += (i % 2 ? 4.0 : 2.0) * dens(x0 + s * i, corrected);
    return acc * s / 3.0;
  };
  // Histogram range: central region holding all but 1e-6 of either prediction.
  double range_lo = hi, range_hi = lo;
  for (bool corrected : {true, false}) {
    std::vector<double> cdf(kGrid, 0.0);
    for (std::size_t i = 1; i < kGrid; ++i) {
      const double u = lo + h * static_cast<double>(i);
      cdf[i] = cdf[i - 1] + 0.5 * h * (dens(u - h, corrected) + dens(u, corrected));
    }
    const double total = cdf.back();
    for (std::size_t i = 0; i < kGrid; ++i) {
      if (cdf[i] >= 5e-7 * total) {
        range_lo = std::min(range_lo, lo + h * static_cast<double>(i));
        break;
      }
    }
    for (std::size_t i = kGrid; i-- > 0;) {
      if (cdf[i] <= (1.0 - 5e-7) * total) {
        range_hi = std::max(range_hi, lo + h * static_cast<double>(i));
        break;
      }
    }
  }
  if (!(range_hi > range_lo)) {
    range_lo = lo;
    range_hi = hi;
  }
  const double z_corr = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < kGrid; i += 200) s += integrate(lo + h * i, std::min(hi, lo + h * (i + 200)), true);
    return s;
  }();
  const double z_unc = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < kGrid; i += 200) s += integrate(lo + h * i, std::min(hi, lo + h * (i + 200)), false);
    return s;
  }();
  stats::Histogram hist(range_lo, range_hi, bins);
  for (std::size_t i = 0; i < bins; ++i) {
    const double x0 = range_lo + hist.bin_width() * static_cast<double>(i);
    const double x1 = x0 + hist.bin_width();
    rep.bin_centers.push_back(hist.bin_center(i));
    rep.corrected.push_back(integrate(x0, x1, true) / z_corr);
    rep.uncorrected.push_back(integrate(x0, x1, false) / z_unc);
  }

  // Simulation: per-chain histograms merged in chain order.
  const std::size_t burn = params.max_steps / 10;
  constexpr std::size_t kThin = 10;
  constexpr std::size_t kChunk = 16;
  const std::size_t n_chunks = (n_runs + kChunk - 1) / kChunk;
  std::vector<stats::Histogram> partial(n_chunks, stats::Histogram(range_lo, range_hi, bins));
  std::vector<double> half_diff(n_runs, 0.0);
  WeightVector start(2);
  start << u0, 0.0;
  parallel_for(n_chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t count = std::min(kChunk, n_runs - begin);
    LangevinEnsemble ens(ch, std::vector<WeightVector>(count, start), D, params.dt, params.seed, begin);
    std::vector<double> s1(count, 0.0), s2(count, 0.0);
    std::vector<std::size_t> n1(count, 0), n2(count, 0);
    const std::size_t mid = burn + (params.max_steps - burn) / 2;
    for (std::size_t k = 1; k <= params.max_steps; ++k) {
      ens.step();
      if (k <= burn || k % kThin != 0) continue;
      for (std::size_t a = 0; a < count; ++a) {
        const double u = ens.coord(a, 0);
        if (!std::isfinite(u)) throw SimulationError("channel_marginal_check: non-finite state");
        partial[c].add(u);
        if (k <= mid) {
          s1[a] += u;
          ++n1[a];
        } else {
          s2[a] += u;
          ++n2[a];
        }
      }
    }
    for (std::size_t a = 0; a < count; ++a)
      half_diff[begin + a] = (n2[a] ? s2[a] / static_cast<double>(n2[a]) : 0.0) -
                             (n1[a] ? s1[a] / static_cast<double>(n1[a]) : 0.0);
  });
  stats::Histogram merged(range_lo, range_hi, bins);
  for (const auto& ph : partial) {
    for (std::size_t i = 0; i < bins; ++i) merged.counts[i] += ph.counts[i];
    merged.outside += ph.outside;
    merged.total += ph.total;
  }
  rep.samples = static_cast<std::size_t>(merged.total);
  rep.empirical = merged.probabilities();
  rep.tv_corrected = stats::total_variation(rep.empirical, rep.corrected);
  rep.tv_uncorrected = stats::total_variation(rep.empirical, rep.uncorrected);
  const double sd = std::sqrt(stats::variance(half_diff));
  rep.drift_z = sd > 0.0 ? stats::mean(half_diff) / (sd / std::sqrt(static_cast<double>(n_runs))) : 0.0;
  rep.equilibrated = std::abs(rep.drift_z) <= 4.0;
  return rep;
}

}  // namespace reachlab
