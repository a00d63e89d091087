#include "reachlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "reachlab/errors.hpp"
#include "reachlab/json_util.hpp"
#include "reachlab/kernels.hpp"
#include "reachlab/log.hpp"
#include "reachlab/parallel.hpp"
#include "reachlab/stats.hpp"

namespace reachlab {

using nlohmann::json;

void DiffusionParams::validate() const {
  require(D >= 0.0 && std::isfinite(D), "DiffusionParams: D must be finite and >= 0");
  require(dt > 0.0 && std::isfinite(dt), "DiffusionParams: dt must be positive");
  require(max_steps >= 1, "DiffusionParams: max_steps must be >= 1");
}

json DiffusionParams::to_json() const { return {{"D", D}, {"dt", dt}, {"max_steps", max_steps}, {"seed", seed}}; }

DiffusionParams DiffusionParams::from_json(const json& j) {
  using namespace json_util;
  expect_keys(j, {"D", "dt", "max_steps", "seed"}, "diffusion");
  DiffusionParams p;
  p.D = get_or(j, "D", p.D);
  p.dt = get_or(j, "dt", p.dt);
  p.max_steps = get_or(j, "max_steps", p.max_steps);
  p.seed = get_or(j, "seed", p.seed);
  p.validate();
  return p;
}

void Path::validate() const {
  require(times.size() == points.size(), "Path: times and points differ in length");
  require(points.size() >= 2, "Path: need at least 2 knots");
  const double h = times[1] - times[0];
  require(h > 0.0, "Path: times must increase");
  for (std::size_t k = 1; k < times.size(); ++k)
    require(std::abs((times[k] - times[k - 1]) - h) <= 1e-12 * std::max(1.0, std::abs(times[k])),
            "Path: non-uniform time spacing");
}

void Path::write_csv(std::ostream& out, std::size_t thin) const {
  require(thin >= 1, "Path::write_csv: thin must be >= 1");
  const std::size_t d = points.empty() ? 0 : static_cast<std::size_t>(points.front().size());
  out << 't';
  for (std::size_t j = 0; j < d; ++j) out << ",w" << j;
  out << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < points.size(); ++k) {
    if (k % thin != 0 && k + 1 != points.size()) continue;
    out << times[k];
    for (std::size_t j = 0; j < d; ++j) out << ',' << points[k][static_cast<Eigen::Index>(j)];
    out << '\n';
  }
}

void check_step_bound(const Potential& p, const WeightVector& w, double dt) {
  const Vector ev = symmetric_eigenvalues(p.hessian(w));
  const double lmax = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
  if (dt * lmax >= 0.5)
    warn("dt * max|Hessian eigenvalue| = " + std::to_string(dt * lmax) + " >= 0.5 at the start point");
}

// ---- ensemble ---------------------------------------------------------------

LangevinEnsemble::LangevinEnsemble(const Potential& p, const std::vector<WeightVector>& starts, double D,
                                   double dt, std::uint64_t seed, std::uint64_t first_stream)
    : p_(p), dim_(p.dim()), dt_(dt), sigma_(std::sqrt(2.0 * D * dt)) {
  require(D >= 0.0 && dt > 0.0, "LangevinEnsemble: need D >= 0 and dt > 0");
  const std::size_t n = starts.size();
  ids_.resize(n);
  std::iota(ids_.begin(), ids_.end(), 0);
  streams_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) streams_.emplace_back(seed, first_stream + i);
  state_.resize(dim_ * n);
  for (std::size_t i = 0; i < n; ++i) {
    check_dim(p, starts[i]);
    for (std::size_t j = 0; j < dim_; ++j) state_[j * n + i] = starts[i][static_cast<Eigen::Index>(j)];
  }
  drift_.resize(state_.size());
  noise_.resize(state_.size());
}

void LangevinEnsemble::step() {
  const std::size_t n = ids_.size();
  if (n == 0) return;
  p_.drift_batch(state_, n, drift_);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t j = 0; j < dim_; ++j) noise_[j * n + a] = streams_[a].next_normal();
  kernels::em_update(state_, drift_, noise_, dt_, sigma_);
}

WeightVector LangevinEnsemble::point(std::size_t a) const {
  WeightVector w(static_cast<Eigen::Index>(dim_));
  for (std::size_t j = 0; j < dim_; ++j) w[static_cast<Eigen::Index>(j)] = coord(a, j);
  return w;
}

void LangevinEnsemble::retire(const std::vector<char>& done) {
  const std::size_t n = ids_.size();
  require(done.size() == n, "LangevinEnsemble::retire: flag count mismatch");
  std::size_t keep = 0;
  for (std::size_t a = 0; a < n; ++a) keep += done[a] ? 0 : 1;
  if (keep == n) return;
  std::vector<double> next(dim_ * keep);
  std::vector<std::size_t> ids;
  std::vector<RandomStream> streams;
  ids.reserve(keep);
  streams.reserve(keep);
  std::size_t b = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (done[a]) continue;
    for (std::size_t j = 0; j < dim_; ++j) next[j * keep + b] = state_[j * n + a];
    ids.push_back(ids_[a]);
    streams.push_back(streams_[a]);
    ++b;
  }
  state_ = std::move(next);
  ids_ = std::move(ids);
  streams_ = std::move(streams);
  drift_.resize(state_.size());
  noise_.resize(state_.size());
}

Path simulate_langevin(const Potential& p, const WeightVector& w0, const DiffusionParams& params) {
  params.validate();
  check_dim(p, w0);
  check_step_bound(p, w0, params.dt);
  LangevinEnsemble ens(p, {w0}, params.D, params.dt, params.seed, 0);
  Path path;
  path.times.reserve(params.max_steps + 1);
  path.points.reserve(params.max_steps + 1);
  path.times.push_back(0.0);
  path.points.push_back(w0);
  for (std::size_t k = 1; k <= params.max_steps; ++k) {
    ens.step();
    WeightVector w = ens.point(0);
    if (!w.allFinite())
      throw SimulationError("simulate_langevin: non-finite state at step " + std::to_string(k));
    path.times.push_back(static_cast<double>(k) * params.dt);
    path.points.push_back(std::move(w));
  }
  return path;
}

// ---- escape statistics ------------------------------------------------------

EscapeStats EscapeStats::from_samples(std::vector<double> samples) {
  EscapeStats s;
  s.samples = std::move(samples);
  std::vector<double> ok;
  for (double v : s.samples) {
    if (std::isnan(v)) ++s.n_censored;
    else ok.push_back(v);
  }
  if (!ok.empty()) {
    s.mean = stats::mean(ok);
    s.std = ok.size() >= 2 ? std::sqrt(stats::variance(ok)) : 0.0;
    s.rate = s.mean > 0.0 ? 1.0 / s.mean : std::numeric_limits<double>::infinity();
  }
  return s;
}

double EscapeStats::median_time() const {
  std::vector<double> v;
  for (double x : samples) v.push_back(std::isnan(x) ? std::numeric_limits<double>::infinity() : x);
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return stats::median(v);
}

json EscapeStats::to_json() const {
  json arr = json::array();
  for (double v : samples) arr.push_back(std::isnan(v) ? json(nullptr) : json(v));
  const double med = median_time();
  return {{"samples", arr},
          {"mean", mean},
          {"std", std},
          {"rate", std::isfinite(rate) ? json(rate) : json(nullptr)},
          {"median", std::isfinite(med) ? json(med) : json(nullptr)},
          {"n_censored", n_censored},
          {"n_runs", samples.size()}};
}

EscapeStats first_passage(const Potential& p, const WeightVector& w0, const WeightVector& target, double radius,
                          const DiffusionParams& params, std::size_t n_runs, std::size_t workers) {
  params.validate();
  require(radius > 0.0, "first_passage: radius must be positive");
  require(n_runs >= 1, "first_passage: n_runs must be >= 1");
  check_dim(p, w0);
  check_dim(p, target);
  check_step_bound(p, w0, params.dt);

  constexpr std::size_t kChunk = 64;
  constexpr std::size_t kCompactEvery = 256;
  const std::size_t d = p.dim();
  const double r2 = radius * radius;
  std::vector<double> times(n_runs, std::numeric_limits<double>::quiet_NaN());
  const std::size_t n_chunks = (n_runs + kChunk - 1) / kChunk;

  parallel_for(n_chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t count = std::min(kChunk, n_runs - begin);
    LangevinEnsemble ens(p, std::vector<WeightVector>(count, w0), params.D, params.dt, params.seed, begin);
    std::vector<char> done(count, 0);
    auto check = [&](std::size_t k) {
      bool any = false;
      for (std::size_t a = 0; a < ens.active(); ++a) {
        if (done[a]) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double e = ens.coord(a, j) - target[static_cast<Eigen::Index>(j)];
          s += e * e;
        }
        if (!std::isfinite(s))
          throw SimulationError("first_passage: non-finite state at step " + std::to_string(k) + " in run " +
                                std::to_string(begin + ens.run_id(a)));
        if (s <= r2) {
          times[begin + ens.run_id(a)] = static_cast<double>(k) * params.dt;
          done[a] = 1;
          any = true;
        }
      }
      return any;
    };
    check(0);
    for (std::size_t k = 1; k <= params.max_steps && ens.active() > 0; ++k) {
      ens.step();
      check(k);
      if (k % kCompactEvery == 0 || ens.active() <= 4) {
        ens.retire(done);
        done.assign(ens.active(), 0);
      }
    }
  });

  EscapeStats stats = EscapeStats::from_samples(std::move(times));
  if (stats.n_censored == n_runs)
    throw SimulationError("first_passage: all " + std::to_string(n_runs) +
                          " runs censored; increase max_steps or D");
  return stats;
}

// ---- SGD --------------------------------------------------------------------

void SgdConfig::validate(std::size_t n) const {
  require(eta > 0.0, "sgd: eta must be positive");
  require(batch >= 1, "sgd: batch must be >= 1");
  require(sampling != BatchSampling::WithoutReplacement || batch <= n,
          "sgd: batch larger than dataset without replacement");
  require(max_steps >= 1, "sgd: max_steps must be >= 1");
}

json SgdConfig::to_json() const {
  const char* s = sampling == BatchSampling::WithReplacement    ? "with_replacement"
                  : sampling == BatchSampling::WithoutReplacement ? "without_replacement"
                                                                  : "full_batch";
  return {{"eta", eta},
          {"batch", batch},
          {"max_steps", max_steps},
          {"seed", seed},
          {"sampling", s},
          {"noise", noise == SgdNoise::Minibatch ? "minibatch" : "isotropic"}};
}

SgdConfig SgdConfig::from_json(const json& j) {
  using namespace json_util;
  expect_keys(j, {"eta", "batch", "max_steps", "seed", "sampling", "noise"}, "sgd");
  SgdConfig c;
  c.eta = get_or(j, "eta", c.eta);
  c.batch = get_or(j, "batch", c.batch);
  c.max_steps = get_or(j, "max_steps", c.max_steps);
  c.seed = get_or(j, "seed", c.seed);
  const auto s = get_or<std::string>(j, "sampling", "with_replacement");
  if (s == "with_replacement") c.sampling = BatchSampling::WithReplacement;
  else if (s == "without_replacement") c.sampling = BatchSampling::WithoutReplacement;
  else if (s == "full_batch") c.sampling = BatchSampling::FullBatch;
  else throw ContractViolation("sgd: unknown sampling '" + s + "'");
  const auto nz = get_or<std::string>(j, "noise", "minibatch");
  if (nz == "minibatch") c.noise = SgdNoise::Minibatch;
  else if (nz == "isotropic") c.noise = SgdNoise::IsotropicSurrogate;
  else throw ContractViolation("sgd: unknown noise '" + nz + "'");
  return c;
}

namespace {

void draw_batch(RandomStream& rng, std::size_t n, std::size_t batch, BatchSampling sampling,
                std::vector<std::size_t>& idx, std::vector<std::size_t>& scratch) {
  idx.resize(sampling == BatchSampling::FullBatch ? n : batch);
  switch (sampling) {
    case BatchSampling::WithReplacement:
      for (auto& i : idx) i = static_cast<std::size_t>(rng.next_index(n));
      break;
    case BatchSampling::WithoutReplacement:
      scratch.resize(n);
      std::iota(scratch.begin(), scratch.end(), 0);
      for (std::size_t i = 0; i < batch; ++i) {
        std::swap(scratch[i], scratch[i + static_cast<std::size_t>(rng.next_index(n - i))]);
        idx[i] = scratch[i];
      }
      break;
    case BatchSampling::FullBatch:
      std::iota(idx.begin(), idx.end(), 0);
      break;
  }
}

// One SGD step; returns the update direction (gradient estimate incl. decay).
Vector sgd_direction(const Task& t, const WeightVector& w, const SgdConfig& cfg, RandomStream& rng,
                     std::vector<std::size_t>& idx, std::vector<std::size_t>& scratch) {
  const std::size_t n = t.data.size();
  if (cfg.noise == SgdNoise::IsotropicSurrogate && cfg.sampling != BatchSampling::FullBatch) {
    // Full gradient plus isotropic Gaussian noise with the minibatch noise trace.
    Vector g = grad_loss(t, w);
    const double tr = exact_noise_covariance(t, w, cfg.batch).trace();
    const double s = std::sqrt(tr / static_cast<double>(w.size()));
    for (Eigen::Index j = 0; j < g.size(); ++j) g[j] += s * rng.next_normal();
    return g;
  }
  draw_batch(rng, n, cfg.batch, cfg.sampling, idx, scratch);
  return minibatch_grad(t, w, idx);
}

}  // namespace

Path simulate_sgd(const Task& t, const WeightVector& w0, const SgdConfig& cfg, std::uint64_t stream_id) {
  cfg.validate(t.data.size());
  require(static_cast<std::size_t>(w0.size()) == t.dim(), "simulate_sgd: w0 has wrong dimension");
  RandomStream rng(cfg.seed, stream_id);
  Path path;
  path.times.push_back(0.0);
  path.points.push_back(w0);
  WeightVector w = w0;
  std::vector<std::size_t> idx, scratch;
  for (std::size_t k = 1; k <= cfg.max_steps; ++k) {
    const Vector g = sgd_direction(t, w, cfg, rng, idx, scratch);
    kernels::axpy(-cfg.eta, {g.data(), static_cast<std::size_t>(g.size())}, {w.data(), static_cast<std::size_t>(w.size())});
    const bool finite = w.allFinite();
    if (!finite || ((k % 50 == 0 || k == cfg.max_steps) && loss(t, w) > 1e6)) {
      path.truncated = true;
      path.note = "diverged at step " + std::to_string(k);
      if (finite) {
        path.times.push_back(static_cast<double>(k) * cfg.eta);
        path.points.push_back(w);
      }
      break;
    }
    path.times.push_back(static_cast<double>(k) * cfg.eta);
    path.points.push_back(w);
  }
  return path;
}

Matrix noise_covariance(const Task& t, const WeightVector& w, std::size_t batch, std::size_t n_draws,
                        std::uint64_t seed, BatchSampling sampling) {
  require(n_draws >= 100, "noise_covariance: n_draws must be >= 100");
  require(batch >= 1, "noise_covariance: batch must be >= 1");
  const std::size_t n = t.data.size();
  require(sampling != BatchSampling::WithoutReplacement || batch <= n,
          "noise_covariance: batch larger than dataset without replacement");
  ModelSpec m = t.model;
  m.weight_decay = 0.0;  // the decay term is deterministic
  const Task data_only(t.data, m);
  RandomStream rng(seed, 0);
  std::vector<std::size_t> idx, scratch;
  const auto d = w.size();
  Vector mean = Vector::Zero(d);
  Matrix m2 = Matrix::Zero(d, d);
  // Welford accumulation.
  for (std::size_t k = 0; k < n_draws; ++k) {
    draw_batch(rng, n, batch, sampling, idx, scratch);
    const Vector g = minibatch_grad(data_only, w, idx);
    const Vector delta = g - mean;
    mean += delta / static_cast<double>(k + 1);
    m2.noalias() += delta * (g - mean).transpose();
  }
  Matrix cov = m2 / static_cast<double>(n_draws - 1);
  return 0.5 * (cov + cov.transpose());
}

Matrix exact_noise_covariance(const Task& t, const WeightVector& w, std::size_t batch) {
  require(batch >= 1, "exact_noise_covariance: batch must be >= 1");
  const Matrix g = per_sample_grads(t, w);
  const Eigen::RowVectorXd mean = g.colwise().mean();
  const Matrix c = g.rowwise() - mean;
  return (c.transpose() * c) / (static_cast<double>(g.rows()) * static_cast<double>(batch));
}

EscapeStats convergence_time(const Task& t, const WeightVector& w0, double threshold, const SgdConfig& cfg,
                             std::size_t n_runs, std::size_t workers) {
  cfg.validate(t.data.size());
  require(n_runs >= 1, "convergence_time: n_runs must be >= 1");
  require(static_cast<std::size_t>(w0.size()) == t.dim(), "convergence_time: w0 has wrong dimension");
  std::vector<double> times(n_runs, std::numeric_limits<double>::quiet_NaN());
  parallel_for(n_runs, workers, [&](std::size_t r) {
    if (loss(t, w0) <= threshold) {
      times[r] = 0.0;
      return;
    }
    RandomStream rng(cfg.seed, r);
    WeightVector w = w0;
    std::vector<std::size_t> idx, scratch;
    for (std::size_t k = 1; k <= cfg.max_steps; ++k) {
      const Vector g = sgd_direction(t, w, cfg, rng, idx, scratch);
      kernels::axpy(-cfg.eta, {g.data(), static_cast<std::size_t>(g.size())}, {w.data(), static_cast<std::size_t>(w.size())});
      if (!w.allFinite()) return;
      const double u = loss(t, w);
      if (u > 1e6) return;
      if (u <= threshold) {
        times[r] = static_cast<double>(k) * cfg.eta;
        return;
      }
    }
  });
  EscapeStats stats = EscapeStats::from_samples(std::move(times));
  if (stats.n_censored == n_runs)
    throw SimulationError("convergence_time: all " + std::to_string(n_runs) +
                          " runs censored; increase max_steps or raise the threshold");
  return stats;
}

}  // namespace reachlab
