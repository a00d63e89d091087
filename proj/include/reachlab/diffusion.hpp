#pragma once
// Langevin and minibatch-SGD simulators, first-passage statistics, and the
// minibatch noise covariance.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "reachlab/landscape.hpp"
#include "reachlab/rng.hpp"
#include "reachlab/tasks.hpp"

namespace reachlab {

struct DiffusionParams {
  double D = 0.1;
  double dt = 1e-3;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DiffusionParams from_json(const nlohmann::json& j);
};

struct Path {
  std::vector<double> times;
  std::vector<WeightVector> points;
  bool truncated = false;  // stopped early (divergence)
  std::string note;

  std::size_t size() const { return points.size(); }
  // |times| == |points| >= 2 and uniform spacing to 1e-12 (relative).
  void validate() const;
  // Header t,w0,...,w{d-1}; every `thin`-th knot plus the last one.
  void write_csv(std::ostream& out, std::size_t thin = 1) const;
};

// Euler-Maruyama: w += dt f(w) + sqrt(2 D dt) xi, xi from stream (seed, 0).
Path simulate_langevin(const Potential& p, const WeightVector& w0, const DiffusionParams& params);

// Warn when dt times the largest Hessian eigenvalue at w exceeds 0.5.
void check_step_bound(const Potential& p, const WeightVector& w, double dt);

// Lockstep Euler-Maruyama ensemble. Run i uses stream (seed, first_stream + i)
// and its trajectory is independent of which other runs share the batch.
class LangevinEnsemble {
 public:
  LangevinEnsemble(const Potential& p, const std::vector<WeightVector>& starts, double D, double dt,
                   std::uint64_t seed, std::uint64_t first_stream = 0);

  void step();
  std::size_t active() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  // Coordinate j of the a-th active run.
  double coord(std::size_t a, std::size_t j) const { return state_[j * ids_.size() + a]; }
  WeightVector point(std::size_t a) const;
  // Original index of the a-th active run.
  std::size_t run_id(std::size_t a) const { return ids_[a]; }
  // Drop runs whose flag is set; keeps the survivors' order.
  void retire(const std::vector<char>& done);

 private:
  const Potential& p_;
  std::size_t dim_;
  double dt_;
  double sigma_;
  std::vector<std::size_t> ids_;
  std::vector<RandomStream> streams_;
  std::vector<double> state_, drift_, noise_;
};

struct EscapeStats {
  // Per-run passage time in run-index order; NaN marks a censored run.
  std::vector<double> samples;
  double mean = 0.0;
  double std = 0.0;
  double rate = 0.0;
  std::size_t n_censored = 0;

  std::size_t n_runs() const { return samples.size(); }
  // Median with censored runs ranked as +inf.
  double median_time() const;
  nlohmann::json to_json() const;
  // Fills mean/std/rate/n_censored from samples.
  static EscapeStats from_samples(std::vector<double> samples);
};

// First time |w - target| <= radius for each of n_runs Langevin runs.
// Throws SimulationError when every run is censored.
EscapeStats first_passage(const Potential& p, const WeightVector& w0, const WeightVector& target,
                          double radius, const DiffusionParams& params, std::size_t n_runs,
                          std::size_t workers = 1);

enum class BatchSampling { WithReplacement, WithoutReplacement, FullBatch };
enum class SgdNoise { Minibatch, IsotropicSurrogate };

struct SgdConfig {
  double eta = 0.05;
  std::size_t batch = 8;
  std::size_t max_steps = 10000;
  std::uint64_t seed = 0;
  BatchSampling sampling = BatchSampling::WithReplacement;
  SgdNoise noise = SgdNoise::Minibatch;

  void validate(std::size_t n) const;
  nlohmann::json to_json() const;
  static SgdConfig from_json(const nlohmann::json& j);
};

// w_{k+1} = w_k - eta * (minibatch data gradient + gamma w_k); time = k * eta.
// Stream (seed, stream_id). Loss > 1e6 or non-finite weights truncate the path.
Path simulate_sgd(const Task& t, const WeightVector& w0, const SgdConfig& cfg, std::uint64_t stream_id = 0);

// Empirical covariance of the minibatch data gradient over n_draws batches.
Matrix noise_covariance(const Task& t, const WeightVector& w, std::size_t batch, std::size_t n_draws,
                        std::uint64_t seed, BatchSampling sampling = BatchSampling::WithReplacement);

// Sigma_1 / B, with Sigma_1 the population covariance of per-sample gradients.
Matrix exact_noise_covariance(const Task& t, const WeightVector& w, std::size_t batch);

// First SGD step with full-dataset U(w) <= threshold, as time steps * eta.
// Run r uses stream (cfg.seed, r). Diverged runs count as censored.
EscapeStats convergence_time(const Task& t, const WeightVector& w0, double threshold, const SgdConfig& cfg,
                             std::size_t n_runs, std::size_t workers = 1);

}  // namespace reachlab
