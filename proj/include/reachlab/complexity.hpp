#pragma once
// Information complexity of a task under a Gaussian prior N(0, lambda2 I) and
// Gaussian posterior N(w0, Sigma), and the asymmetric task distance built on it.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "reachlab/linalg.hpp"
#include "reachlab/tasks.hpp"

namespace reachlab {

struct GaussianPosterior {
  WeightVector mean;
  Matrix cov;

  GaussianPosterior(WeightVector mean, Matrix cov);
};

struct FisherMatrix {
  Matrix matrix;

  explicit FisherMatrix(Matrix m);
  double trace() const { return matrix.trace(); }
};

// KL(N(w0, Sigma) || N(0, lambda2 I)) in nats. Returns +inf when Sigma is
// singular and writes the reason to *diagnostic if given.
double gaussian_kl(const GaussianPosterior& q, double lambda2, std::string* diagnostic = nullptr);

// Exact class-expectation Fisher at w0.
FisherMatrix fisher(const Task& t, const WeightVector& w0);

// (beta / 2) (H + beta / (2 lambda2) I)^-1
Matrix optimal_sigma(const Matrix& h, double beta, double lambda2);

struct ComplexityReport {
  double beta = 0.0;
  double lambda2 = 0.0;
  double loss_term = 0.0;    // L_D(w0), no weight decay
  double norm_term = 0.0;    // |w0|^2 / lambda2
  double logdet_term = 0.0;  // log |2 lambda2 / beta F + I|
  double total = 0.0;        // loss + beta / 2 (norm + logdet)

  nlohmann::json to_json() const;
};

// Assemble the report from its parts; `curvature` stands in for the Hessian.
ComplexityReport complexity_report(double loss_term, const WeightVector& w0, const Matrix& curvature,
                                   double beta, double lambda2);

// C_beta at w0 with the Fisher as curvature.
ComplexityReport c_beta(const Task& t, const WeightVector& w0, double beta, double lambda2);

struct TrainerConfig {
  double step = 0.1;
  std::size_t max_iters = 20000;
  double grad_tol = 1e-8;
  std::uint64_t seed = 0;
  double init_scale = 0.5;

  nlohmann::json to_json() const;
  static TrainerConfig from_json(const nlohmann::json& j);
};

struct TrainResult {
  WeightVector w;
  bool converged = false;
  std::size_t iters = 0;
  double grad_norm = 0.0;
  double objective = 0.0;
};

// Full-batch gradient descent on data_loss + (decay / 2) |w|^2 from `start`.
// The step is capped at 1 / decay and halved whenever the objective rises.
// Throws SimulationError on non-finite iterates.
TrainResult train_full_batch(const Task& t, double decay, const TrainerConfig& cfg,
                             const WeightVector& start);

// Weight decay used to train complexity minimizers: the model's own decay, or
// beta / (2 lambda2) when the model carries none.
double complexity_weight_decay(const ModelSpec& m, double beta, double lambda2);

// Minimizer of the training loss from the seeded initialization.
TrainResult train_minimizer(const Task& t, double decay, const TrainerConfig& cfg);

struct StructurePoint {
  double beta = 0.0;
  double kl_nats = 0.0;
  double expected_loss = 0.0;  // L(w0) + tr(F Sigma*) / 2
  double point_loss = 0.0;     // L(w0)
  bool converged = false;
};

struct StructureCurve {
  std::vector<StructurePoint> points;

  // Loss nonincreasing in KL over converged points, to `tol`.
  bool is_monotone(double tol = 1e-6) const;
  // Linear interpolation of expected_loss at a KL ordinate within the
  // converged range; nullopt outside it.
  std::optional<double> loss_at(double kl) const;
  nlohmann::json to_json() const;
};

// For each beta (descending), train w0 on L + beta / (2 lambda2) |w|^2
// (warm-started from the previous beta), set Sigma* from the Fisher at w0,
// and record (KL(Q || P), L(w0) + tr(F Sigma*) / 2).
StructureCurve structure_curve(const Task& t, const std::vector<double>& beta_grid, double lambda2,
                               const TrainerConfig& cfg);

struct DistanceDetail {
  double value = 0.0;        // C(d1 u d2) - C(d1)
  ComplexityReport source;   // C(d1)
  ComplexityReport joint;    // C(d1 u d2)
  bool converged = false;
};

// d_beta(d1 -> d2) with both complexities at their own trained minimizers.
// Throws SimulationError naming the dataset whose training diverged.
DistanceDetail task_distance_detail(const Dataset& d1, const Dataset& d2, const ModelSpec& model,
                                    double beta, double lambda2, const TrainerConfig& cfg);
double task_distance(const Dataset& d1, const Dataset& d2, const ModelSpec& model, double beta,
                     double lambda2, const TrainerConfig& cfg);

struct DistanceMatrix {
  std::vector<std::string> ids;
  // cells[i][j] = d(i -> j); nullopt marks a failed pair.
  std::vector<std::vector<std::optional<double>>> cells;
  std::vector<std::vector<std::string>> errors;

  std::size_t size() const { return ids.size(); }
  nlohmann::json to_json() const;
  // Matrix form with row/column headers = task ids; failed cells are empty.
  std::string to_csv() const;
};

struct NamedDataset {
  std::string id;
  Dataset data;
};

DistanceMatrix distance_matrix(const std::vector<NamedDataset>& tasks, const ModelSpec& model,
                               double beta, double lambda2, const TrainerConfig& cfg,
                               std::size_t workers = 1);

}  // namespace reachlab
