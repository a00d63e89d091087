#include "reachlab/complexity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <iomanip>

#include "reachlab/errors.hpp"
#include "reachlab/json_util.hpp"
#include "reachlab/parallel.hpp"

namespace reachlab {

using nlohmann::json;

GaussianPosterior::GaussianPosterior(WeightVector m, Matrix c) : mean(std::move(m)), cov(std::move(c)) {
  require(cov.rows() == mean.size() && cov.cols() == mean.size(),
          "GaussianPosterior: covariance shape does not match mean");
  require(is_symmetric(cov, 1e-10 * std::max(1.0, cov.cwiseAbs().maxCoeff())),
          "GaussianPosterior: covariance not symmetric");
  const Vector ev = symmetric_eigenvalues(cov);
  require(ev.size() == 0 || ev.minCoeff() >= -1e-10, "GaussianPosterior: covariance not PSD");
}

FisherMatrix::FisherMatrix(Matrix m) : matrix(std::move(m)) {
  require(is_symmetric(matrix, 1e-10 * std::max(1.0, matrix.cwiseAbs().maxCoeff())),
          "FisherMatrix: not symmetric");
  const Vector ev = symmetric_eigenvalues(matrix);
  // Scale by the largest entry: the Frobenius norm underflows for saturated models.
  const double scale = matrix.size() ? matrix.cwiseAbs().maxCoeff() * static_cast<double>(matrix.rows()) : 0.0;
  require(ev.size() == 0 || ev.minCoeff() >= -1e-8 * scale, "FisherMatrix: not PSD");
}

double gaussian_kl(const GaussianPosterior& q, double lambda2, std::string* diagnostic) {
  require(lambda2 > 0.0, "gaussian_kl: lambda2 must be positive");
  const Vector ev = symmetric_eigenvalues(q.cov);
  // Sum_i (s_i - log s_i - 1) with s_i = sigma_i / lambda2 equals
  // tr(Sigma)/lambda2 + k log lambda2 - log|Sigma| - k term by term, and is
  // exactly zero when Sigma = lambda2 I.
  double acc = 0.0;
  for (double e : ev) {
    if (!(e > 0.0)) {
      if (diagnostic)
        *diagnostic = "singular covariance: eigenvalue " + std::to_string(e) + " <= 0";
      return std::numeric_limits<double>::infinity();
    }
    const double s = e / lambda2;
    acc += (s - 1.0) - std::log(s);
  }
  acc += q.mean.squaredNorm() / lambda2;
  return 0.5 * acc;
}

FisherMatrix fisher(const Task& t, const WeightVector& w0) { return FisherMatrix(model_fisher(t, w0)); }

Matrix optimal_sigma(const Matrix& h, double beta, double lambda2) {
  require(beta > 0.0 && lambda2 > 0.0, "optimal_sigma: beta and lambda2 must be positive");
  require(h.rows() == h.cols(), "optimal_sigma: H must be square");
  Matrix a = 0.5 * (h + h.transpose());
  a.diagonal().array() += beta / (2.0 * lambda2);
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("optimal_sigma: H + ridge is not positive definite");
  Matrix inv = llt.solve(Matrix::Identity(h.rows(), h.cols()));
  inv = 0.5 * (inv + inv.transpose());
  return 0.5 * beta * inv;
}

json ComplexityReport::to_json() const {
  return {{"beta", beta},           {"lambda2", lambda2},         {"loss_term", loss_term},
          {"norm_term", norm_term}, {"logdet_term", logdet_term}, {"total", total}};
}

ComplexityReport complexity_report(double loss_term, const WeightVector& w0, const Matrix& curvature,
                                   double beta, double lambda2) {
  require(beta > 0.0 && lambda2 > 0.0, "c_beta: beta and lambda2 must be positive");
  require(curvature.rows() == w0.size() && curvature.cols() == w0.size(),
          "c_beta: curvature shape does not match w0");
  ComplexityReport r;
  r.beta = beta;
  r.lambda2 = lambda2;
  r.loss_term = loss_term;
  r.norm_term = w0.squaredNorm() / lambda2;
  const Vector ev = symmetric_eigenvalues(0.5 * (curvature + curvature.transpose()));
  const double scale = 2.0 * lambda2 / beta;
  double logdet = 0.0;
  for (double e : ev) logdet += std::log1p(std::max(scale * e, 0.0));
  r.logdet_term = logdet;
  r.total = r.loss_term + 0.5 * beta * (r.norm_term + r.logdet_term);
  return r;
}

ComplexityReport c_beta(const Task& t, const WeightVector& w0, double beta, double lambda2) {
  return complexity_report(data_loss(t, w0), w0, model_fisher(t, w0), beta, lambda2);
}

// ---- training ---------------------------------------------------------------

json TrainerConfig::to_json() const {
  return {{"step", step}, {"max_iters", max_iters}, {"grad_tol", grad_tol}, {"seed", seed}, {"init_scale", init_scale}};
}

TrainerConfig TrainerConfig::from_json(const json& j) {
  using namespace json_util;
  expect_keys(j, {"step", "max_iters", "grad_tol", "seed", "init_scale"}, "trainer");
  TrainerConfig c;
  c.step = get_or(j, "step", c.step);
  c.max_iters = get_or(j, "max_iters", c.max_iters);
  c.grad_tol = get_or(j, "grad_tol", c.grad_tol);
  c.seed = get_or(j, "seed", c.seed);
  c.init_scale = get_or(j, "init_scale", c.init_scale);
  require(c.step > 0.0 && c.grad_tol > 0.0, "trainer: step and grad_tol must be positive");
  return c;
}

TrainResult train_full_batch(const Task& t, double decay, const TrainerConfig& cfg, const WeightVector& start) {
  require(decay >= 0.0, "train_full_batch: decay must be non-negative");
  require(static_cast<std::size_t>(start.size()) == t.dim(), "train_full_batch: start has wrong dimension");
  ModelSpec m = t.model;
  m.weight_decay = decay;
  const Task local(t.data, m);
  double step = decay > 0.0 ? std::min(cfg.step, 1.0 / decay) : cfg.step;
  TrainResult r;
  r.w = start;
  r.objective = loss(local, r.w);
  for (r.iters = 0; r.iters < cfg.max_iters; ++r.iters) {
    const Vector g = grad_loss(local, r.w);
    r.grad_norm = g.norm();
    if (!std::isfinite(r.grad_norm)) throw SimulationError("training diverged: non-finite gradient");
    if (r.grad_norm <= cfg.grad_tol) {
      r.converged = true;
      return r;
    }
    for (int halvings = 0;; ++halvings) {
      WeightVector next = r.w - step * g;
      const double obj = loss(local, next);
      // Changes below the rounding level of the objective count as no increase.
      if (std::isfinite(obj) && obj <= r.objective + 1e-13 * (1.0 + std::abs(r.objective))) {
        r.w = std::move(next);
        r.objective = obj;
        break;
      }
      if (halvings >= 60) {
        // No descent possible at machine precision: stationary to rounding.
        r.converged = r.grad_norm <= std::sqrt(cfg.grad_tol);
        return r;
      }
      step *= 0.5;
    }
  }
  r.grad_norm = grad_loss(local, r.w).norm();
  r.converged = r.grad_norm <= cfg.grad_tol;
  return r;
}

double complexity_weight_decay(const ModelSpec& m, double beta, double lambda2) {
  require(beta > 0.0 && lambda2 > 0.0, "complexity_weight_decay: beta and lambda2 must be positive");
  return m.weight_decay > 0.0 ? m.weight_decay : beta / (2.0 * lambda2);
}

TrainResult train_minimizer(const Task& t, double decay, const TrainerConfig& cfg) {
  return train_full_batch(t, decay, cfg, initial_weights(t.model, cfg.seed, cfg.init_scale));
}

// ---- structure function -----------------------------------------------------

bool StructureCurve::is_monotone(double tol) const {
  std::vector<StructurePoint> pts;
  for (const auto& p : points)
    if (p.converged) pts.push_back(p);
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.kl_nats < b.kl_nats; });
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i].expected_loss > pts[i - 1].expected_loss + tol) return false;
  return true;
}

std::optional<double> StructureCurve::loss_at(double kl) const {
  std::vector<StructurePoint> pts;
  for (const auto& p : points)
    if (p.converged) pts.push_back(p);
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.kl_nats < b.kl_nats; });
  if (pts.empty() || kl < pts.front().kl_nats || kl > pts.back().kl_nats) return std::nullopt;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (kl <= pts[i].kl_nats) {
      const double span = pts[i].kl_nats - pts[i - 1].kl_nats;
      if (span <= 0.0) return pts[i].expected_loss;
      const double a = (kl - pts[i - 1].kl_nats) / span;
      return (1 - a) * pts[i - 1].expected_loss + a * pts[i].expected_loss;
    }
  }
  return pts.back().expected_loss;
}

json StructureCurve::to_json() const {
  json arr = json::array();
  for (const auto& p : points)
    arr.push_back({{"beta", p.beta}, {"kl_nats", p.kl_nats}, {"expected_loss", p.expected_loss},
                   {"point_loss", p.point_loss}, {"converged", p.converged}});
  return {{"points", arr}, {"monotone", is_monotone()}};
}

StructureCurve structure_curve(const Task& t, const std::vector<double>& beta_grid, double lambda2,
                               const TrainerConfig& cfg) {
  require(lambda2 > 0.0, "structure_curve: lambda2 must be positive");
  require(!beta_grid.empty(), "structure_curve: empty beta grid");
  for (std::size_t i = 0; i < beta_grid.size(); ++i) {
    require(beta_grid[i] > 0.0, "structure_curve: beta values must be positive");
    require(i == 0 || beta_grid[i] < beta_grid[i - 1], "structure_curve: beta grid must be descending");
  }
  StructureCurve curve;
  WeightVector w = initial_weights(t.model, cfg.seed, cfg.init_scale);
  for (double beta : beta_grid) {
    const TrainResult tr = train_full_batch(t, beta / lambda2, cfg, w);
    w = tr.w;
    const Matrix F = model_fisher(t, w);
    const Matrix sigma = optimal_sigma(F, beta, lambda2);
    StructurePoint p;
    p.beta = beta;
    p.converged = tr.converged;
    p.kl_nats = gaussian_kl(GaussianPosterior(w, sigma), lambda2);
    p.point_loss = data_loss(t, w);
    p.expected_loss = p.point_loss + 0.5 * (F.cwiseProduct(sigma)).sum();
    curve.points.push_back(p);
  }
  return curve;
}

// ---- distance ---------------------------------------------------------------

namespace {

ComplexityReport trained_complexity(const Dataset& d, const ModelSpec& model, double beta, double lambda2,
                                    const TrainerConfig& cfg, const std::string& which, bool& converged) {
  const Task t(d, model);
  TrainResult tr;
  try {
    tr = train_minimizer(t, complexity_weight_decay(model, beta, lambda2), cfg);
  } catch (const SimulationError& e) {
    throw SimulationError("training failed on " + which + ": " + e.what());
  }
  converged = converged && tr.converged;
  return c_beta(t, tr.w, beta, lambda2);
}

}  // namespace

DistanceDetail task_distance_detail(const Dataset& d1, const Dataset& d2, const ModelSpec& model, double beta,
                                    double lambda2, const TrainerConfig& cfg) {
  require(d1.classes <= model.classes && d2.classes <= model.classes,
          "task_distance: datasets must share the model's declared label space");
  DistanceDetail out;
  out.converged = true;
  out.source = trained_complexity(d1, model, beta, lambda2, cfg, "source dataset", out.converged);
  out.joint = trained_complexity(concat(d1, d2), model, beta, lambda2, cfg, "union dataset", out.converged);
  out.value = out.joint.total - out.source.total;
  return out;
}

double task_distance(const Dataset& d1, const Dataset& d2, const ModelSpec& model, double beta, double lambda2,
                     const TrainerConfig& cfg) {
  return task_distance_detail(d1, d2, model, beta, lambda2, cfg).value;
}

json DistanceMatrix::to_json() const {
  json m = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < cells[i].size(); ++j) row.push_back(cells[i][j] ? json(*cells[i][j]) : json(nullptr));
    m.push_back(row);
  }
  return {{"ids", ids}, {"matrix", m}, {"errors", errors}};
}

std::string DistanceMatrix::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17) << "task";
  for (const auto& id : ids) os << ',' << id;
  os << '\n';
  for (std::size_t i = 0; i < cells.size(); ++i) {
    os << ids[i];
    for (const auto& c : cells[i]) {
      os << ',';
      if (c) os << *c;
    }
    os << '\n';
  }
  return os.str();
}

DistanceMatrix distance_matrix(const std::vector<NamedDataset>& tasks, const ModelSpec& model, double beta,
                               double lambda2, const TrainerConfig& cfg, std::size_t workers) {
  require(tasks.size() >= 2, "distance_matrix: need at least 2 tasks");
  const std::size_t n = tasks.size();
  DistanceMatrix out;
  for (const auto& t : tasks) out.ids.push_back(t.id);
  out.cells.assign(n, std::vector<std::optional<double>>(n));
  out.errors.assign(n, std::vector<std::string>(n));

  std::vector<std::optional<double>> single(n);
  std::vector<std::string> single_err(n);
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      bool conv = true;
      single[i] = trained_complexity(tasks[i].data, model, beta, lambda2, cfg, tasks[i].id, conv).total;
    } catch (const std::exception& e) {
      single_err[i] = e.what();
    }
  });
  parallel_for(n * n, workers, [&](std::size_t k) {
    const std::size_t i = k / n, j = k % n;
    if (!single[i]) {
      out.errors[i][j] = single_err[i];
      return;
    }
    try {
      bool conv = true;
      const double joint = trained_complexity(concat(tasks[i].data, tasks[j].data), model, beta, lambda2, cfg,
                                              tasks[i].id + " u " + tasks[j].id, conv)
                               .total;
      out.cells[i][j] = joint - *single[i];
    } catch (const std::exception& e) {
      out.errors[i][j] = e.what();
    }
  });
  return out;
}

}  // namespace reachlab
