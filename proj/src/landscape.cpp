#include "reachlab/landscape.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "reachlab/errors.hpp"
#include "reachlab/json_util.hpp"
#include "reachlab/kernels.hpp"

namespace reachlab {

using nlohmann::json;

Vector Potential::laplacian_grad(const WeightVector& w) const {
  constexpr double h = 1e-5;
  Vector g(w.size());
  WeightVector x = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double up = hessian(x).trace();
    x[i] = xi - h;
    const double dn = hessian(x).trace();
    x[i] = xi;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

void Potential::drift_batch(std::span<const double> states, std::size_t n_runs,
                            std::span<double> out) const {
  const std::size_t d = dim();
  require(states.size() == d * n_runs && out.size() == d * n_runs,
          "drift_batch: state buffer does not match dim * n_runs");
  WeightVector w(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n_runs; ++i) {
    for (std::size_t j = 0; j < d; ++j) w[static_cast<Eigen::Index>(j)] = states[j * n_runs + i];
    const Vector g = grad(w);
    for (std::size_t j = 0; j < d; ++j) out[j * n_runs + i] = -g[static_cast<Eigen::Index>(j)];
  }
}

// ---- Polynomial -------------------------------------------------------------

Polynomial::Polynomial(std::vector<double> coeffs) : coeffs_(std::move(coeffs)) {}

double Polynomial::operator()(double u) const {
  double acc = 0.0;
  for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * u + *it;
  return acc;
}

Polynomial Polynomial::derivative() const {
  if (coeffs_.size() <= 1) return Polynomial{};
  std::vector<double> d(coeffs_.size() - 1);
  for (std::size_t k = 1; k < coeffs_.size(); ++k) d[k - 1] = static_cast<double>(k) * coeffs_[k];
  return Polynomial(std::move(d));
}

// ---- Zero -------------------------------------------------------------------

ZeroPotential::ZeroPotential(std::size_t dim) : dim_(dim) {
  require(dim >= 1, "ZeroPotential: dim must be positive");
}
double ZeroPotential::value(const WeightVector& w) const {
  check_dim(*this, w);
  return 0.0;
}
Vector ZeroPotential::grad(const WeightVector& w) const {
  check_dim(*this, w);
  return Vector::Zero(w.size());
}
Matrix ZeroPotential::hessian(const WeightVector& w) const {
  check_dim(*this, w);
  return Matrix::Zero(w.size(), w.size());
}
Vector ZeroPotential::laplacian_grad(const WeightVector& w) const { return grad(w); }
void ZeroPotential::drift_batch(std::span<const double> states, std::size_t n_runs,
                                std::span<double> out) const {
  require(states.size() == dim_ * n_runs && out.size() == states.size(),
          "drift_batch: state buffer does not match dim * n_runs");
  std::fill(out.begin(), out.end(), 0.0);
}
json ZeroPotential::to_json() const { return {{"name", "zero"}, {"dim", dim_}}; }

// ---- Quadratic --------------------------------------------------------------

Quadratic::Quadratic(Vector curvature) : a_(std::move(curvature)) {
  require(a_.size() >= 1 && a_.allFinite(), "Quadratic: curvature must be a finite non-empty vector");
}
double Quadratic::value(const WeightVector& w) const {
  check_dim(*this, w);
  return 0.5 * (a_.array() * w.array().square()).sum();
}
Vector Quadratic::grad(const WeightVector& w) const {
  check_dim(*this, w);
  return a_.cwiseProduct(w);
}
Matrix Quadratic::hessian(const WeightVector& w) const {
  check_dim(*this, w);
  return a_.asDiagonal();
}
Vector Quadratic::laplacian_grad(const WeightVector& w) const {
  check_dim(*this, w);
  return Vector::Zero(w.size());
}
void Quadratic::drift_batch(std::span<const double> states, std::size_t n_runs,
                            std::span<double> out) const {
  const std::size_t d = dim();
  require(states.size() == d * n_runs && out.size() == states.size(),
          "drift_batch: state buffer does not match dim * n_runs");
  for (std::size_t j = 0; j < d; ++j)
    kernels::linear_drift(a_[static_cast<Eigen::Index>(j)], states.subspan(j * n_runs, n_runs),
                          out.subspan(j * n_runs, n_runs));
}
json Quadratic::to_json() const { return {{"name", "quadratic"}, {"a", json_util::from_vector(a_)}}; }

// ---- DoubleWell1D -----------------------------------------------------------

double DoubleWell1D::value(const WeightVector& w) const {
  check_dim(*this, w);
  const double s = w[0] * w[0] - 1.0;
  return 0.25 * s * s;
}
Vector DoubleWell1D::grad(const WeightVector& w) const {
  check_dim(*this, w);
  Vector g(1);
  g[0] = (w[0] * w[0]) * w[0] - w[0];
  return g;
}
Matrix DoubleWell1D::hessian(const WeightVector& w) const {
  check_dim(*this, w);
  Matrix h(1, 1);
  h(0, 0) = 3.0 * w[0] * w[0] - 1.0;
  return h;
}
Vector DoubleWell1D::laplacian_grad(const WeightVector& w) const {
  check_dim(*this, w);
  Vector g(1);
  g[0] = 6.0 * w[0];
  return g;
}
void DoubleWell1D::drift_batch(std::span<const double> states, std::size_t n_runs,
                               std::span<double> out) const {
  require(states.size() == n_runs && out.size() == n_runs,
          "drift_batch: state buffer does not match dim * n_runs");
  kernels::double_well_drift(states, out);
}
json DoubleWell1D::to_json() const { return {{"name", "double_well"}}; }

// ---- Channel2D --------------------------------------------------------------

Channel2D::Channel2D(Polynomial a, Polynomial b, double box_lo, double box_hi)
    : a_(std::move(a)), b_(std::move(b)), box_lo_(box_lo), box_hi_(box_hi) {
  require(box_hi > box_lo, "Channel2D: empty simulation box");
  da_ = a_.derivative();
  d2a_ = da_.derivative();
  d3a_ = d2a_.derivative();
  db_ = b_.derivative();
  d2b_ = db_.derivative();
  d3b_ = d2b_.derivative();
  constexpr int kProbe = 2001;
  for (int i = 0; i < kProbe; ++i) {
    const double u = box_lo + (box_hi - box_lo) * i / (kProbe - 1);
    if (!(b_(u) > 0.0))
      throw ContractViolation("Channel2D: transverse curvature b(u) must be positive on the box; b(" +
                              std::to_string(u) + ") = " + std::to_string(b_(u)));
  }
}
double Channel2D::value(const WeightVector& w) const {
  check_dim(*this, w);
  return a_(w[0]) + 0.5 * b_(w[0]) * w[1] * w[1];
}
Vector Channel2D::grad(const WeightVector& w) const {
  check_dim(*this, w);
  const double u = w[0], v = w[1];
  Vector g(2);
  g[0] = da_(u) + 0.5 * db_(u) * v * v;
  g[1] = b_(u) * v;
  return g;
}
Matrix Channel2D::hessian(const WeightVector& w) const {
  check_dim(*this, w);
  const double u = w[0], v = w[1];
  Matrix h(2, 2);
  h(0, 0) = d2a_(u) + 0.5 * d2b_(u) * v * v;
  h(0, 1) = h(1, 0) = db_(u) * v;
  h(1, 1) = b_(u);
  return h;
}
Vector Channel2D::laplacian_grad(const WeightVector& w) const {
  check_dim(*this, w);
  const double u = w[0], v = w[1];
  Vector g(2);
  g[0] = d3a_(u) + 0.5 * d3b_(u) * v * v + db_(u);
  g[1] = d2b_(u) * v;
  return g;
}
void Channel2D::drift_batch(std::span<const double> states, std::size_t n_runs,
                            std::span<double> out) const {
  require(states.size() == 2 * n_runs && out.size() == states.size(),
          "drift_batch: state buffer does not match dim * n_runs");
  for (std::size_t i = 0; i < n_runs; ++i) {
    const double u = states[i], v = states[n_runs + i];
    out[i] = -(da_(u) + 0.5 * db_(u) * v * v);
    out[n_runs + i] = -(b_(u) * v);
  }
}

json Channel2D::to_json() const {
  return {{"name", "channel2d"}, {"a", a_.coeffs()}, {"b", b_.coeffs()}, {"box", {box_lo_, box_hi_}}};
}

// ---- Scaled -----------------------------------------------------------------

ScaledPotential::ScaledPotential(PotentialPtr inner, double scale)
    : inner_(std::move(inner)), scale_(scale) {
  require(inner_ != nullptr, "ScaledPotential: null inner potential");
}
double ScaledPotential::value(const WeightVector& w) const { return scale_ * inner_->value(w); }
Vector ScaledPotential::grad(const WeightVector& w) const { return scale_ * inner_->grad(w); }
Matrix ScaledPotential::hessian(const WeightVector& w) const { return scale_ * inner_->hessian(w); }
Vector ScaledPotential::laplacian_grad(const WeightVector& w) const {
  return scale_ * inner_->laplacian_grad(w);
}
json ScaledPotential::to_json() const {
  return {{"name", "scaled"}, {"scale", scale_}, {"inner", inner_->to_json()}};
}

// ---- factory ----------------------------------------------------------------

PotentialPtr make_potential(const json& cfg) {
  using namespace json_util;
  const auto name = get_required<std::string>(cfg, "name", "potential");
  if (name == "zero") {
    expect_keys(cfg, {"name", "dim"}, "potential 'zero'");
    return std::make_shared<ZeroPotential>(get_or<std::size_t>(cfg, "dim", 1));
  }
  if (name == "quadratic") {
    expect_keys(cfg, {"name", "a"}, "potential 'quadratic'");
    return std::make_shared<Quadratic>(
        to_vector(get_required<std::vector<double>>(cfg, "a", "potential 'quadratic'")));
  }
  if (name == "double_well") {
    expect_keys(cfg, {"name"}, "potential 'double_well'");
    return std::make_shared<DoubleWell1D>();
  }
  if (name == "channel2d") {
    expect_keys(cfg, {"name", "a", "b", "box"}, "potential 'channel2d'");
    const auto box = get_or<std::vector<double>>(cfg, "box", {-5.0, 5.0});
    require(box.size() == 2, "potential 'channel2d': box must be [lo, hi]");
    return std::make_shared<Channel2D>(
        Polynomial(get_required<std::vector<double>>(cfg, "a", "potential 'channel2d'")),
        Polynomial(get_required<std::vector<double>>(cfg, "b", "potential 'channel2d'")), box[0],
        box[1]);
  }
  if (name == "scaled") {
    expect_keys(cfg, {"name", "scale", "inner"}, "potential 'scaled'");
    return std::make_shared<ScaledPotential>(
        make_potential(get_required<json>(cfg, "inner", "potential 'scaled'")),
        get_required<double>(cfg, "scale", "potential 'scaled'"));
  }
  throw ContractViolation("unknown potential '" + name + "'");
}

// ---- operations -------------------------------------------------------------

void check_dim(const Potential& p, const WeightVector& w) {
  if (static_cast<std::size_t>(w.size()) != p.dim())
    throw ContractViolation(p.name() + ": expected dimension " + std::to_string(p.dim()) + ", got " +
                            std::to_string(w.size()));
}

Vector drift(const Potential& p, const WeightVector& w) {
  check_dim(p, w);
  return -p.grad(w);
}

double path_potential(const Potential& p, const WeightVector& w, double D) {
  require(D >= 0.0, "path_potential: D must be non-negative");
  check_dim(p, w);
  const Vector g = p.grad(w);
  return 0.5 * g.squaredNorm() - D * p.hessian(w).trace();
}

Vector path_potential_grad(const Potential& p, const WeightVector& w, double D) {
  require(D >= 0.0, "path_potential_grad: D must be non-negative");
  check_dim(p, w);
  return p.hessian(w) * p.grad(w) - D * p.laplacian_grad(w);
}

double log_positive_determinant(const Matrix& h, double eig_floor) {
  require(eig_floor > 0.0, "log_positive_determinant: eig_floor must be positive");
  const Vector ev = symmetric_eigenvalues(0.5 * (h + h.transpose()));
  const double scale = std::max(ev.cwiseAbs().maxCoeff(), 1.0);
  double s = 0.0;
  for (double l : ev)
    if (l > eig_floor * scale) s += std::log(l);
  return s;
}

double effective_potential(const Potential& p, const WeightVector& w, double D, double eig_floor,
                           CurvatureSign sign) {
  require(D >= 0.0, "effective_potential: D must be non-negative");
  require(eig_floor > 0.0, "effective_potential: eig_floor must be positive");
  check_dim(p, w);
  const double logdet = log_positive_determinant(p.hessian(w), eig_floor);
  const double s = sign == CurvatureSign::Plus ? 1.0 : -1.0;
  return p.value(w) + s * D * logdet;
}

}  // namespace reachlab
