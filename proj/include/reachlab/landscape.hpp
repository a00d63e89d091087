#pragma once
// Potentials U(w) over weight space and the curvature-corrected potentials
// derived from them.
//
// Sign convention: the SDE drift is the descent direction f(w) = -grad U(w)
// everywhere in the library.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "reachlab/linalg.hpp"

namespace reachlab {

class Potential {
 public:
  virtual ~Potential() = default;

  virtual std::size_t dim() const = 0;
  virtual double value(const WeightVector& w) const = 0;
  virtual Vector grad(const WeightVector& w) const = 0;
  virtual Matrix hessian(const WeightVector& w) const = 0;

  // Gradient of the Laplacian (trace of the Hessian). Needed by the action
  // gradient because div f = -Laplacian U. Default: central differences of
  // trace(hessian) with step 1e-5.
  virtual Vector laplacian_grad(const WeightVector& w) const;

  // Descent drift for an ensemble stored coordinate-major:
  // states[j * n_runs + i] is coordinate j of run i. Default gathers each run
  // and calls grad; built-ins override with SIMD kernels.
  virtual void drift_batch(std::span<const double> states, std::size_t n_runs,
                           std::span<double> out) const;

  virtual std::string name() const = 0;
  virtual nlohmann::json to_json() const = 0;
};

using PotentialPtr = std::shared_ptr<const Potential>;

// c[0] + c[1] u + c[2] u^2 + ...
class Polynomial {
 public:
  Polynomial() = default;
  explicit Polynomial(std::vector<double> coeffs);

  double operator()(double u) const;
  Polynomial derivative() const;
  const std::vector<double>& coeffs() const { return coeffs_; }

 private:
  std::vector<double> coeffs_;
};

// U == 0 in d dimensions.
class ZeroPotential final : public Potential {
 public:
  explicit ZeroPotential(std::size_t dim);
  std::size_t dim() const override { return dim_; }
  double value(const WeightVector& w) const override;
  Vector grad(const WeightVector& w) const override;
  Matrix hessian(const WeightVector& w) const override;
  Vector laplacian_grad(const WeightVector& w) const override;
  void drift_batch(std::span<const double> states, std::size_t n_runs,
                   std::span<double> out) const override;
  std::string name() const override { return "zero"; }
  nlohmann::json to_json() const override;

 private:
  std::size_t dim_;
};

// U(w) = sum_i a_i w_i^2 / 2
class Quadratic final : public Potential {
 public:
  explicit Quadratic(Vector curvature);
  std::size_t dim() const override { return static_cast<std::size_t>(a_.size()); }
  double value(const WeightVector& w) const override;
  Vector grad(const WeightVector& w) const override;
  Matrix hessian(const WeightVector& w) const override;
  Vector laplacian_grad(const WeightVector& w) const override;
  void drift_batch(std::span<const double> states, std::size_t n_runs,
                   std::span<double> out) const override;
  std::string name() const override { return "quadratic"; }
  nlohmann::json to_json() const override;
  const Vector& curvature() const { return a_; }

 private:
  Vector a_;
};

// U(w) = (w^2 - 1)^2 / 4: minima at +-1 (U'' = 2), saddle at 0 (U'' = -1).
class DoubleWell1D final : public Potential {
 public:
  std::size_t dim() const override { return 1; }
  double value(const WeightVector& w) const override;
  Vector grad(const WeightVector& w) const override;
  Matrix hessian(const WeightVector& w) const override;
  Vector laplacian_grad(const WeightVector& w) const override;
  void drift_batch(std::span<const double> states, std::size_t n_runs,
                   std::span<double> out) const override;
  std::string name() const override { return "double_well"; }
  nlohmann::json to_json() const override;
};

// U(u, v) = a(u) + b(u) v^2 / 2 with polynomial a and b. The transverse
// curvature b must stay positive on the simulation box.
class Channel2D final : public Potential {
 public:
  Channel2D(Polynomial a, Polynomial b, double box_lo, double box_hi);
  std::size_t dim() const override { return 2; }
  double value(const WeightVector& w) const override;
  Vector grad(const WeightVector& w) const override;
  Matrix hessian(const WeightVector& w) const override;
  Vector laplacian_grad(const WeightVector& w) const override;
  void drift_batch(std::span<const double> states, std::size_t n_runs,
                   std::span<double> out) const override;
  std::string name() const override { return "channel2d"; }
  nlohmann::json to_json() const override;

  const Polynomial& base() const { return a_; }
  const Polynomial& transverse() const { return b_; }
  double box_lo() const { return box_lo_; }
  double box_hi() const { return box_hi_; }

 private:
  Polynomial a_, b_, da_, d2a_, d3a_, db_, d2b_, d3b_;
  double box_lo_, box_hi_;
};

// s * U(w) for a wrapped potential.
class ScaledPotential final : public Potential {
 public:
  ScaledPotential(PotentialPtr inner, double scale);
  std::size_t dim() const override { return inner_->dim(); }
  double value(const WeightVector& w) const override;
  Vector grad(const WeightVector& w) const override;
  Matrix hessian(const WeightVector& w) const override;
  Vector laplacian_grad(const WeightVector& w) const override;
  std::string name() const override { return "scaled"; }
  nlohmann::json to_json() const override;

 private:
  PotentialPtr inner_;
  double scale_;
};

// Build a potential from {"name": ..., <parameters>}. Unknown names or keys
// throw ContractViolation. Model-loss potentials come from tasks::make_task.
PotentialPtr make_potential(const nlohmann::json& cfg);

void check_dim(const Potential& p, const WeightVector& w);

// f(w) = -grad U(w)
Vector drift(const Potential& p, const WeightVector& w);

// V(w) = |grad U|^2 / 2 - D * Laplacian U
double path_potential(const Potential& p, const WeightVector& w, double D);

// grad V = H grad U - D grad(Laplacian U)
Vector path_potential_grad(const Potential& p, const WeightVector& w, double D);

inline constexpr double kDefaultEigFloor = 1e-6;

enum class CurvatureSign { Plus, Minus };

// Sum of log eigenvalues above eig_floor * max(max|lambda|, 1); 0 if none.
double log_positive_determinant(const Matrix& h, double eig_floor);

// U_eff(w) = U(w) +- D log|H(w)|_+ . Plus is the default convention.
double effective_potential(const Potential& p, const WeightVector& w, double D,
                           double eig_floor = kDefaultEigFloor,
                           CurvatureSign sign = CurvatureSign::Plus);

}  // namespace reachlab
