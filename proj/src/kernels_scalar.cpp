#include "reachlab/kernels.hpp"

namespace reachlab::kernels::detail {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_sq_scalar(const double* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * a[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void em_update_scalar(double* w, const double* drift, const double* noise, double dt,
                      double sigma, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) w[i] = (w[i] + dt * drift[i]) + sigma * noise[i];
}

void double_well_drift_scalar(const double* w, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = w[i] - (w[i] * w[i]) * w[i];
}

void linear_drift_scalar(double a, const double* w, double* out, std::size_t n) {
  const double na = -a;
  for (std::size_t i = 0; i < n; ++i) out[i] = na * w[i];
}

}  // namespace

const KernelTable scalar_table{
    dot_scalar,       sum_sq_scalar,
    axpy_scalar,      em_update_scalar,
    double_well_drift_scalar, linear_drift_scalar,
};

}  // namespace reachlab::kernels::detail
