#include <arm_neon.h>

#include "reachlab/kernels.hpp"

namespace reachlab::kernels::detail {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vaddq_f64(acc0, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    acc1 = vaddq_f64(acc1, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_sq_neon(const double* a, std::size_t n) { return dot_neon(a, a, n); }

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void em_update_neon(double* w, const double* drift, const double* noise, double dt,
                    double sigma, std::size_t n) {
  const float64x2_t vdt = vdupq_n_f64(dt);
  const float64x2_t vs = vdupq_n_f64(sigma);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vw = vld1q_f64(w + i);
    vw = vaddq_f64(vw, vmulq_f64(vdt, vld1q_f64(drift + i)));
    vw = vaddq_f64(vw, vmulq_f64(vs, vld1q_f64(noise + i)));
    vst1q_f64(w + i, vw);
  }
  for (; i < n; ++i) w[i] = (w[i] + dt * drift[i]) + sigma * noise[i];
}

void double_well_drift_neon(const double* w, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t v = vld1q_f64(w + i);
    vst1q_f64(out + i, vsubq_f64(v, vmulq_f64(vmulq_f64(v, v), v)));
  }
  for (; i < n; ++i) out[i] = w[i] - (w[i] * w[i]) * w[i];
}

void linear_drift_neon(double a, const double* w, double* out, std::size_t n) {
  const float64x2_t na = vdupq_n_f64(-a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(na, vld1q_f64(w + i)));
  for (; i < n; ++i) out[i] = -a * w[i];
}

}  // namespace

const KernelTable neon_table{
    dot_neon,       sum_sq_neon,
    axpy_neon,      em_update_neon,
    double_well_drift_neon, linear_drift_neon,
};

}  // namespace reachlab::kernels::detail
