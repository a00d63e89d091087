#include <immintrin.h>

#include "reachlab/kernels.hpp"

namespace reachlab::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    acc1 = _mm256_add_pd(acc1,
                         _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_sq_avx2(const double* a, std::size_t n) { return dot_avx2(a, a, n); }

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void em_update_avx2(double* w, const double* drift, const double* noise, double dt,
                    double sigma, std::size_t n) {
  const __m256d vdt = _mm256_set1_pd(dt);
  const __m256d vs = _mm256_set1_pd(sigma);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vw = _mm256_loadu_pd(w + i);
    vw = _mm256_add_pd(vw, _mm256_mul_pd(vdt, _mm256_loadu_pd(drift + i)));
    vw = _mm256_add_pd(vw, _mm256_mul_pd(vs, _mm256_loadu_pd(noise + i)));
    _mm256_storeu_pd(w + i, vw);
  }
  for (; i < n; ++i) w[i] = (w[i] + dt * drift[i]) + sigma * noise[i];
}

void double_well_drift_avx2(const double* w, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(w + i);
    const __m256d cube = _mm256_mul_pd(_mm256_mul_pd(v, v), v);
    _mm256_storeu_pd(out + i, _mm256_sub_pd(v, cube));
  }
  for (; i < n; ++i) out[i] = w[i] - (w[i] * w[i]) * w[i];
}

void linear_drift_avx2(double a, const double* w, double* out, std::size_t n) {
  const __m256d na = _mm256_set1_pd(-a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(na, _mm256_loadu_pd(w + i)));
  for (; i < n; ++i) out[i] = -a * w[i];
}

}  // namespace

const KernelTable avx2_table{
    dot_avx2,       sum_sq_avx2,
    axpy_avx2,      em_update_avx2,
    double_well_drift_avx2, linear_drift_avx2,
};

}  // namespace reachlab::kernels::detail
