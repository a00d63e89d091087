#include "reachlab/kernels.hpp"

#include <atomic>
#include <stdexcept>
#include <string>

namespace reachlab::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if defined(REACHLAB_HAVE_AVX2)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(REACHLAB_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa detect_isa() {
  if (isa_supported(Isa::Avx2)) return Isa::Avx2;
  if (isa_supported(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

namespace {
std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{detect_isa()};
  return slot;
}

void check_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw std::invalid_argument(std::string("kernels::") + what + ": length mismatch (" +
                                std::to_string(a) + " vs " + std::to_string(b) + ")");
}
}  // namespace

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa))
    throw std::invalid_argument("ISA not supported on this CPU: " + std::string(isa_name(isa)));
  active_slot().store(isa, std::memory_order_relaxed);
}

const KernelTable& table(Isa isa) {
  switch (isa) {
#if defined(REACHLAB_HAVE_AVX2)
    case Isa::Avx2: return detail::avx2_table;
#endif
#if defined(REACHLAB_HAVE_NEON)
    case Isa::Neon: return detail::neon_table;
#endif
    default: return detail::scalar_table;
  }
}

const KernelTable& active() { return table(active_isa()); }

double dot(std::span<const double> a, std::span<const double> b) {
  check_size(a.size(), b.size(), "dot");
  return active().dot(a.data(), b.data(), a.size());
}

double sum_sq(std::span<const double> a) { return active().sum_sq(a.data(), a.size()); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_size(x.size(), y.size(), "axpy");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void em_update(std::span<double> w, std::span<const double> drift,
               std::span<const double> noise, double dt, double sigma) {
  check_size(w.size(), drift.size(), "em_update");
  check_size(w.size(), noise.size(), "em_update");
  active().em_update(w.data(), drift.data(), noise.data(), dt, sigma, w.size());
}

void double_well_drift(std::span<const double> w, std::span<double> out) {
  check_size(w.size(), out.size(), "double_well_drift");
  active().double_well_drift(w.data(), out.data(), w.size());
}

void linear_drift(double a, std::span<const double> w, std::span<double> out) {
  check_size(w.size(), out.size(), "linear_drift");
  active().linear_drift(a, w.data(), out.data(), w.size());
}

}  // namespace reachlab::kernels
