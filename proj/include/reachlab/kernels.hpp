#pragma once
// Data-parallel inner loops used by the simulators and model losses.
//
// Every kernel has a portable scalar reference and, where the target allows,
// an AVX2 (x86-64) or NEON (aarch64) variant. The variant is chosen once at
// startup from the CPU feature flags and can be pinned for testing.
//
// Elementwise kernels perform the same IEEE operations in the same order in
// every variant (the build disables FP contraction), so they are bit-identical
// across ISAs. Reductions (dot, sum_sq) reassociate and agree to rounding.

#include <cstddef>
#include <span>
#include <string_view>

namespace reachlab::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum_sq)(const double* a, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // w += dt * drift + sigma * noise
  void (*em_update)(double* w, const double* drift, const double* noise, double dt,
                    double sigma, std::size_t n);
  // out = w - w^3, the descent drift of (w^2 - 1)^2 / 4
  void (*double_well_drift)(const double* w, double* out, std::size_t n);
  // out = -a * w
  void (*linear_drift)(double a, const double* w, double* out, std::size_t n);
};

bool isa_supported(Isa isa);

// Highest supported ISA on this CPU.
Isa detect_isa();

// Currently dispatched ISA; starts at detect_isa().
Isa active_isa();

// Pin dispatch to a given ISA. Throws std::invalid_argument if unsupported.
void set_active_isa(Isa isa);

const KernelTable& table(Isa isa);
const KernelTable& active();

// Checked span front-ends over the active table.
double dot(std::span<const double> a, std::span<const double> b);
double sum_sq(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void em_update(std::span<double> w, std::span<const double> drift,
               std::span<const double> noise, double dt, double sigma);
void double_well_drift(std::span<const double> w, std::span<double> out);
void linear_drift(double a, std::span<const double> w, std::span<double> out);

namespace detail {
extern const KernelTable scalar_table;
#if defined(REACHLAB_HAVE_AVX2)
extern const KernelTable avx2_table;
#endif
#if defined(REACHLAB_HAVE_NEON)
extern const KernelTable neon_table;
#endif
}  // namespace detail

}  // namespace reachlab::kernels
