#pragma once

// Data-parallel inner loops of the particle simulations.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2+FMA variant. The variant is picked once at runtime. Both variants
// perform the same IEEE operations in the same order (explicit fused
// multiply-adds, a fixed four-way interleaved reduction order), so their
// outputs are bit-identical and trial records do not depend on the host CPU.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace fpf::kernels {

enum class Backend { scalar, avx2 };

/// 64-bit Philox key, split into the two 32-bit words the rounds consume.
struct PhiloxKey {
  std::uint32_t lo = 0;
  std::uint32_t hi = 0;
};

/// Coefficients of x <- a*x + b1*n1 + b2*n2 + c, evaluated as
/// fma(a, x, fma(b1, n1, fma(b2, n2, c))).
struct Affine {
  double a = 1.0;
  double b1 = 0.0;
  double b2 = 0.0;
  double c = 0.0;
};

struct KernelTable {
  Backend backend;
  std::string_view name;

  // out[j] = standard normal number (first + j) of the (key, step, tag)
  // sequence. Normals 2p and 2p+1 come from one Philox block with counter
  // (step, p, tag) through a Box-Muller transform.
  void (*fill_normals)(PhiloxKey key, std::uint64_t step, std::uint32_t tag,
                       std::uint64_t first, double* out, std::size_t n);

  // n2 may be null when b2 == 0.
  void (*affine_update)(double* x, const double* n1, const double* n2,
                        std::size_t n, Affine coeffs);

  double (*sum)(const double* x, std::size_t n);
  // sum_i (x_i - center)^2
  double (*sum_sq_dev)(const double* x, std::size_t n, double center);
  // sum_i (x_i - y_i)^2
  double (*sum_sq_diff)(const double* x, const double* y, std::size_t n);
  double (*sum_abs)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();

/// Null when the AVX2 translation unit was not built or the CPU lacks
/// AVX2/FMA.
const KernelTable* avx2_table();

/// Table used by the library. Chosen on first use: the FPFLAB_KERNELS
/// environment variable (scalar|avx2|auto) overrides CPU detection.
const KernelTable& active();

/// Forces a backend for the rest of the process. Returns false (and leaves
/// the selection unchanged) if the backend is unavailable.
bool select(Backend backend);

// Single Box-Muller pair shared by both backends for tails and tests.
struct NormalPair {
  double z0;
  double z1;
};
NormalPair normal_pair(PhiloxKey key, std::uint64_t step, std::uint64_t pair,
                       std::uint32_t tag);

/// Philox4x32-10 block function.
void philox4x32_10(const std::uint32_t ctr_in[4], PhiloxKey key,
                   std::uint32_t out[4]);

// Convenience wrappers over the active table.
inline void fill_normals(PhiloxKey key, std::uint64_t step, std::uint32_t tag,
                         std::uint64_t first, std::span<double> out) {
  active().fill_normals(key, step, tag, first, out.data(), out.size());
}

inline double sum(std::span<const double> x) {
  return active().sum(x.data(), x.size());
}

}  // namespace fpf::kernels
