#include <bit>
#include <cmath>

#include "fpf/kernels.hpp"
#include "kernels_common.hpp"

namespace fpf::kernels {

namespace {

using namespace detail;

inline void philox_rounds(std::uint32_t c[4], const RoundKeys& rk) {
  for (int r = 0; r < kPhiloxRounds; ++r) {
    const std::uint64_t p0 = std::uint64_t{kPhiloxM0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kPhiloxM1} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    const std::uint32_t n0 = hi1 ^ c[1] ^ rk.lo[r];
    const std::uint32_t n2 = hi0 ^ c[3] ^ rk.hi[r];
    c[0] = n0;
    c[1] = lo1;
    c[2] = n2;
    c[3] = lo0;
  }
}

inline double unit_from_bits(std::uint64_t bits) {
  // [1, 2) with 52 random mantissa bits.
  return std::bit_cast<double>((bits >> 12) | kOneBits);
}

inline double log_unit(double u) {
  const auto ub = std::bit_cast<std::uint64_t>(u);
  double e = static_cast<double>(static_cast<std::int64_t>((ub >> 52) & 0x7FF) - 1023);
  double f = std::bit_cast<double>((ub & kMantissaMask) | kOneBits);
  if (f > kSqrt2) {
    f = f * 0.5;
    e = e + 1.0;
  }
  const double s = (f - 1.0) / (f + 1.0);
  const double z = s * s;
  double p = kLogCoeffs[kLogTerms - 1];
  for (int k = kLogTerms - 2; k >= 0; --k) p = std::fma(p, z, kLogCoeffs[k]);
  const double lnf = (s + s) * p;
  return std::fma(e, kLn2, lnf);
}

inline NormalPair box_muller(const std::uint32_t w[4]) {
  const std::uint64_t b1 = std::uint64_t{w[0]} | (std::uint64_t{w[1]} << 32);
  const std::uint64_t b2 = std::uint64_t{w[2]} | (std::uint64_t{w[3]} << 32);
  const double u1 = 2.0 - unit_from_bits(b1);  // (0, 1]
  const double u2 = unit_from_bits(b2) - 1.0;  // [0, 1)

  const double r = std::sqrt(-2.0 * log_unit(u1));

  const double q4 = 4.0 * u2;
  double q = std::nearbyint(q4);
  const double x = q4 - q;
  if (q == 4.0) q = 0.0;
  const double phi = x * kHalfPi;
  const double z = phi * phi;
  double sp = kSinCoeffs[kSinTerms - 1];
  for (int k = kSinTerms - 2; k >= 0; --k) sp = std::fma(sp, z, kSinCoeffs[k]);
  double cp = kCosCoeffs[kCosTerms - 1];
  for (int k = kCosTerms - 2; k >= 0; --k) cp = std::fma(cp, z, kCosCoeffs[k]);
  const double s = phi * sp;
  const double c = cp;

  double sin_t = s;
  double cos_t = c;
  if (q == 1.0 || q == 3.0) {
    sin_t = c;
    cos_t = s;
  }
  if (q == 2.0 || q == 3.0) sin_t = -sin_t;
  if (q == 1.0 || q == 2.0) cos_t = -cos_t;
  return {r * cos_t, r * sin_t};
}

inline NormalPair pair_with_keys(const RoundKeys& rk, std::uint64_t step,
                                 std::uint64_t pair, std::uint32_t tag) {
  std::uint32_t c[4] = {static_cast<std::uint32_t>(step),
                        static_cast<std::uint32_t>(step >> 32),
                        static_cast<std::uint32_t>(pair), tag};
  philox_rounds(c, rk);
  return box_muller(c);
}

void fill_normals_scalar(PhiloxKey key, std::uint64_t step, std::uint32_t tag,
                         std::uint64_t first, double* out, std::size_t n) {
  const RoundKeys rk = round_keys(key.lo, key.hi);
  std::size_t j = 0;
  std::uint64_t idx = first;
  if (n > 0 && (idx & 1u)) {
    out[j++] = pair_with_keys(rk, step, idx >> 1, tag).z1;
    ++idx;
  }
  for (; j + 1 < n; j += 2, idx += 2) {
    const NormalPair p = pair_with_keys(rk, step, idx >> 1, tag);
    out[j] = p.z0;
    out[j + 1] = p.z1;
  }
  if (j < n) out[j] = pair_with_keys(rk, step, idx >> 1, tag).z0;
}

void affine_update_scalar(double* x, const double* n1, const double* n2,
                          std::size_t n, Affine k) {
  if (n2 == nullptr) {
    for (std::size_t i = 0; i < n; ++i)
      x[i] = std::fma(k.a, x[i], std::fma(k.b1, n1[i], k.c));
    return;
  }
  for (std::size_t i = 0; i < n; ++i)
    x[i] = std::fma(k.a, x[i], std::fma(k.b1, n1[i], std::fma(k.b2, n2[i], k.c)));
}

// Canonical reduction order: four partial sums over i mod 4, combined as
// (s0 + s1) + (s2 + s3), then the tail in index order.
template <class Term, class Acc>
double reduce4(std::size_t n, Term term, Acc acc) {
  double s[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4)
    for (std::size_t l = 0; l < 4; ++l) s[l] = acc(s[l], term(i + l));
  double total = (s[0] + s[1]) + (s[2] + s[3]);
  for (std::size_t i = body; i < n; ++i) total = acc(total, term(i));
  return total;
}

double sum_scalar(const double* x, std::size_t n) {
  return reduce4(n, [x](std::size_t i) { return x[i]; },
                 [](double s, double v) { return s + v; });
}

double sum_sq_dev_scalar(const double* x, std::size_t n, double center) {
  return reduce4(n, [x, center](std::size_t i) { return x[i] - center; },
                 [](double s, double d) { return std::fma(d, d, s); });
}

double sum_sq_diff_scalar(const double* x, const double* y, std::size_t n) {
  return reduce4(n, [x, y](std::size_t i) { return x[i] - y[i]; },
                 [](double s, double d) { return std::fma(d, d, s); });
}

double sum_abs_scalar(const double* x, std::size_t n) {
  return reduce4(n, [x](std::size_t i) { return std::fabs(x[i]); },
                 [](double s, double v) { return s + v; });
}

}  // namespace

void philox4x32_10(const std::uint32_t ctr_in[4], PhiloxKey key,
                   std::uint32_t out[4]) {
  const RoundKeys rk = round_keys(key.lo, key.hi);
  for (int i = 0; i < 4; ++i) out[i] = ctr_in[i];
  philox_rounds(out, rk);
}

NormalPair normal_pair(PhiloxKey key, std::uint64_t step, std::uint64_t pair,
                       std::uint32_t tag) {
  return pair_with_keys(round_keys(key.lo, key.hi), step, pair, tag);
}

const KernelTable& scalar_table() {
  static const KernelTable table{
      Backend::scalar,   "scalar",          fill_normals_scalar,
      affine_update_scalar, sum_scalar,     sum_sq_dev_scalar,
      sum_sq_diff_scalar, sum_abs_scalar,
  };
  return table;
}

}  // namespace fpf::kernels
