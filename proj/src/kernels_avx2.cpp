// AVX2 + FMA variants. Compiled with -mavx2 -mfma; only reached through the
// dispatch table after a CPU check.

#include <immintrin.h>

#include <cmath>

#include "fpf/kernels.hpp"
#include "kernels_common.hpp"

namespace fpf::kernels {

namespace {

using namespace detail;

struct Block4 {
  __m256d z0;
  __m256d z1;
};

inline __m256d unit_from_bits(__m256i bits) {
  return _mm256_castsi256_pd(
      _mm256_or_si256(_mm256_srli_epi64(bits, 12),
                      _mm256_set1_epi64x(static_cast<long long>(kOneBits))));
}

inline __m256d log_unit(__m256d u) {
  const __m256i ub = _mm256_castpd_si256(u);
  const __m256i eb = _mm256_and_si256(_mm256_srli_epi64(ub, 52), _mm256_set1_epi64x(0x7FF));
  // Small non-negative integers converted through the 2^52 trick; exact.
  const __m256d magic = _mm256_castsi256_pd(_mm256_set1_epi64x(0x4330000000000000ll));
  __m256d e = _mm256_sub_pd(_mm256_castsi256_pd(_mm256_or_si256(eb, _mm256_castpd_si256(magic))),
                            _mm256_set1_pd(4503599627370496.0 + 1023.0));
  __m256d f = _mm256_castsi256_pd(_mm256_or_si256(
      _mm256_and_si256(ub, _mm256_set1_epi64x(static_cast<long long>(kMantissaMask))),
      _mm256_set1_epi64x(static_cast<long long>(kOneBits))));
  const __m256d big = _mm256_cmp_pd(f, _mm256_set1_pd(kSqrt2), _CMP_GT_OQ);
  f = _mm256_blendv_pd(f, _mm256_mul_pd(f, _mm256_set1_pd(0.5)), big);
  e = _mm256_blendv_pd(e, _mm256_add_pd(e, _mm256_set1_pd(1.0)), big);

  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d s = _mm256_div_pd(_mm256_sub_pd(f, one), _mm256_add_pd(f, one));
  const __m256d z = _mm256_mul_pd(s, s);
  __m256d p = _mm256_set1_pd(kLogCoeffs[kLogTerms - 1]);
  for (int k = kLogTerms - 2; k >= 0; --k)
    p = _mm256_fmadd_pd(p, z, _mm256_set1_pd(kLogCoeffs[k]));
  const __m256d lnf = _mm256_mul_pd(_mm256_add_pd(s, s), p);
  return _mm256_fmadd_pd(e, _mm256_set1_pd(kLn2), lnf);
}

inline Block4 philox_box_muller(const RoundKeys& rk, std::uint64_t step,
                                std::uint64_t pair0, std::uint32_t tag) {
  const __m256i mask32 = _mm256_set1_epi64x(0xFFFFFFFFll);
  __m256i c0 = _mm256_set1_epi64x(static_cast<std::uint32_t>(step));
  __m256i c1 = _mm256_set1_epi64x(static_cast<std::uint32_t>(step >> 32));
  __m256i c2 = _mm256_set_epi64x(static_cast<std::uint32_t>(pair0 + 3),
                                 static_cast<std::uint32_t>(pair0 + 2),
                                 static_cast<std::uint32_t>(pair0 + 1),
                                 static_cast<std::uint32_t>(pair0));
  __m256i c3 = _mm256_set1_epi64x(tag);
  const __m256i m0 = _mm256_set1_epi64x(kPhiloxM0);
  const __m256i m1 = _mm256_set1_epi64x(kPhiloxM1);
  for (int r = 0; r < kPhiloxRounds; ++r) {
    const __m256i p0 = _mm256_mul_epu32(c0, m0);
    const __m256i p1 = _mm256_mul_epu32(c2, m1);
    const __m256i hi0 = _mm256_srli_epi64(p0, 32);
    const __m256i lo0 = _mm256_and_si256(p0, mask32);
    const __m256i hi1 = _mm256_srli_epi64(p1, 32);
    const __m256i lo1 = _mm256_and_si256(p1, mask32);
    const __m256i n0 = _mm256_xor_si256(_mm256_xor_si256(hi1, c1), _mm256_set1_epi64x(rk.lo[r]));
    const __m256i n2 = _mm256_xor_si256(_mm256_xor_si256(hi0, c3), _mm256_set1_epi64x(rk.hi[r]));
    c0 = n0;
    c1 = lo1;
    c2 = n2;
    c3 = lo0;
  }
  const __m256i b1 = _mm256_or_si256(c0, _mm256_slli_epi64(c1, 32));
  const __m256i b2 = _mm256_or_si256(c2, _mm256_slli_epi64(c3, 32));
  const __m256d u1 = _mm256_sub_pd(_mm256_set1_pd(2.0), unit_from_bits(b1));
  const __m256d u2 = _mm256_sub_pd(unit_from_bits(b2), _mm256_set1_pd(1.0));

  const __m256d r = _mm256_sqrt_pd(_mm256_mul_pd(_mm256_set1_pd(-2.0), log_unit(u1)));

  const __m256d q4 = _mm256_mul_pd(_mm256_set1_pd(4.0), u2);
  __m256d q = _mm256_round_pd(q4, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  const __m256d x = _mm256_sub_pd(q4, q);
  q = _mm256_blendv_pd(q, _mm256_setzero_pd(), _mm256_cmp_pd(q, _mm256_set1_pd(4.0), _CMP_EQ_OQ));
  const __m256d phi = _mm256_mul_pd(x, _mm256_set1_pd(kHalfPi));
  const __m256d z = _mm256_mul_pd(phi, phi);
  __m256d sp = _mm256_set1_pd(kSinCoeffs[kSinTerms - 1]);
  for (int k = kSinTerms - 2; k >= 0; --k)
    sp = _mm256_fmadd_pd(sp, z, _mm256_set1_pd(kSinCoeffs[k]));
  __m256d cp = _mm256_set1_pd(kCosCoeffs[kCosTerms - 1]);
  for (int k = kCosTerms - 2; k >= 0; --k)
    cp = _mm256_fmadd_pd(cp, z, _mm256_set1_pd(kCosCoeffs[k]));
  const __m256d s = _mm256_mul_pd(phi, sp);
  const __m256d c = cp;

  const __m256d q1 = _mm256_cmp_pd(q, _mm256_set1_pd(1.0), _CMP_EQ_OQ);
  const __m256d q2 = _mm256_cmp_pd(q, _mm256_set1_pd(2.0), _CMP_EQ_OQ);
  const __m256d q3 = _mm256_cmp_pd(q, _mm256_set1_pd(3.0), _CMP_EQ_OQ);
  const __m256d swap = _mm256_or_pd(q1, q3);
  const __m256d sign = _mm256_set1_pd(-0.0);
  __m256d sin_t = _mm256_blendv_pd(s, c, swap);
  __m256d cos_t = _mm256_blendv_pd(c, s, swap);
  sin_t = _mm256_xor_pd(sin_t, _mm256_and_pd(_mm256_or_pd(q2, q3), sign));
  cos_t = _mm256_xor_pd(cos_t, _mm256_and_pd(_mm256_or_pd(q1, q2), sign));
  return {_mm256_mul_pd(r, cos_t), _mm256_mul_pd(r, sin_t)};
}

void fill_normals_avx2(PhiloxKey key, std::uint64_t step, std::uint32_t tag,
                       std::uint64_t first, double* out, std::size_t n) {
  const RoundKeys rk = round_keys(key.lo, key.hi);
  std::size_t j = 0;
  std::uint64_t idx = first;
  if (n > 0 && (idx & 1u)) {
    out[j++] = normal_pair(key, step, idx >> 1, tag).z1;
    ++idx;
  }
  for (; j + 8 <= n; j += 8, idx += 8) {
    const Block4 b = philox_box_muller(rk, step, idx >> 1, tag);
    const __m256d lo = _mm256_unpacklo_pd(b.z0, b.z1);
    const __m256d hi = _mm256_unpackhi_pd(b.z0, b.z1);
    _mm256_storeu_pd(out + j, _mm256_permute2f128_pd(lo, hi, 0x20));
    _mm256_storeu_pd(out + j + 4, _mm256_permute2f128_pd(lo, hi, 0x31));
  }
  for (; j + 1 < n; j += 2, idx += 2) {
    const NormalPair p = normal_pair(key, step, idx >> 1, tag);
    out[j] = p.z0;
    out[j + 1] = p.z1;
  }
  if (j < n) out[j] = normal_pair(key, step, idx >> 1, tag).z0;
}

void affine_update_avx2(double* x, const double* n1, const double* n2,
                        std::size_t n, Affine k) {
  const __m256d a = _mm256_set1_pd(k.a);
  const __m256d b1 = _mm256_set1_pd(k.b1);
  const __m256d b2 = _mm256_set1_pd(k.b2);
  const __m256d c = _mm256_set1_pd(k.c);
  std::size_t i = 0;
  if (n2 == nullptr) {
    for (; i + 4 <= n; i += 4) {
      const __m256d inner = _mm256_fmadd_pd(b1, _mm256_loadu_pd(n1 + i), c);
      _mm256_storeu_pd(x + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), inner));
    }
    for (; i < n; ++i) x[i] = std::fma(k.a, x[i], std::fma(k.b1, n1[i], k.c));
    return;
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d in2 = _mm256_fmadd_pd(b2, _mm256_loadu_pd(n2 + i), c);
    const __m256d in1 = _mm256_fmadd_pd(b1, _mm256_loadu_pd(n1 + i), in2);
    _mm256_storeu_pd(x + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), in1));
  }
  for (; i < n; ++i)
    x[i] = std::fma(k.a, x[i], std::fma(k.b1, n1[i], std::fma(k.b2, n2[i], k.c)));
}

inline double combine(__m256d acc) {
  alignas(32) double s[4];
  _mm256_store_pd(s, acc);
  return (s[0] + s[1]) + (s[2] + s[3]);
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double total = combine(acc);
  for (std::size_t i = body; i < n; ++i) total = total + x[i];
  return total;
}

double sum_sq_dev_avx2(const double* x, std::size_t n, double center) {
  const __m256d cv = _mm256_set1_pd(center);
  __m256d acc = _mm256_setzero_pd();
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), cv);
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double total = combine(acc);
  for (std::size_t i = body; i < n; ++i) {
    const double d = x[i] - center;
    total = std::fma(d, d, total);
  }
  return total;
}

double sum_sq_diff_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double total = combine(acc);
  for (std::size_t i = body; i < n; ++i) {
    const double d = x[i] - y[i];
    total = std::fma(d, d, total);
  }
  return total;
}

double sum_abs_avx2(const double* x, std::size_t n) {
  const __m256d magnitude = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7FFFFFFFFFFFFFFFll));
  __m256d acc = _mm256_setzero_pd();
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4)
    acc = _mm256_add_pd(acc, _mm256_and_pd(_mm256_loadu_pd(x + i), magnitude));
  double total = combine(acc);
  for (std::size_t i = body; i < n; ++i) total = total + std::fabs(x[i]);
  return total;
}

}  // namespace

const KernelTable& avx2_table_unchecked() {
  static const KernelTable table{
      Backend::avx2,      "avx2",          fill_normals_avx2,
      affine_update_avx2, sum_avx2,        sum_sq_dev_avx2,
      sum_sq_diff_avx2,   sum_abs_avx2,
  };
  return table;
}

}  // namespace fpf::kernels
