#pragma once

// Constants shared by the scalar and AVX2 kernels. Both translation units
// must evaluate exactly the same polynomials to stay bit-identical.

#include <array>
#include <cstdint>

namespace fpf::kernels::detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;
inline constexpr int kPhiloxRounds = 10;

inline constexpr std::uint64_t kOneBits = 0x3FF0000000000000ull;
inline constexpr std::uint64_t kMantissaMask = 0x000FFFFFFFFFFFFFull;

inline constexpr double kSqrt2 = 1.41421356237309504880;
inline constexpr double kLn2 = 0.693147180559945309417;
inline constexpr double kHalfPi = 1.57079632679489661923;

// ln(f) = 2s * sum_k s^(2k) / (2k+1), s = (f-1)/(f+1), f in [sqrt(1/2), sqrt(2)].
inline constexpr int kLogTerms = 12;
constexpr std::array<double, kLogTerms> make_log_coeffs() {
  std::array<double, kLogTerms> c{};
  for (int k = 0; k < kLogTerms; ++k) c[k] = 1.0 / (2.0 * k + 1.0);
  return c;
}
inline constexpr auto kLogCoeffs = make_log_coeffs();

// sin(x) = x * sum_k (-1)^k x^(2k) / (2k+1)!, cos(x) = sum_k (-1)^k x^(2k) / (2k)!
// for |x| <= pi/4.
inline constexpr int kSinTerms = 9;
inline constexpr int kCosTerms = 10;
constexpr std::array<double, kSinTerms> make_sin_coeffs() {
  std::array<double, kSinTerms> c{};
  double fact = 1.0;
  for (int k = 0; k < kSinTerms; ++k) {
    if (k > 0) fact *= (2.0 * k) * (2.0 * k + 1.0);
    c[k] = ((k % 2 == 0) ? 1.0 : -1.0) / fact;
  }
  return c;
}
constexpr std::array<double, kCosTerms> make_cos_coeffs() {
  std::array<double, kCosTerms> c{};
  double fact = 1.0;
  for (int k = 0; k < kCosTerms; ++k) {
    if (k > 0) fact *= (2.0 * k - 1.0) * (2.0 * k);
    c[k] = ((k % 2 == 0) ? 1.0 : -1.0) / fact;
  }
  return c;
}
inline constexpr auto kSinCoeffs = make_sin_coeffs();
inline constexpr auto kCosCoeffs = make_cos_coeffs();

struct RoundKeys {
  std::array<std::uint32_t, kPhiloxRounds> lo;
  std::array<std::uint32_t, kPhiloxRounds> hi;
};

inline RoundKeys round_keys(std::uint32_t k0, std::uint32_t k1) {
  RoundKeys rk{};
  for (int r = 0; r < kPhiloxRounds; ++r) {
    rk.lo[r] = k0;
    rk.hi[r] = k1;
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  return rk;
}

}  // namespace fpf::kernels::detail
