#include "fpf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace fpf {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t label) {
  return splitmix64(splitmix64(parent) ^ (label * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

kernels::PhiloxKey NoiseBundle::key() const {
  const std::uint64_t k = mix_seed(seed, stream_id);
  return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

namespace {

void check_lanes(std::uint64_t first_lane, std::size_t n) {
  // Pair indices occupy one 32-bit counter word.
  if ((first_lane + n) / 2 > 0xFFFFFFFFull)
    throw std::out_of_range("noise lane index exceeds the counter range");
}

void fill(const NoiseBundle& noise, std::uint64_t step, std::uint32_t tag,
          std::uint64_t first_lane, std::span<double> out) {
  if (noise.silenced) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  check_lanes(first_lane, out.size());
  kernels::fill_normals(noise.key(), step, tag, first_lane, out);
}

}  // namespace

void standard_increments(const NoiseBundle& noise, std::uint64_t step,
                         std::uint64_t first_lane, std::span<double> out,
                         int level) {
  if (level < 0 || level > 24) throw std::invalid_argument("refinement level out of range");
  fill(noise, step >> level, kTagIncrement, first_lane, out);
  if (level == 0 || noise.silenced) return;

  std::vector<double> xi(out.size());
  for (int l = 1; l <= level; ++l) {
    const std::uint64_t index = step >> (level - l);
    fill(noise, index >> 1, kTagBridgeBase + static_cast<std::uint32_t>(l), first_lane, xi);
    const bool first_half = (index & 1u) == 0;
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] = (first_half ? out[j] + xi[j] : out[j] - xi[j]) * M_SQRT1_2;
  }
}

void initial_normals(const NoiseBundle& noise, std::uint64_t first_lane,
                     std::span<double> out) {
  fill(noise, 0, kTagInitial, first_lane, out);
}

void aux_normals(const NoiseBundle& noise, std::uint64_t step,
                 std::uint64_t first_lane, std::span<double> out) {
  fill(noise, step, kTagAux, first_lane, out);
}

}  // namespace fpf
