#pragma once

// Counter-based noise streams.
//
// A stream is identified by (seed, stream_id). Its key feeds Philox4x32-10;
// the counter carries (step, lane pair, tag). Lane j of a stream is the j-th
// independent scalar Wiener process (or initial-condition coordinate) owned
// by that stream, so particle i of a d-dimensional ensemble owns lanes
// [i*d, (i+1)*d). Any draw can be regenerated from its coordinates alone,
// which makes coupling constructions exact and results independent of the
// order in which trials are executed.

#include <cstdint>
#include <span>
#include <string_view>

#include "fpf/kernels.hpp"

namespace fpf {

std::uint64_t splitmix64(std::uint64_t x);

/// Combines a parent seed with a label; used to build the seed tree.
std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t label);

/// 64-bit FNV-1a, for turning names into seed-tree labels.
std::uint64_t fnv1a64(std::string_view text);

/// Stream labels for the roles a trial needs.
enum class StreamRole : std::uint64_t {
  truth = 1,
  observation = 2,
  particles = 3,       // B^i, shared by particle i and mean-field copy i
  perturbed_obs = 4,   // W-bar^i of the perturbed-observation variant
  alt_particles = 5,   // second population in stability runs
  bootstrap = 6,
};

struct NoiseBundle {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  bool silenced = false;  // test hook: every draw is exactly zero

  static NoiseBundle for_role(std::uint64_t trial_seed, StreamRole role) {
    return {trial_seed, static_cast<std::uint64_t>(role), false};
  }

  kernels::PhiloxKey key() const;
};

inline constexpr std::uint32_t kTagIncrement = 0;
inline constexpr std::uint32_t kTagInitial = 1;
inline constexpr std::uint32_t kTagAux = 2;
inline constexpr std::uint32_t kTagBridgeBase = 16;

/// Standardized Brownian increments dB/sqrt(h) for step `step` of a grid with
/// step h = dt / 2^level, lanes [first_lane, first_lane + out.size()).
///
/// Level 0 draws are fresh normals. A level-L step is obtained from its
/// level-(L-1) parent by Brownian-bridge splitting, so the two half steps
/// always sum to the parent increment: a refined run is pathwise coupled to
/// the coarse run with the same bundle.
void standard_increments(const NoiseBundle& noise, std::uint64_t step,
                         std::uint64_t first_lane, std::span<double> out,
                         int level = 0);

/// Standard normals reserved for initial conditions.
void initial_normals(const NoiseBundle& noise, std::uint64_t first_lane,
                     std::span<double> out);

/// Standard normals from the auxiliary tag (used for non-Gaussian initial
/// laws and resampling).
void aux_normals(const NoiseBundle& noise, std::uint64_t step,
                 std::uint64_t first_lane, std::span<double> out);

}  // namespace fpf
