#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace fdecon {

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2,
// 3", SC'11). A keyed bijection on 128-bit counters; every (seed, stream)
// pair addresses an independent sequence, so per-emitter and per-frame draws
// never share state.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

// Sequential view of one Philox stream. Counter layout: words 0-1 hold the
// block index, words 2-3 the 64-bit stream id; the key is the 64-bit seed.
//
// uniform() uses 53 bits from two consecutive words: (hi >> 5, lo >> 6)
// packed as in the classic genrand_res53. normal() is Box-Muller on two
// uniforms, returning both variates in turn.
class CounterRng {
public:
  using result_type = std::uint32_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // Uniform on [0, 1).
  double uniform();
  // Uniform on (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// Stream-id domains used by the simulator.
enum class StreamDomain : std::uint64_t { Pattern = 1, Blinking = 2, Noise = 3 };

inline std::uint64_t stream_id(StreamDomain domain, std::uint64_t index) {
  return (static_cast<std::uint64_t>(domain) << 48) ^ index;
}

}  // namespace fdecon
