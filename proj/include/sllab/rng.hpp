#pragma once

#include <array>
#include <cstdint>

namespace sllab {

// SplitMix64 finalizer, used for seed and stream hashing.
std::uint64_t mix64(std::uint64_t x);

// Stream key for path `index` under `base_seed`.
std::uint64_t stream_key(std::uint64_t base_seed, std::uint64_t index);

/// Philox4x32-10 counter-based generator. The 64-bit key selects the stream;
/// the 128-bit block counter starts at zero. No hidden global state, so two
/// generators built from the same key produce identical sequences.
class Philox {
 public:
  explicit Philox(std::uint64_t key);

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  double normal();
  double exponential();

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int pos_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sllab
