#pragma once
// Counter-based random streams (Philox4x32-10).
//
// A stream is addressed by (seed, stream_id); the n-th block of a stream is a
// pure function of (seed, stream_id, n). Run i of an ensemble always uses
// stream (seed, i), so results do not depend on how runs are scheduled.

#include <array>
#include <cstdint>

namespace reachlab {

using PhiloxBlock = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

// One Philox4x32 bijection with 10 rounds.
PhiloxBlock philox4x32_10(PhiloxBlock counter, PhiloxKey key);

class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1), 53-bit resolution.
  double next_uniform();
  double next_normal();
  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t next_index(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// Derive a child seed from (seed, tag) so independent experiment stages do not
// share streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace reachlab
