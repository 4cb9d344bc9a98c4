#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace seqdm {

// Counter-based random stream. Draw k depends only on (seed, path, k), so a
// stream can be recreated anywhere and split children never disturb the
// parent. Children with different split paths are treated as independent.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::vector<std::uint64_t> path = {});

  RngStream split(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }
  const std::vector<std::uint64_t>& path() const { return path_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  // Standard normal (Box-Muller, consumes two draws).
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Index i with probability probs[i]. Throws UsageError unless probs is a
  // probability vector (non-negative, sums to 1 within 1e-9).
  int categorical(std::span<const double> probs);

 private:
  std::uint64_t seed_;
  std::vector<std::uint64_t> path_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace seqdm
