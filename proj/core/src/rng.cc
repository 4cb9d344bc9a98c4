#include "seqdm/rng.h"

#include <cmath>
#include <numbers>

#include "seqdm/errors.h"

namespace seqdm {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t derive_key(std::uint64_t seed, const std::vector<std::uint64_t>& path) {
  std::uint64_t k = mix64(seed ^ 0x243F6A8885A308D3ULL);
  for (std::uint64_t p : path) k = mix64(k ^ mix64(p + kGolden));
  return k;
}

}  // namespace

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t z) {
  z += kGolden;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::vector<std::uint64_t> path)
    : seed_(seed), path_(std::move(path)), key_(derive_key(seed_, path_)) {}

RngStream RngStream::split(std::uint64_t index) const {
  std::vector<std::uint64_t> p = path_;
  p.push_back(index);
  return RngStream(seed_, std::move(p));
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c * kGolden + 0x632BE59BD9B4E019ULL));
}

double RngStream::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw UsageError("RngStream::below: n must be positive");
  // Lemire's multiply-shift; bias is < n / 2^64, irrelevant at our sizes.
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

int RngStream::categorical(std::span<const double> probs) {
  if (probs.empty()) throw UsageError("categorical: empty probability vector");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw UsageError("categorical: invalid probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw UsageError("categorical: probabilities sum to " + std::to_string(total));
  }
  const double u = uniform() * total;
  double cum = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = static_cast<int>(i);
    if (u < cum) return last;
  }
  return last;
}

}  // namespace seqdm
