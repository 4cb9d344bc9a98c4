#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "seqdm/baselines.h"
#include "seqdm/objectives.h"

namespace seqdm {

inline constexpr char kCheckpointMagic[] = "S2SDM001";

// Everything needed to continue a run. All randomness derives from `seed`
// and the epoch counters, so these fully describe the RNG state.
struct Checkpoint {
  std::string config_text;
  DmParams params;
  std::string stage = "init";  // init, pretrain, dm, mle, rl, raml
  std::uint64_t seed = 0;
  int epoch = 0;               // completed epochs of `stage`
  std::uint64_t step = 0;      // completed mini-batches of `stage`
  TrainerState trainer;

  bool operator==(const Checkpoint&) const = default;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ck);
// Throws ParseError on a bad magic, version or truncated data.
Checkpoint read_checkpoint(std::istream& in);

// Writes to a temporary file then renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seqdm
