#include "seqdm/checkpoint.h"

#include <cstring>
#include <fstream>

#include "seqdm/binio.h"
#include "seqdm/errors.h"

namespace seqdm {
namespace {

constexpr std::uint64_t kMaxString = 1u << 24;

void write_store(std::ostream& out, const ParamStore& store) {
  binio::put_u64(out, store.size());
  for (const auto& [name, t] : store) {
    binio::put_string(out, name);
    binio::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) binio::put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : t.data()) binio::put_f64(out, v);
  }
}

ParamStore read_store(std::istream& in) {
  ParamStore store;
  const std::uint64_t count = binio::get_u64(in, "entry count");
  if (count > 100000) throw ParseError("implausible parameter entry count");
  for (std::uint64_t e = 0; e < count; ++e) {
    std::string name = binio::get_string(in, "entry name", 4096);
    const std::uint32_t rank = binio::get_u32(in, "rank");
    if (rank == 0 || rank > 4) throw ParseError("entry '" + name + "' has unsupported rank");
    std::vector<int> shape(rank);
    std::uint64_t total = 1;
    for (int& d : shape) {
      const std::uint64_t v = binio::get_u64(in, "shape");
      if (v == 0 || v > (1u << 24)) throw ParseError("entry '" + name + "' has a bad shape");
      d = static_cast<int>(v);
      total *= v;
      if (total > (1ull << 28)) throw ParseError("entry '" + name + "' is implausibly large");
    }
    std::vector<double> data(total);
    for (double& v : data) v = binio::get_f64(in, "tensor data");
    try {
      store.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    } catch (const UsageError& err) {
      throw ParseError(err.what());
    }
  }
  return store;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out.write(kCheckpointMagic, 8);
  binio::put_string(out, ck.config_text);
  write_store(out, ck.params.theta);
  write_store(out, ck.params.gamma);
  write_store(out, ck.params.beta);
  binio::put_string(out, ck.stage);
  binio::put_u64(out, ck.seed);
  binio::put_u64(out, static_cast<std::uint64_t>(ck.epoch));
  binio::put_u64(out, ck.step);
  binio::put_f64(out, ck.trainer.reward_baseline);
  binio::put_u32(out, ck.trainer.baseline_ready ? 1 : 0);
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8] = {};
  if (!in.read(magic, 8)) throw ParseError("not a checkpoint (file too short)");
  if (std::memcmp(magic, kCheckpointMagic, 5) == 0 && std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ParseError("unsupported checkpoint version " + std::string(magic + 5, 3));
  }
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw ParseError("not a checkpoint (bad magic)");
  Checkpoint ck;
  ck.config_text = binio::get_string(in, "config", kMaxString);
  ck.params.theta = read_store(in);
  ck.params.gamma = read_store(in);
  ck.params.beta = read_store(in);
  ck.stage = binio::get_string(in, "stage", 64);
  ck.seed = binio::get_u64(in, "seed");
  ck.epoch = static_cast<int>(binio::get_u64(in, "epoch"));
  ck.step = binio::get_u64(in, "step");
  ck.trainer.reward_baseline = binio::get_f64(in, "reward baseline");
  ck.trainer.baseline_ready = binio::get_u32(in, "baseline flag") != 0;
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    write_checkpoint(out, ck);
    if (!out.flush()) throw UsageError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read checkpoint " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace seqdm
