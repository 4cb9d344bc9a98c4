#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "seqdm/seqmodel.h"
#include "seqdm/sequence.h"

namespace seqdm {

// Longest sequence any task may generate.
inline constexpr int kMaxTaskLength = 50;

enum class TaskKind { kCopy, kReverse, kCipher, kContLabel };

TaskKind parse_task_kind(const std::string& name);
const char* task_kind_name(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::kCopy;
  int num_content = 12;
  int min_len = 3;  // token sequence lengths (targets of cont_label too)
  int max_len = 8;
  // Probability that a training source token is replaced by a different
  // content token. Dev and test sources stay clean.
  double noise = 0.1;
  int train_size = 2000;
  int dev_size = 200;
  int test_size = 200;
  std::uint64_t seed = 1;

  // cipher: permutation of the content ids 0..num_content-1; empty draws one
  // from the seed.
  std::vector<int> permutation;

  // cont_label: one prototype vector sequence and one label sequence per class.
  int classes = 10;
  int dim = 8;
  int min_steps = 3;
  int max_steps = 6;
  double jitter = 0.1;  // std of the Gaussian added to each prototype entry

  void validate() const;
};

struct TaskData {
  Vocab vocab;
  std::vector<Example> train, dev, test;
  std::vector<int> permutation;  // cipher only
};

// Deterministic given `spec`. Clean token sources are distinct across all
// three splits; continuous sources differ by their jitter.
TaskData generate(const TaskSpec& spec);

// Vocab file: one token per line, line number (from 0) = id, first three
// lines the reserved tokens.
void write_vocab(std::ostream& out, const Vocab& vocab);
Vocab read_vocab(std::istream& in);
void save_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab load_vocab(const std::filesystem::path& path);

// Token datasets: one pair per line, space-separated source tokens, a TAB,
// space-separated target tokens.
void write_text_dataset(std::ostream& out, const std::vector<Example>& data, const Vocab& vocab);
std::vector<Example> read_text_dataset(std::istream& in, const Vocab& vocab);

// Vector-source datasets: magic "VSEQ0001", then per record u32 T, u32 K,
// T*K f64 values, u32 target length and that many u32 target ids, all
// little-endian.
inline constexpr char kVecDatasetMagic[] = "VSEQ0001";
void write_vector_dataset(std::ostream& out, const std::vector<Example>& data);
std::vector<Example> read_vector_dataset(std::istream& in, const Vocab& vocab);

// File-level helpers; load_dataset picks the format from the magic bytes.
void save_dataset(const std::filesystem::path& path, const std::vector<Example>& data,
                  const Vocab& vocab);
std::vector<Example> load_dataset(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace seqdm
