#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seqdm/augmenter.h"
#include "seqdm/checkpoint.h"
#include "seqdm/config.h"
#include "seqdm/objectives.h"
#include "seqdm/seqmodel.h"
#include "seqdm/tasks.h"

namespace seqdm {

struct DataSplits {
  Vocab vocab;
  std::vector<Example> train, dev, test;
};

// The three networks a configuration describes.
struct ModelSet {
  std::unique_ptr<SeqModel> model;
  std::unique_ptr<Augmenter> source;
  std::unique_ptr<Augmenter> target;

  DmModels view() const { return {source.get(), target.get(), model.get()}; }
};

ModelSet build_models(const Config& cfg);
// Fresh parameters drawn from the config seed.
DmParams init_params(const ModelSet& models, std::uint64_t seed);

// Writes vocab.txt and train/dev/test files (.txt for token sources, .vseq
// for vector sources) into cfg.data_dir.
DataSplits cmd_gen_data(const Config& cfg);
DataSplits load_data(const Config& cfg);

struct EvalReport {
  std::size_t pairs = 0;
  double bleu = 0.0;           // corpus BLEU-4 x 100
  double exact_match = 0.0;
  double mean_log_prob = 0.0;  // of the references under the model
};

// Scores given hypotheses; mean_log_prob is left at 0.
EvalReport score_predictions(std::span<const TokenSeq> hypotheses,
                             std::span<const TokenSeq> references);
// Beam-decodes every source and scores it against the reference.
EvalReport evaluate(const SeqModel& model, const ParamStore& beta, std::span<const Example> data,
                    int beam, int threads = 1);

// Header of every learning-curve CSV.
inline constexpr const char* kMetricsHeader =
    "epoch,eta,j_match_est,entropy_est,reward_src,reward_tgt,dev_bleu,dev_exact,floor_hits,"
    "wall_seconds";

struct MetricsRow {
  int epoch = 0;
  double eta = 0.0;
  std::optional<double> j_match{};
  std::optional<double> entropy{};
  std::optional<double> reward_src{};
  std::optional<double> reward_tgt{};
  double dev_bleu = 0.0;
  double dev_exact = 0.0;
  int floor_hits = 0;
  std::optional<double> wall_seconds{};
};

std::string format_metrics_row(const MetricsRow& row);

// Monte Carlo estimate of KL(p_gamma(.|y*) || p_hat(.|x*)) averaged over
// `pairs`, using `samples` draws per side from fixed random streams.
double probe_kl(const DmModels& models, const DmParams& params, std::span<const Example> pairs,
                int samples, std::uint64_t seed, int threads = 1);

struct RunOptions {
  std::filesystem::path out_dir = ".";
  std::ostream* log = nullptr;  // progress lines; nullptr for silence
};

// Each command writes <out>/<stage>.ckpt after every epoch and
// <out>/<stage>_metrics.csv with one row per epoch. A checkpoint whose stage
// matches the command resumes it.
Checkpoint cmd_pretrain(const Config& cfg, const RunOptions& run);
Checkpoint cmd_train_dm(const Config& cfg, const Checkpoint& start, const RunOptions& run);

enum class BaselineKind { kMle, kRl, kRaml };
BaselineKind parse_baseline_kind(const std::string& name);
const char* baseline_kind_name(BaselineKind kind);
Checkpoint cmd_train_baseline(const Config& cfg, BaselineKind kind,
                              const std::optional<Checkpoint>& start, const RunOptions& run);

// Writes <out>/eval.csv.
// Throws UsageError when the data vocabulary does not match the model.
EvalReport cmd_eval(const Config& cfg, const Checkpoint& ck, std::span<const Example> data,
                    const Vocab& vocab, const RunOptions& run);

// Prints `count` samples from each network for the first pairs of `data`.
void cmd_sample(const Config& cfg, const Checkpoint& ck, std::span<const Example> data,
                const Vocab& vocab, int count, std::ostream& out);

// Checks that `ck` fits the networks of `cfg`; throws ShapeError otherwise.
void check_checkpoint(const Config& cfg, const Checkpoint& ck);

}  // namespace seqdm
