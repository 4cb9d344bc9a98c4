#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "seqdm/tasks.h"

namespace seqdm {

// Every tunable of the command-line workflow. Files hold flat key=value
// lines with '#' comments; keys match the member names below.
struct Config {
  // Data generation and location.
  std::string task = "copy";
  int num_content = 12;
  int min_len = 3;
  int max_len = 8;
  double noise = 0.1;
  int train_size = 2000;
  int dev_size = 200;
  int test_size = 200;
  int classes = 10;
  int dim = 8;
  int min_steps = 3;
  int max_steps = 6;
  double jitter = 0.1;
  std::string data_dir = "data";

  std::uint64_t seed = 1;
  int threads = 1;

  // Sequence model.
  int embed = 32;
  int hidden = 32;
  int attention = 32;
  int decode_max_len = 12;

  // Augmenters.
  int aug_embed = 16;
  int aug_hidden = 32;
  int aug_attention = 32;
  int aug_mlp = 32;
  int aug_extra_len = 2;
  int cont_hidden = 16;
  int cont_mlp = 16;
  double cont_min_scale = 1e-3;

  // Shared optimisation settings.
  double eta = 1.0;
  double anneal_factor = 0.8;
  int anneal_every = 3;
  int batch_size = 16;
  double clip_norm = 5.0;
  int beam = 4;

  // Pretraining: MLE with dev-loss patience, then self-reconstruction.
  int pretrain_epochs = 30;
  int patience = 5;  // 0 disables early stopping
  int selfrec_epochs = 30;
  double selfrec_eta = 0.5;
  double selfrec_clip = 5.0;

  // Distribution matching.
  int dm_epochs = 3;
  int n_samples = 4;
  std::string alternation = "1:1";  // augmenter steps : sequence-model steps
  double dm_eta = 0.005;      // sequence-model steps
  double dm_aug_eta = 0.001;  // augmenter steps
  double dm_clip = 5.0;
  double entropy_weight = 1.0;
  double fidelity_weight = 1.0;
  std::string source_reward = "bleu4";
  std::string target_reward = "bleu4";
  bool fidelity_baseline = true;
  int probe_pairs = 10;  // the first training pairs
  int probe_samples = 64;

  // Baseline trainers.
  int baseline_epochs = 3;
  double baseline_eta = 0.1;
  std::string rl_reward = "delta_bleu";
  double baseline_decay = 0.9;
  double raml_tau = 0.8;
  int raml_candidates = 4;
  int raml_max_edit = -1;

  bool log_wall_time = false;

  // Throws UsageError naming the offending key.
  void validate() const;

  TaskSpec task_spec() const;
  // Parsed alternation ratio {augmenter steps, sequence-model steps}.
  std::pair<int, int> alternation_ratio() const;
};

// Applies one key=value assignment; throws UsageError on an unknown key or
// a malformed value.
void set_config_value(Config& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

// Starts from `base` and applies every line of the file. Errors carry the
// line number.
Config parse_config(std::istream& in, Config base = {});
Config load_config(const std::filesystem::path& path, Config base = {});
// Every key in declaration order; parse_config(config_to_text(c)) == c.
std::string config_to_text(const Config& cfg);

bool operator==(const Config& a, const Config& b);

}  // namespace seqdm
