#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "seqdm/errors.h"
#include "seqdm/harness.h"
#include "seqdm/verify.h"

namespace {

using namespace seqdm;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerification = 2;
constexpr int kExitNumerical = 3;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string checkpoint;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "key=value configuration file");
  cmd->add_option("--seed", f.seed, "overrides the configured seed");
  cmd->add_option("--out", f.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--checkpoint", f.checkpoint, "checkpoint to start from or evaluate");
  cmd->add_option("--set", f.overrides, "extra key=value setting, applied after --config");
}

// Config precedence: defaults or the checkpoint's echo, then --config, then
// --set, then --seed.
Config resolve_config(const CommonFlags& f, const std::optional<Checkpoint>& ck) {
  Config cfg;
  if (ck) {
    std::istringstream echo(ck->config_text);
    cfg = parse_config(echo);
  }
  if (!f.config_path.empty()) cfg = load_config(f.config_path, cfg);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.seed = *f.seed;
  cfg.validate();
  return cfg;
}

std::optional<Checkpoint> maybe_checkpoint(const CommonFlags& f) {
  if (f.checkpoint.empty()) return std::nullopt;
  return load_checkpoint(f.checkpoint);
}

Checkpoint need_checkpoint(const CommonFlags& f, const char* cmd) {
  if (f.checkpoint.empty()) throw UsageError(std::string(cmd) + " requires --checkpoint");
  return load_checkpoint(f.checkpoint);
}

int report(const std::vector<CheckRow>& rows, const std::string& out_dir, const char* name) {
  write_check_csv(std::cout, rows);
  std::filesystem::create_directories(out_dir);
  std::ofstream file(std::filesystem::path(out_dir) / (std::string(name) + ".csv"));
  write_check_csv(file, rows);
  const bool ok = all_pass(rows);
  std::cerr << name << ": " << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? kExitOk : kExitVerification;
}

const std::vector<Example>& pick_split(const DataSplits& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "dev") return d.dev;
  if (split == "test") return d.test;
  throw UsageError("unknown split '" + split + "' (expected train, dev or test)");
}

int run(int argc, char** argv) {
  CLI::App app{"Sequence-to-sequence training by distribution matching"};
  app.require_subcommand(1);
  CommonFlags f;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset into data_dir");
  auto* pretrain = app.add_subcommand("pretrain", "MLE then augmenter self-reconstruction");
  auto* dm = app.add_subcommand("train-dm", "alternating distribution-matching training");
  auto* mle = app.add_subcommand("train-mle", "maximum-likelihood baseline");
  auto* rl = app.add_subcommand("train-rl", "policy-gradient baseline");
  auto* raml = app.add_subcommand("train-raml", "reward-augmented maximum-likelihood baseline");
  auto* eval = app.add_subcommand("eval", "corpus BLEU, exact match and log-probability");
  auto* sample = app.add_subcommand("sample", "print samples from all three networks");
  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient checks");
  auto* oracle = app.add_subcommand("oracle-check", "Monte Carlo estimators against enumeration");
  for (auto* c : {gen, pretrain, dm, mle, rl, raml, eval, sample, grad, oracle}) add_common(c, f);

  std::string split = "test";
  std::string data_path;
  int count = 3;
  eval->add_option("--split", split, "train, dev or test")->capture_default_str();
  eval->add_option("--data", data_path, "dataset file to evaluate instead of a split");
  sample->add_option("--split", split, "train, dev or test")->capture_default_str();
  sample->add_option("--count", count, "samples per network and pair")->capture_default_str();
  bool corrupt = false;
  grad->add_flag("--corrupt", corrupt, "perturb one analytic gradient coordinate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const RunOptions opts{f.out_dir, &std::cerr};
  if (*grad) {
    GradCheckOptions o;
    o.corrupt = corrupt;
    if (f.seed) o.seed = *f.seed;
    return report(run_grad_check(o), f.out_dir, "grad_check");
  }
  if (*oracle) {
    OracleCheckOptions o;
    if (f.seed) o.seed = *f.seed;
    return report(run_oracle_check(o), f.out_dir, "oracle_check");
  }

  const std::optional<Checkpoint> ck = maybe_checkpoint(f);
  const Config cfg = resolve_config(f, ck);
  if (*gen) {
    const DataSplits d = cmd_gen_data(cfg);
    std::cerr << "wrote " << d.train.size() << "/" << d.dev.size() << "/" << d.test.size()
              << " pairs to " << cfg.data_dir << '\n';
  } else if (*pretrain) {
    cmd_pretrain(cfg, opts);
  } else if (*dm) {
    cmd_train_dm(cfg, need_checkpoint(f, "train-dm"), opts);
  } else if (*mle || *rl || *raml) {
    const BaselineKind kind = *mle ? BaselineKind::kMle : *rl ? BaselineKind::kRl : BaselineKind::kRaml;
    cmd_train_baseline(cfg, kind, ck, opts);
  } else if (*eval || *sample) {
    const Checkpoint c = need_checkpoint(f, *eval ? "eval" : "sample");
    DataSplits d = load_data(cfg);
    if (!data_path.empty()) d.test = load_dataset(data_path, d.vocab);
    const auto& data = data_path.empty() ? pick_split(d, split) : d.test;
    if (*eval) {
      const EvalReport r = cmd_eval(cfg, c, data, d.vocab, opts);
      std::cout << "pairs " << r.pairs << "\nbleu " << r.bleu << "\nexact_match " << r.exact_match
                << "\nmean_log_prob " << r.mean_log_prob << '\n';
    } else {
      cmd_sample(cfg, c, data, d.vocab, count, std::cout);
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const seqdm::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const seqdm::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const seqdm::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const seqdm::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}
