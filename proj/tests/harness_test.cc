#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "seqdm/errors.h"
#include "seqdm/harness.h"

namespace seqdm {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

int columns(const std::string& line) {
  return static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
}

class HarnessTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("seqdm_harness_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    cfg_.num_content = 5;
    cfg_.min_len = 2;
    cfg_.max_len = 4;
    cfg_.noise = 0.0;
    cfg_.train_size = 40;
    cfg_.dev_size = 10;
    cfg_.test_size = 10;
    cfg_.data_dir = (dir_ / "data").string();
    cfg_.embed = cfg_.hidden = cfg_.attention = 8;
    cfg_.aug_embed = cfg_.aug_hidden = cfg_.aug_attention = cfg_.aug_mlp = 8;
    cfg_.decode_max_len = 6;
    cfg_.batch_size = 8;
    cfg_.pretrain_epochs = 2;
    cfg_.selfrec_epochs = 1;
    cfg_.dm_epochs = 2;
    cfg_.baseline_epochs = 2;
    cfg_.n_samples = 2;
    cfg_.probe_pairs = 2;
    cfg_.probe_samples = 4;
    cfg_.beam = 2;
    cmd_gen_data(cfg_);
  }
  void TearDown() override {
    if (!std::getenv("SEQDM_KEEP")) fs::remove_all(dir_);
  }

  RunOptions out(const std::string& name) const { return RunOptions{dir_ / name, nullptr}; }

  fs::path dir_;
  Config cfg_;
};

TEST(Config, RoundTripsThroughText) {
  Config c;
  c.eta = 0.1 + 0.2;
  c.task = "reverse";
  c.log_wall_time = true;
  std::istringstream in(config_to_text(c));
  EXPECT_EQ(parse_config(in), c);
}

TEST(Config, ParsesCommentsAndRejectsUnknownKeys) {
  std::istringstream good("# comment\n\n  eta = 0.25  # trailing\nalternation=2:1\n");
  const Config c = parse_config(good);
  EXPECT_EQ(c.eta, 0.25);
  EXPECT_EQ(c.alternation_ratio(), (std::pair<int, int>{2, 1}));
  std::istringstream typo("eta=0.1\netaa=0.2\n");
  try {
    parse_config(typo);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_NE(std::string(e.what()).find("etaa"), std::string::npos);
  }
  std::istringstream bad_value("beam=two\n");
  EXPECT_THROW(parse_config(bad_value), ParseError);
  std::istringstream no_eq("beam\n");
  EXPECT_THROW(parse_config(no_eq), ParseError);
}

TEST(Config, ValidatesInvariants) {
  auto invalid = [](const std::string& key, const std::string& value) {
    Config c;
    set_config_value(c, key, value);
    EXPECT_THROW(c.validate(), UsageError) << key << "=" << value;
  };
  invalid("eta", "0");
  invalid("anneal_factor", "1.5");
  invalid("anneal_factor", "0");
  invalid("n_samples", "1");
  invalid("beam", "0");
  invalid("alternation", "0:0");
  invalid("alternation", "1-1");
  invalid("source_reward", "cont_sim");
  invalid("noise", "0.7");
  EXPECT_NO_THROW(Config{}.validate());
  Config c;
  set_config_value(c, "anneal_factor", "1");
  EXPECT_NO_THROW(c.validate());
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  Config cfg;
  cfg.num_content = 4;
  const ModelSet m = build_models(cfg);
  Checkpoint ck{config_to_text(cfg), init_params(m, 3), "dm", 3, 2, 17, {0.25, true}};
  std::stringstream a;
  write_checkpoint(a, ck);
  const std::string bytes = a.str();
  EXPECT_EQ(bytes.substr(0, 8), "S2SDM001");
  std::istringstream in(bytes);
  const Checkpoint back = read_checkpoint(in);
  EXPECT_EQ(back, ck);
  std::stringstream b;
  write_checkpoint(b, back);
  EXPECT_EQ(b.str(), bytes);

  std::string v2 = bytes;
  v2[7] = '2';
  std::istringstream newer(v2);
  EXPECT_THROW(read_checkpoint(newer), ParseError);
  std::istringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(cut), ParseError);
  std::istringstream junk("not a checkpoint at all");
  EXPECT_THROW(read_checkpoint(junk), ParseError);
}

TEST_F(HarnessTest, GeneratedDataLoadsBack) {
  const DataSplits d = load_data(cfg_);
  const TaskData t = generate(cfg_.task_spec());
  EXPECT_EQ(d.vocab, t.vocab);
  EXPECT_EQ(d.train, t.train);
  EXPECT_EQ(d.test, t.test);
  Config other = cfg_;
  other.num_content = 6;
  EXPECT_THROW(load_data(other), UsageError);
}

TEST_F(HarnessTest, UntrainedPretrainIsLoadable) {
  Config c = cfg_;
  c.pretrain_epochs = 0;
  c.patience = 0;
  c.selfrec_epochs = 0;
  const Checkpoint ck = cmd_pretrain(c, out("p"));
  EXPECT_EQ(ck.params, init_params(build_models(c), c.seed));
  const Checkpoint loaded = load_checkpoint(dir_ / "p" / "pretrain.ckpt");
  EXPECT_EQ(loaded, ck);
  EXPECT_NO_THROW(check_checkpoint(c, loaded));
  EXPECT_EQ(lines(dir_ / "p" / "pretrain_metrics.csv").size(), 1u);
}

TEST_F(HarnessTest, PretrainIsDeterministic) {
  cmd_pretrain(cfg_, out("a"));
  cmd_pretrain(cfg_, out("b"));
  EXPECT_EQ(slurp(dir_ / "a" / "pretrain_metrics.csv"), slurp(dir_ / "b" / "pretrain_metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "pretrain.ckpt"), slurp(dir_ / "b" / "pretrain.ckpt"));
  const auto rows = lines(dir_ / "a" / "pretrain_metrics.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], kMetricsHeader);
  for (const auto& r : rows) EXPECT_EQ(columns(r), 10) << r;
}

TEST_F(HarnessTest, PatienceStopsEarly) {
  Config c = cfg_;
  c.pretrain_epochs = 50;
  c.patience = 1;
  c.eta = 5.0;  // overshoots, so dev loss soon stops improving
  c.clip_norm = 0.0;
  try {
    cmd_pretrain(c, out("p"));
  } catch (const NumericalError&) {
    GTEST_SKIP() << "diverged before patience ran out";
  }
  EXPECT_LT(lines(dir_ / "p" / "pretrain_metrics.csv").size(), 51u);
}

TEST_F(HarnessTest, DistributionMatchingWritesCurvesAndCheckpoints) {
  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  const Checkpoint dm = cmd_train_dm(cfg_, pre, out("d"));
  EXPECT_EQ(dm.stage, "dm");
  EXPECT_EQ(dm.epoch, 2);
  EXPECT_EQ(dm.step, 10u);
  const auto rows = lines(dir_ / "d" / "dm_metrics.csv");
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) EXPECT_EQ(columns(r), 10) << r;
  const auto probe = lines(dir_ / "d" / "dm_probe.csv");
  ASSERT_EQ(probe.size(), 4u);
  EXPECT_EQ(probe[0], "completed_epochs,probe_kl");
  EXPECT_EQ(load_checkpoint(dir_ / "d" / "dm.ckpt"), dm);
}

TEST_F(HarnessTest, AugmenterOnlyRatioLeavesModelUntouched) {
  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  Config c = cfg_;
  c.alternation = "1:0";
  const Checkpoint dm = cmd_train_dm(c, pre, out("d"));
  EXPECT_EQ(dm.params.beta, pre.params.beta);
  EXPECT_FALSE(dm.params.theta == pre.params.theta);

  c.alternation = "0:1";
  const Checkpoint model_only = cmd_train_dm(c, pre, out("m"));
  EXPECT_EQ(model_only.params.theta, pre.params.theta);
  EXPECT_EQ(model_only.params.gamma, pre.params.gamma);
}

TEST_F(HarnessTest, ResumedDistributionMatchingMatchesUninterrupted) {
  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  Config c = cfg_;
  c.dm_epochs = 3;
  const Checkpoint full = cmd_train_dm(c, pre, out("full"));

  Config first = c;
  first.dm_epochs = 1;
  const Checkpoint half = cmd_train_dm(first, pre, out("split"));
  const Checkpoint reloaded = load_checkpoint(dir_ / "split" / "dm.ckpt");
  const Checkpoint rest = cmd_train_dm(c, reloaded, out("split"));
  EXPECT_EQ(rest.params, full.params);
  EXPECT_EQ(rest.step, full.step);
  EXPECT_EQ(slurp(dir_ / "split" / "dm_metrics.csv"), slurp(dir_ / "full" / "dm_metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "split" / "dm_probe.csv"), slurp(dir_ / "full" / "dm_probe.csv"));
}

TEST_F(HarnessTest, ThreadCountDoesNotChangeResults) {
  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  Config c = cfg_;
  c.threads = 3;
  const Checkpoint one = cmd_train_dm(cfg_, pre, out("t1"));
  const Checkpoint three = cmd_train_dm(c, pre, out("t3"));
  EXPECT_EQ(one.params, three.params);
  EXPECT_EQ(slurp(dir_ / "t1" / "dm_metrics.csv"), slurp(dir_ / "t3" / "dm_metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "t1" / "dm_probe.csv"), slurp(dir_ / "t3" / "dm_probe.csv"));
}

TEST_F(HarnessTest, IncompatibleCheckpointIsRejected) {
  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  Config c = cfg_;
  c.hidden = 12;
  EXPECT_THROW(cmd_train_dm(c, pre, out("d")), ShapeError);
}

TEST_F(HarnessTest, BaselinesRunDeterministicallyWithSharedSchema) {
  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  for (BaselineKind kind : {BaselineKind::kMle, BaselineKind::kRl, BaselineKind::kRaml}) {
    const std::string name = baseline_kind_name(kind);
    const Checkpoint a = cmd_train_baseline(cfg_, kind, pre, out("a"));
    const Checkpoint b = cmd_train_baseline(cfg_, kind, pre, out("b"));
    EXPECT_EQ(a.params, b.params) << name;
    EXPECT_EQ(a.stage, name);
    const auto ca = slurp(dir_ / "a" / (name + "_metrics.csv"));
    EXPECT_EQ(ca, slurp(dir_ / "b" / (name + "_metrics.csv"))) << name;
    const auto rows = lines(dir_ / "a" / (name + "_metrics.csv"));
    ASSERT_EQ(rows.size(), 3u) << name;
    EXPECT_EQ(rows[0], kMetricsHeader);
    for (const auto& r : rows) EXPECT_EQ(columns(r), 10) << r;
  }
  EXPECT_TRUE(cmd_train_baseline(cfg_, BaselineKind::kRl, pre, out("rl")).trainer.baseline_ready);
  EXPECT_THROW(cmd_train_baseline(cfg_, BaselineKind::kRl, std::nullopt, out("x")), UsageError);
}

TEST_F(HarnessTest, ZeroEpochBaselineIsANoOp) {
  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  Config c = cfg_;
  c.baseline_epochs = 0;
  EXPECT_EQ(cmd_train_baseline(c, BaselineKind::kRaml, pre, out("r")).params, pre.params);
}

TEST_F(HarnessTest, ResumedReinforceMatchesUninterrupted) {
  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  Config c = cfg_;
  c.baseline_epochs = 3;
  const Checkpoint full = cmd_train_baseline(c, BaselineKind::kRl, pre, out("full"));
  Config first = c;
  first.baseline_epochs = 1;
  cmd_train_baseline(first, BaselineKind::kRl, pre, out("split"));
  const Checkpoint rest = cmd_train_baseline(c, BaselineKind::kRl,
                                             load_checkpoint(dir_ / "split" / "rl.ckpt"), out("split"));
  EXPECT_EQ(rest.params, full.params);
  EXPECT_EQ(rest.trainer.reward_baseline, full.trainer.reward_baseline);
  EXPECT_EQ(slurp(dir_ / "split" / "rl_metrics.csv"), slurp(dir_ / "full" / "rl_metrics.csv"));
}

TEST_F(HarnessTest, MleFromScratchImprovesOnToyTask) {
  Config c = cfg_;
  c.baseline_epochs = 30;
  c.baseline_eta = 0.5;
  c.anneal_every = 10;
  cmd_train_baseline(c, BaselineKind::kMle, std::nullopt, out("m"));
  const auto rows = lines(dir_ / "m" / "mle_metrics.csv");
  auto loss = [](const std::string& row) {
    std::istringstream in(row);
    std::string f;
    std::getline(in, f, ',');
    std::getline(in, f, ',');
    std::getline(in, f, ',');
    return std::stod(f);
  };
  EXPECT_LT(loss(rows.back()), 0.8 * loss(rows[1]));
}

TEST_F(HarnessTest, EvalScoresGoldAndChecksVocabulary) {
  const DataSplits d = load_data(cfg_);
  std::vector<TokenSeq> refs;
  for (const auto& ex : d.dev) refs.push_back(ex.target);
  const EvalReport gold = score_predictions(refs, refs);
  EXPECT_DOUBLE_EQ(gold.bleu, 100.0);
  EXPECT_DOUBLE_EQ(gold.exact_match, 1.0);

  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  const EvalReport a = cmd_eval(cfg_, pre, d.test, d.vocab, out("e"));
  const EvalReport b = cmd_eval(cfg_, pre, d.test, d.vocab, out("e"));
  EXPECT_EQ(a.bleu, b.bleu);
  EXPECT_EQ(a.pairs, 10u);
  EXPECT_LT(a.mean_log_prob, 0.0);
  EXPECT_EQ(lines(dir_ / "e" / "eval.csv")[0], "pairs,bleu,exact_match,mean_log_prob");
  EXPECT_THROW(cmd_eval(cfg_, pre, d.test, Vocab::synthetic(7), out("e")), UsageError);
}

TEST(Eval, HandComputedTwoPairCorpus) {
  // Hypotheses [3 4 5 6], [8 9 10 11] against [3 4 5 7], [8 9 10 11 12]:
  // matches 7/8, 5/6, 3/4, 1/2 over n = 1..4 and brevity penalty exp(1 - 9/8).
  const std::vector<TokenSeq> hyp = {{{3, 4, 5, 6}, true}, {{8, 9, 10, 11}, true}};
  const std::vector<TokenSeq> ref = {{{3, 4, 5, 7}, true}, {{8, 9, 10, 11, 12}, true}};
  const double expect =
      100.0 * std::exp(1.0 - 9.0 / 8.0) *
      std::exp(0.25 * (std::log(7.0 / 8) + std::log(5.0 / 6) + std::log(3.0 / 4) + std::log(0.5)));
  const EvalReport r = score_predictions(hyp, ref);
  EXPECT_NEAR(r.bleu, expect, 1e-12);
  EXPECT_EQ(r.exact_match, 0.0);
}

TEST_F(HarnessTest, SamplePrintsEveryNetwork) {
  const Checkpoint pre = cmd_pretrain(cfg_, out("p"));
  const DataSplits d = load_data(cfg_);
  std::ostringstream s;
  cmd_sample(cfg_, pre, d.dev, d.vocab, 2, s);
  const std::string text = s.str();
  EXPECT_NE(text.find("source aug:"), std::string::npos);
  EXPECT_NE(text.find("model:"), std::string::npos);
}

TEST_F(HarnessTest, ContinuousTaskRunsEndToEnd) {
  Config c = cfg_;
  c.task = "cont_label";
  c.source_reward = "cont_sim";
  c.dim = 3;
  c.classes = 4;
  c.min_steps = 2;
  c.max_steps = 3;
  c.data_dir = (dir_ / "vdata").string();
  cmd_gen_data(c);
  EXPECT_TRUE(fs::exists(dir_ / "vdata" / "train.vseq"));
  const Checkpoint pre = cmd_pretrain(c, out("p"));
  const Checkpoint dm = cmd_train_dm(c, pre, out("d"));
  EXPECT_EQ(lines(dir_ / "d" / "dm_metrics.csv").size(), 3u);
  EXPECT_TRUE(dm.params.theta.all_finite());
}

TEST(ProbeKl, DeterministicAndZeroForMatchedPointMasses) {
  Config cfg;
  cfg.num_content = 4;
  const ModelSet m = build_models(cfg);
  const DmParams p = init_params(m, 1);
  const std::vector<Example> pairs = {{Source(TokenSeq{{3, 4}, true}), TokenSeq{{4, 3}, true}}};
  const double a = probe_kl(m.view(), p, pairs, 8, 5);
  EXPECT_EQ(a, probe_kl(m.view(), p, pairs, 8, 5, 3));
  const PointMassAugmenter delta;
  const double pm = probe_kl({&delta, &delta, m.model.get()}, p, pairs, 8, 5);
  EXPECT_NEAR(pm, -m.model->log_prob(p.beta, pairs[0].source, pairs[0].target), 1e-12);
}

#ifdef SEQDM_CLI
int run_cli(const std::string& args) {
  const std::string cmd = std::string(SEQDM_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(HarnessTest, CliExitCodes) {
  const std::string data = "--set data_dir=" + cfg_.data_dir;
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("no-such-command"), 1);
  EXPECT_EQ(run_cli("train-dm " + data), 1);  // missing --checkpoint
  EXPECT_EQ(run_cli("pretrain --set etaa=1"), 1);
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir_ / "missing.ckpt").string()), 1);
  EXPECT_EQ(run_cli("grad-check --corrupt --out " + (dir_ / "g").string()), 2);
  const std::string small =
      data + " --set num_content=5 --set min_len=2 --set max_len=4 --set train_size=40"
             " --set dev_size=10 --set test_size=10 --set embed=8 --set hidden=8 --set attention=8"
             " --set decode_max_len=6 --set pretrain_epochs=1 --set selfrec_epochs=0"
             " --set noise=0";
  EXPECT_EQ(run_cli("pretrain " + small + " --out " + (dir_ / "cli").string()), 0);
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir_ / "cli" / "pretrain.ckpt").string() + " --out " +
                    (dir_ / "cli").string()),
            0);
  EXPECT_EQ(run_cli("pretrain " + small + " --set clip_norm=0 --set eta=1e300 --out " +
                    (dir_ / "nan").string()),
            3);
}
#endif

}  // namespace
}  // namespace seqdm
