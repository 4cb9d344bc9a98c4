#include "seqdm/harness.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#include "seqdm/baselines.h"
#include "seqdm/errors.h"
#include "seqdm/numerics.h"
#include "seqdm/parallel.h"
#include "seqdm/rewards.h"

namespace seqdm {
namespace {

namespace fs = std::filesystem;

// Top-level random streams, one per stage.
enum Stream : std::uint64_t {
  kInitStream = 0,
  kPretrainStream = 1,
  kDmStream = 2,
  kBaselineStream = 3,
  kProbeStream = 4,
  kSampleStream = 5,
};

bool vector_task(const Config& cfg) { return parse_task_kind(cfg.task) == TaskKind::kContLabel; }

const char* data_ext(const Config& cfg) { return vector_task(cfg) ? ".vseq" : ".txt"; }

void say(const RunOptions& run, const std::string& line) {
  if (run.log != nullptr) *run.log << line << std::endl;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

class MetricsWriter {
 public:
  // Appends when resuming into an existing file, otherwise starts fresh.
  MetricsWriter(const fs::path& path, bool resume) {
    const bool append = resume && fs::exists(path);
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw UsageError("cannot write " + path.string());
    if (!append) out_ << kMetricsHeader << '\n';
    out_.flush();
  }
  void write(const MetricsRow& row) {
    out_ << format_metrics_row(row) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

class Stopwatch {
 public:
  std::optional<double> seconds(bool enabled) const {
    if (!enabled) return std::nullopt;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double mean_nll(const SeqModel& model, const ParamStore& beta, std::span<const Example> data,
                int threads) {
  std::vector<double> lp(data.size());
  parallel_for(data.size(), threads,
               [&](std::size_t i) { lp[i] = model.log_prob(beta, data[i].source, data[i].target); });
  double s = 0.0;
  for (double v : lp) s -= v;
  return data.empty() ? 0.0 : s / static_cast<double>(data.size());
}

std::vector<Source> sources_of(std::span<const Example> data) {
  std::vector<Source> out;
  for (const auto& ex : data) out.push_back(ex.source);
  return out;
}

std::vector<Source> targets_of(std::span<const Example> data) {
  std::vector<Source> out;
  for (const auto& ex : data) out.push_back(Source(ex.target));
  return out;
}

Checkpoint make_checkpoint(const Config& cfg, DmParams params, std::string stage, int epoch,
                           std::uint64_t step, TrainerState trainer = {}) {
  return Checkpoint{config_to_text(cfg), std::move(params), std::move(stage), cfg.seed, epoch, step,
                    trainer};
}

fs::path stage_path(const RunOptions& run, const std::string& stage, const char* suffix) {
  fs::create_directories(run.out_dir);
  return run.out_dir / (stage + suffix);
}

void fill_dev(MetricsRow& row, const SeqModel& model, const ParamStore& beta,
              std::span<const Example> dev, const Config& cfg) {
  const EvalReport r = evaluate(model, beta, dev, cfg.beam, cfg.threads);
  row.dev_bleu = r.bleu;
  row.dev_exact = r.exact_match;
}

std::string describe(const MetricsRow& r, const std::string& stage) {
  std::string s = stage + " epoch " + std::to_string(r.epoch) + " eta " + fmt("%.4g", r.eta);
  if (r.j_match) s += " j_match " + fmt("%.4f", *r.j_match);
  if (r.entropy) s += " entropy " + fmt("%.4f", *r.entropy);
  if (r.reward_tgt) s += " reward " + fmt("%.4f", *r.reward_tgt);
  return s + " dev_bleu " + fmt("%.2f", r.dev_bleu) + " dev_exact " + fmt("%.3f", r.dev_exact);
}

// Resume point for `stage` given a starting checkpoint.
std::pair<int, std::uint64_t> resume_point(const Checkpoint& ck, const std::string& stage) {
  if (ck.stage == stage) return {ck.epoch, ck.step};
  return {0, 0};
}

}  // namespace

ModelSet build_models(const Config& cfg) {
  cfg.validate();
  const int vocab = cfg.num_content + kFirstContent;
  ModelSet m;
  m.model = std::make_unique<SeqModel>(SeqModelConfig{
      .vocab_size = vocab,
      .source_dim = vector_task(cfg) ? cfg.dim : 0,
      .embed = cfg.embed,
      .hidden = cfg.hidden,
      .attention = cfg.attention,
      .max_len = cfg.decode_max_len});
  const DiscreteAugConfig disc{.vocab_size = vocab,
                               .embed = cfg.aug_embed,
                               .hidden = cfg.aug_hidden,
                               .attention = cfg.aug_attention,
                               .mlp = cfg.aug_mlp,
                               .extra_len = cfg.aug_extra_len};
  if (vector_task(cfg)) {
    m.source = std::make_unique<ContinuousAugmenter>(ContinuousAugConfig{
        .dim = cfg.dim, .hidden = cfg.cont_hidden, .mlp = cfg.cont_mlp,
        .min_scale = cfg.cont_min_scale});
  } else {
    m.source = std::make_unique<DiscreteAugmenter>(disc);
  }
  m.target = std::make_unique<DiscreteAugmenter>(disc);
  return m;
}

DmParams init_params(const ModelSet& models, std::uint64_t seed) {
  const RngStream root = RngStream(seed).split(kInitStream);
  RngStream rt = root.split(0), rg = root.split(1), rb = root.split(2);
  return DmParams{models.source->init_params(rt), models.target->init_params(rg),
                  models.model->init_params(rb)};
}

void check_checkpoint(const Config& cfg, const Checkpoint& ck) {
  const ModelSet models = build_models(cfg);
  const DmParams fresh = init_params(models, 0);
  require_shape_compatible(fresh.theta, ck.params.theta, "checkpoint source augmenter");
  require_shape_compatible(fresh.gamma, ck.params.gamma, "checkpoint target augmenter");
  require_shape_compatible(fresh.beta, ck.params.beta, "checkpoint sequence model");
}

DataSplits cmd_gen_data(const Config& cfg) {
  const TaskData d = generate(cfg.task_spec());
  const fs::path dir(cfg.data_dir);
  fs::create_directories(dir);
  save_vocab(dir / "vocab.txt", d.vocab);
  const char* ext = data_ext(cfg);
  save_dataset(dir / (std::string("train") + ext), d.train, d.vocab);
  save_dataset(dir / (std::string("dev") + ext), d.dev, d.vocab);
  save_dataset(dir / (std::string("test") + ext), d.test, d.vocab);
  return DataSplits{d.vocab, d.train, d.dev, d.test};
}

DataSplits load_data(const Config& cfg) {
  const fs::path dir(cfg.data_dir);
  DataSplits s;
  s.vocab = load_vocab(dir / "vocab.txt");
  if (s.vocab.size() != cfg.num_content + kFirstContent) {
    throw UsageError("vocabulary in " + dir.string() + " has " +
                     std::to_string(s.vocab.num_content()) + " content tokens, config expects " +
                     std::to_string(cfg.num_content));
  }
  const char* ext = data_ext(cfg);
  s.train = load_dataset(dir / (std::string("train") + ext), s.vocab);
  s.dev = load_dataset(dir / (std::string("dev") + ext), s.vocab);
  s.test = load_dataset(dir / (std::string("test") + ext), s.vocab);
  if (s.train.empty()) throw UsageError("training set in " + dir.string() + " is empty");
  return s;
}

EvalReport score_predictions(std::span<const TokenSeq> hypotheses,
                             std::span<const TokenSeq> references) {
  if (hypotheses.size() != references.size()) {
    throw UsageError("score_predictions: hypothesis and reference counts differ");
  }
  EvalReport r;
  r.pairs = references.size();
  if (r.pairs == 0) return r;
  r.bleu = 100.0 * corpus_bleu(hypotheses, references).bleu;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < r.pairs; ++i) exact += hypotheses[i] == references[i];
  r.exact_match = static_cast<double>(exact) / static_cast<double>(r.pairs);
  return r;
}

EvalReport evaluate(const SeqModel& model, const ParamStore& beta, std::span<const Example> data,
                    int beam, int threads) {
  std::vector<TokenSeq> hyps(data.size()), refs(data.size());
  std::vector<double> lp(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    hyps[i] = model.beam_decode(beta, data[i].source, beam);
    refs[i] = data[i].target;
    lp[i] = model.log_prob(beta, data[i].source, data[i].target);
  });
  EvalReport r = score_predictions(hyps, refs);
  double s = 0.0;
  for (double v : lp) s += v;
  if (!data.empty()) r.mean_log_prob = s / static_cast<double>(data.size());
  return r;
}

std::string format_metrics_row(const MetricsRow& row) {
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt("%.10g", *v) : std::string();
  };
  return std::to_string(row.epoch) + "," + fmt("%.10g", row.eta) + "," + opt(row.j_match) + "," +
         opt(row.entropy) + "," + opt(row.reward_src) + "," + opt(row.reward_tgt) + "," +
         fmt("%.10g", row.dev_bleu) + "," + fmt("%.10g", row.dev_exact) + "," +
         std::to_string(row.floor_hits) + "," + opt(row.wall_seconds);
}

double probe_kl(const DmModels& models, const DmParams& params, std::span<const Example> pairs,
                int samples, std::uint64_t seed, int threads) {
  if (pairs.empty()) return 0.0;
  const RngStream root = RngStream(seed).split(kProbeStream);
  std::vector<double> kl(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Example& pair = pairs[k];
    const DmSamples s = draw_samples(models, params, pair, samples, root.split(k));
    // log p_beta(y_i | x_j), one graph per x sharing its encoding.
    std::vector<double> table(static_cast<std::size_t>(samples) * samples);
    parallel_for(s.xs.size(), threads, [&](std::size_t j) {
      Graph g(&params.beta);
      const auto outs = models.model->build_log_probs(g, s.xs[j], s.ys);
      for (std::size_t i = 0; i < s.ys.size(); ++i) table[i * samples + j] = g.value(outs[i]);
    });
    double sum = 0.0;
    for (int i = 0; i < samples; ++i) {
      const double lg = models.target->log_prob(params.gamma, Source(pair.target), Source(s.ys[i]));
      const auto m = marginal_from_log_probs(
          std::span<const double>(table.data() + static_cast<std::size_t>(i) * samples, samples));
      sum += lg - m.log_value;
    }
    kl[k] = sum / samples;
  }
  double total = 0.0;
  for (double v : kl) total += v;
  return total / static_cast<double>(pairs.size());
}

Checkpoint cmd_pretrain(const Config& cfg, const RunOptions& run) {
  cfg.validate();
  const DataSplits data = load_data(cfg);
  const ModelSet models = build_models(cfg);
  DmParams params = init_params(models, cfg.seed);
  const RngStream rng = RngStream(cfg.seed).split(kPretrainStream);
  const Stopwatch clock;
  MetricsWriter metrics(stage_path(run, "pretrain", "_metrics.csv"), false);

  ParamStore best = params.beta;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const LoopOptions base{.epochs = 1, .eta = cfg.eta, .anneal_factor = cfg.anneal_factor,
                         .anneal_every = cfg.anneal_every, .batch_size = cfg.batch_size,
                         .clip_norm = cfg.clip_norm, .threads = cfg.threads};
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    LoopOptions opt = base;
    opt.start_epoch = epoch;
    const TrainResult r = train_mle(*models.model, params.beta, data.train, opt, rng);
    params.beta = r.beta;
    MetricsRow row{.epoch = epoch, .eta = r.curve.back().eta, .j_match = r.curve.back().loss,
                   .entropy = 0.0};
    fill_dev(row, *models.model, params.beta, data.dev, cfg);
    row.wall_seconds = clock.seconds(cfg.log_wall_time);
    metrics.write(row);
    const double dev_loss = data.dev.empty() ? row.j_match.value()
                                             : mean_nll(*models.model, params.beta, data.dev, cfg.threads);
    say(run, describe(row, "pretrain") + " dev_nll " + fmt("%.4f", dev_loss));
    if (dev_loss < best_loss) {
      best_loss = dev_loss;
      best = params.beta;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      say(run, "pretrain: dev loss has not improved for " + std::to_string(cfg.patience) +
                   " epochs, stopping");
      break;
    }
  }
  params.beta = best;

  if (cfg.selfrec_epochs > 0) {
    std::vector<double> src_curve, tgt_curve;
    const auto xs = sources_of(data.train);
    const auto ys = targets_of(data.train);
    for (int epoch = 0; epoch < cfg.selfrec_epochs; ++epoch) {
      const SelfReconstructionOptions sr{
          .epochs = 1,
          .eta = annealed_eta(cfg.selfrec_eta, cfg.anneal_factor, cfg.anneal_every, epoch),
          .batch_size = cfg.batch_size,
          .clip_norm = cfg.selfrec_clip,
          .threads = cfg.threads};
      params.theta = pretrain_self_reconstruction(*models.source, params.theta, xs, sr, &src_curve);
      params.gamma = pretrain_self_reconstruction(*models.target, params.gamma, ys, sr, &tgt_curve);
    }
    std::ofstream sc(stage_path(run, "pretrain", "_selfrec.csv"));
    sc << "epoch,source_loss,target_loss\n";
    for (std::size_t e = 0; e < src_curve.size(); ++e) {
      sc << e << ',' << fmt("%.10g", src_curve[e]) << ',' << fmt("%.10g", tgt_curve[e]) << '\n';
      say(run, "selfrec epoch " + std::to_string(e) + " source_loss " + fmt("%.4f", src_curve[e]) +
                   " target_loss " + fmt("%.4f", tgt_curve[e]));
    }
  }
  Checkpoint ck = make_checkpoint(cfg, std::move(params), "pretrain", cfg.pretrain_epochs, 0);
  save_checkpoint(stage_path(run, "pretrain", ".ckpt"), ck);
  return ck;
}

Checkpoint cmd_train_dm(const Config& cfg_in, const Checkpoint& start, const RunOptions& run) {
  Config cfg = cfg_in;
  cfg.validate();
  check_checkpoint(cfg, start);
  const auto [resume_epoch, resume_step] = resume_point(start, "dm");
  if (resume_epoch > 0) cfg.seed = start.seed;
  const DataSplits data = load_data(cfg);
  const ModelSet models = build_models(cfg);
  const DmModels view = models.view();
  DmParams params = start.params;
  const RngStream rng = RngStream(cfg.seed).split(kDmStream);
  const auto [aug_steps, model_steps] = cfg.alternation_ratio();
  const Stopwatch clock;
  MetricsWriter metrics(stage_path(run, "dm", "_metrics.csv"), resume_epoch > 0);

  const std::size_t probes = std::min<std::size_t>(cfg.probe_pairs, data.train.size());
  const std::span<const Example> probe_set(data.train.data(), probes);
  std::ofstream probe_csv;
  {
    const fs::path p = stage_path(run, "dm", "_probe.csv");
    const bool append = resume_epoch > 0 && fs::exists(p);
    probe_csv.open(p, append ? std::ios::app : std::ios::trunc);
    if (!append) {
      probe_csv << "completed_epochs,probe_kl\n";
      const double kl0 = probe_kl(view, params, probe_set, cfg.probe_samples, cfg.seed, cfg.threads);
      probe_csv << resume_epoch << ',' << fmt("%.10g", kl0) << '\n' << std::flush;
      say(run, "dm probe_kl " + fmt("%.4f", kl0) + " before epoch " + std::to_string(resume_epoch));
    }
  }

  CombinedConfig cc{.n = cfg.n_samples,
                    .entropy_weight = cfg.entropy_weight,
                    .fidelity_weight = cfg.fidelity_weight,
                    .source_reward = RewardFn{parse_reward_kind(cfg.source_reward)},
                    .target_reward = RewardFn{parse_reward_kind(cfg.target_reward)},
                    .fidelity_baseline = cfg.fidelity_baseline,
                    .clip_norm = cfg.dm_clip,
                    .threads = cfg.threads};
  const std::size_t n = data.train.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::uint64_t step = resume_step;
  for (int epoch = resume_epoch; epoch < cfg.dm_epochs; ++epoch) {
    const double model_eta = annealed_eta(cfg.dm_eta, cfg.anneal_factor, cfg.anneal_every, epoch);
    const double aug_eta = annealed_eta(cfg.dm_aug_eta, cfg.anneal_factor, cfg.anneal_every, epoch);
    const auto order = epoch_order(n, rng, epoch);
    MetricsRow row{.epoch = epoch, .eta = model_eta};
    double j = 0.0, h = 0.0, rs = 0.0, rt = 0.0;
    int batches = 0;
    for (std::size_t b0 = 0, b = 0; b0 < n; b0 += bs, ++b) {
      std::vector<Example> batch;
      for (std::size_t i = b0; i < std::min(n, b0 + bs); ++i) batch.push_back(data.train[order[i]]);
      const std::uint64_t phase = step % static_cast<std::uint64_t>(aug_steps + model_steps);
      cc.group = phase < static_cast<std::uint64_t>(aug_steps) ? UpdateGroup::kAugmenters
                                                                : UpdateGroup::kSeqModel;
      cc.eta = cc.group == UpdateGroup::kAugmenters ? aug_eta : model_eta;
      CombinedStepResult r = combined_step(view, params, batch, cc,
                                           rng.split(1).split(static_cast<std::uint64_t>(epoch)).split(b));
      params = std::move(r.params);
      j += r.diag.j_match;
      h += r.diag.entropy;
      rs += r.diag.reward_src;
      rt += r.diag.reward_tgt;
      row.floor_hits += r.diag.floor_hits;
      ++batches;
      ++step;
    }
    row.j_match = j / batches;
    row.entropy = h / batches;
    row.reward_src = rs / batches;
    row.reward_tgt = rt / batches;
    fill_dev(row, *models.model, params.beta, data.dev, cfg);
    row.wall_seconds = clock.seconds(cfg.log_wall_time);
    metrics.write(row);
    const double kl = probe_kl(view, params, probe_set, cfg.probe_samples, cfg.seed, cfg.threads);
    probe_csv << epoch + 1 << ',' << fmt("%.10g", kl) << '\n' << std::flush;
    say(run, describe(row, "dm") + " probe_kl " + fmt("%.4f", kl) + " floor_hits " +
                 std::to_string(row.floor_hits));
    save_checkpoint(stage_path(run, "dm", ".ckpt"), make_checkpoint(cfg, params, "dm", epoch + 1, step));
  }
  Checkpoint ck = make_checkpoint(cfg, std::move(params), "dm", std::max(cfg.dm_epochs, resume_epoch), step);
  save_checkpoint(stage_path(run, "dm", ".ckpt"), ck);
  return ck;
}

BaselineKind parse_baseline_kind(const std::string& name) {
  if (name == "mle") return BaselineKind::kMle;
  if (name == "rl") return BaselineKind::kRl;
  if (name == "raml") return BaselineKind::kRaml;
  throw UsageError("unknown baseline '" + name + "' (expected mle, rl or raml)");
}

const char* baseline_kind_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kMle: return "mle";
    case BaselineKind::kRl: return "rl";
    case BaselineKind::kRaml: return "raml";
  }
  return "?";
}

Checkpoint cmd_train_baseline(const Config& cfg_in, BaselineKind kind,
                              const std::optional<Checkpoint>& start, const RunOptions& run) {
  Config cfg = cfg_in;
  cfg.validate();
  const std::string stage = baseline_kind_name(kind);
  if (kind == BaselineKind::kRl && !start) {
    throw UsageError("train-rl needs a pretrained checkpoint (--checkpoint)");
  }
  const ModelSet models = build_models(cfg);
  DmParams params;
  int resume_epoch = 0;
  std::uint64_t step = 0;
  TrainerState state;
  if (start) {
    check_checkpoint(cfg, *start);
    params = start->params;
    std::tie(resume_epoch, step) = resume_point(*start, stage);
    if (resume_epoch > 0) {
      cfg.seed = start->seed;
      state = start->trainer;
    }
  } else {
    params = init_params(models, cfg.seed);
  }
  const DataSplits data = load_data(cfg);
  const RngStream rng = RngStream(cfg.seed).split(kBaselineStream).split(static_cast<std::uint64_t>(kind));
  const Stopwatch clock;
  MetricsWriter metrics(stage_path(run, stage, "_metrics.csv"), resume_epoch > 0);

  const std::size_t batches = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  for (int epoch = resume_epoch; epoch < cfg.baseline_epochs; ++epoch) {
    const LoopOptions opt{.epochs = 1, .start_epoch = epoch, .eta = cfg.baseline_eta,
                          .anneal_factor = cfg.anneal_factor, .anneal_every = cfg.anneal_every,
                          .batch_size = cfg.batch_size, .clip_norm = cfg.clip_norm,
                          .threads = cfg.threads};
    TrainResult r;
    switch (kind) {
      case BaselineKind::kMle:
        r = train_mle(*models.model, params.beta, data.train, opt, rng);
        break;
      case BaselineKind::kRl:
        r = train_reinforce(*models.model, params.beta, data.train, opt,
                            ReinforceOptions{.reward = parse_reward_kind(cfg.rl_reward),
                                             .baseline_decay = cfg.baseline_decay},
                            rng, state);
        state = r.state;
        break;
      case BaselineKind::kRaml:
        r = train_raml(*models.model, params.beta, data.train, opt,
                       RamlConfig{.tau = cfg.raml_tau, .candidates_per_pair = cfg.raml_candidates,
                                  .max_edit = cfg.raml_max_edit},
                       rng);
        break;
    }
    for (const auto& w : r.warnings) say(run, "warning: " + w);
    params.beta = r.beta;
    step += batches;
    const EpochStats& es = r.curve.back();
    MetricsRow row{.epoch = epoch, .eta = es.eta};
    if (kind == BaselineKind::kRl) {
      row.reward_tgt = es.reward;
    } else {
      row.j_match = es.loss;
      row.entropy = 0.0;
    }
    fill_dev(row, *models.model, params.beta, data.dev, cfg);
    row.wall_seconds = clock.seconds(cfg.log_wall_time);
    metrics.write(row);
    say(run, describe(row, stage));
    save_checkpoint(stage_path(run, stage, ".ckpt"),
                    make_checkpoint(cfg, params, stage, epoch + 1, step, state));
  }
  Checkpoint ck = make_checkpoint(cfg, std::move(params), stage,
                                  std::max(cfg.baseline_epochs, resume_epoch), step, state);
  save_checkpoint(stage_path(run, stage, ".ckpt"), ck);
  return ck;
}

EvalReport cmd_eval(const Config& cfg, const Checkpoint& ck, std::span<const Example> data,
                    const Vocab& vocab, const RunOptions& run) {
  cfg.validate();
  if (vocab.size() != cfg.num_content + kFirstContent) {
    throw UsageError("vocabulary mismatch: data has " + std::to_string(vocab.num_content()) +
                     " content tokens, checkpoint model has " + std::to_string(cfg.num_content));
  }
  check_checkpoint(cfg, ck);
  const ModelSet models = build_models(cfg);
  const EvalReport r = evaluate(*models.model, ck.params.beta, data, cfg.beam, cfg.threads);
  std::ofstream out(stage_path(run, "eval", ".csv"));
  out << "pairs,bleu,exact_match,mean_log_prob\n"
      << r.pairs << ',' << fmt("%.10g", r.bleu) << ',' << fmt("%.10g", r.exact_match) << ','
      << fmt("%.10g", r.mean_log_prob) << '\n';
  return r;
}

void cmd_sample(const Config& cfg, const Checkpoint& ck, std::span<const Example> data,
                const Vocab& vocab, int count, std::ostream& out) {
  check_checkpoint(cfg, ck);
  const ModelSet models = build_models(cfg);
  const RngStream root = RngStream(cfg.seed).split(kSampleStream);
  auto show = [&](const Source& s) {
    if (const auto* t = std::get_if<TokenSeq>(&s)) return to_string(*t, vocab);
    const auto& v = std::get<VecSeq>(s);
    return "<" + std::to_string(v.length()) + "x" + std::to_string(v.dim) + " vectors>";
  };
  const std::size_t pairs = std::min<std::size_t>(data.size(), 5);
  for (std::size_t k = 0; k < pairs; ++k) {
    const Example& ex = data[k];
    out << "pair " << k << "\n  source: " << show(ex.source)
        << "\n  target: " << to_string(ex.target, vocab) << '\n';
    for (int c = 0; c < count; ++c) {
      RngStream r = root.split(k).split(static_cast<std::uint64_t>(c));
      RngStream r0 = r.split(0), r1 = r.split(1), r2 = r.split(2);
      const Draw x = models.source->sample(ck.params.theta, ex.source, r0);
      const Draw y = models.target->sample(ck.params.gamma, Source(ex.target), r1);
      const SampledSeq m = models.model->sample(ck.params.beta, ex.source, r2, cfg.decode_max_len);
      out << "  source aug: " << show(x.value) << "   target aug: " << show(y.value)
          << "   model: " << to_string(m.seq, vocab) << '\n';
    }
  }
}

}  // namespace seqdm
