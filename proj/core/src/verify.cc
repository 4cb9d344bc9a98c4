#include "seqdm/verify.h"

#include <cmath>
#include <ostream>
#include <sstream>

#include "seqdm/baselines.h"
#include "seqdm/errors.h"
#include "seqdm/numerics.h"
#include "seqdm/rewards.h"

namespace seqdm {

void randomize_uniform(ParamStore& params, RngStream& rng, double scale) {
  for (auto& [name, t] : params) {
    for (double& v : t.data()) v = (2.0 * rng.uniform() - 1.0) * scale;
  }
}

std::unique_ptr<TinyDm> make_tiny_dm(std::uint64_t seed, double scale) {
  const SeqModelConfig mc{.vocab_size = TinyDm::kVocab, .embed = 4, .hidden = 8, .attention = 4,
                          .max_len = TinyDm::kMaxLen};
  const DiscreteAugConfig ac{.vocab_size = TinyDm::kVocab, .embed = 4, .hidden = 4,
                             .attention = 4, .mlp = 4, .extra_len = 1};
  auto t = std::unique_ptr<TinyDm>(new TinyDm{
      EnumSpace(TinyDm::kVocab, TinyDm::kMaxLen), SeqModel(mc), DiscreteAugmenter(ac),
      DiscreteAugmenter(ac), Example{TokenSeq{{3, 4}, true}, TokenSeq{{4, 3}, true}}, {}});
  RngStream rng(seed);
  t->params.theta = t->source.init_params(rng);
  t->params.gamma = t->target.init_params(rng);
  t->params.beta = t->model.init_params(rng);
  randomize_uniform(t->params.theta, rng, scale);
  randomize_uniform(t->params.gamma, rng, scale);
  randomize_uniform(t->params.beta, rng, scale);
  return t;
}

// ---------------------------------------------------------------------------

void GradMoments::add(const ParamStore& g) {
  if (count_ == 0) {
    sum_ = g.zeros_like();
    sum_sq_ = g.zeros_like();
  }
  require_shape_compatible(sum_, g, "GradMoments");
  for (std::size_t e = 0; e < g.size(); ++e) {
    const auto src = g.entry(e).second.data();
    auto s = sum_.entry(e).second.data();
    auto q = sum_sq_.entry(e).second.data();
    for (std::size_t k = 0; k < src.size(); ++k) {
      s[k] += src[k];
      q[k] += src[k] * src[k];
    }
  }
  ++count_;
}

ParamStore GradMoments::mean() const {
  ParamStore m = sum_;
  m.scale(1.0 / static_cast<double>(count_));
  return m;
}

GradMoments::Coverage GradMoments::coverage(const ParamStore& reference, double z,
                                            double abs_floor) const {
  if (count_ < 2) throw UsageError("coverage needs at least two estimates");
  require_shape_compatible(sum_, reference, "GradMoments::coverage");
  Coverage c;
  const double n = static_cast<double>(count_);
  double se_sum = 0.0;
  for (std::size_t e = 0; e < reference.size(); ++e) {
    const auto s = sum_.entry(e).second.data();
    const auto q = sum_sq_.entry(e).second.data();
    const auto r = reference.entry(e).second.data();
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double mean = s[k] / n;
      const double var = std::max(0.0, (q[k] - n * mean * mean) / (n - 1.0));
      const double se = std::sqrt(var / n);
      const double diff = std::abs(mean - r[k]);
      ++c.coords;
      se_sum += se;
      const bool ok = diff <= z * se || diff <= abs_floor;
      if (ok) ++c.within;
      const double zk = se > 0.0 ? diff / se : (diff <= abs_floor ? 0.0 : INFINITY);
      c.worst_z = std::max(c.worst_z, zk);
    }
  }
  c.fraction = c.coords ? static_cast<double>(c.within) / c.coords : 1.0;
  c.mean_se = c.coords ? se_sum / c.coords : 0.0;
  return c;
}

// ---------------------------------------------------------------------------

void write_check_csv(std::ostream& out, const std::vector<CheckRow>& rows) {
  out << "suite,check,value,threshold,pass,detail\n";
  for (const auto& r : rows) {
    std::string detail = r.detail;
    for (char& ch : detail) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    std::ostringstream v, t;
    v.precision(6);
    t.precision(6);
    v << r.value;
    t << r.threshold;
    out << r.suite << ',' << r.check << ',' << v.str() << ',' << t.str() << ','
        << (r.pass ? "pass" : "fail") << ',' << detail << '\n';
  }
}

bool all_pass(const std::vector<CheckRow>& rows) {
  for (const auto& r : rows) {
    if (!r.pass) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Gradient checks

namespace {

TokenSeq random_tokens(RngStream& rng, int vocab, int min_len, int max_len) {
  TokenSeq s;
  const int len = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
  for (int i = 0; i < len; ++i) {
    s.ids.push_back(kFirstContent + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - kFirstContent))));
  }
  return s;
}

VecSeq random_vectors(RngStream& rng, int dim, int min_len, int max_len) {
  const int len = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
  std::vector<double> data(static_cast<std::size_t>(len) * dim);
  for (double& v : data) v = rng.normal();
  return VecSeq(dim, std::move(data));
}

std::string describe(const FdReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << r.worst_name << "[" << r.worst_index << "] analytic=" << r.worst_analytic
     << " numeric=" << r.worst_numeric << " coords=" << r.coords_checked;
  return os.str();
}

// Tracks the worst report across instances of one program.
struct Worst {
  FdReport report;
  std::size_t coords = 0;
  void add(const FdReport& r) {
    coords += r.coords_checked;
    if (r.max_rel_err >= report.max_rel_err) report = r;
  }
  CheckRow row(const std::string& check, double tol) const {
    FdReport r = report;
    r.coords_checked = coords;
    return CheckRow{"grad_check", check, report.max_rel_err, tol, report.max_rel_err <= tol,
                    describe(r)};
  }
};

// Per-sample-index coefficients of the match and fidelity estimators,
// recomputed without deduplication.
struct SurrogateCoefs {
  std::vector<double> gamma, theta, beta;  // beta is [i * N + j]
};

SurrogateCoefs naive_coefs(const TinyDm& dm, const DmSamples& s, double entropy_weight,
                           const Similarity& reward) {
  const int n = static_cast<int>(s.xs.size());
  const double inv = 1.0 / n;
  SurrogateCoefs c;
  c.gamma.assign(n, 0.0);
  c.theta.assign(n, 0.0);
  c.beta.assign(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> lt(n), lg(n), l(static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j) lt[j] = dm.source.log_prob(dm.params.theta, dm.pair.source, s.xs[j]);
  for (int i = 0; i < n; ++i) {
    lg[i] = dm.target.log_prob(dm.params.gamma, Source(dm.pair.target), Source(s.ys[i]));
    for (int j = 0; j < n; ++j) l[i * n + j] = dm.model.log_prob(dm.params.beta, s.xs[j], s.ys[i]);
  }
  double rx_mean = 0.0, ry_mean = 0.0;
  std::vector<double> rx(n), ry(n);
  for (int k = 0; k < n; ++k) {
    rx[k] = reward(s.xs[k], dm.pair.source);
    ry[k] = reward(Source(s.ys[k]), Source(dm.pair.target));
    rx_mean += rx[k] * inv;
    ry_mean += ry[k] * inv;
  }
  for (int i = 0; i < n; ++i) {
    double m = -INFINITY;
    for (int j = 0; j < n; ++j) m = std::max(m, l[i * n + j]);
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += std::exp(l[i * n + j] - m);
    const double log_phat = std::max(m + std::log(acc * inv), kMarginalLogFloor);
    c.gamma[i] = inv * (lg[i] - log_phat) - inv * (ry[i] - ry_mean);
    for (int j = 0; j < n; ++j) {
      const double w = std::exp(l[i * n + j] - log_phat);
      c.beta[i * n + j] = -inv * inv * w;
      c.theta[j] -= inv * inv * w;
    }
  }
  for (int j = 0; j < n; ++j) c.theta[j] += inv * entropy_weight * lt[j] - inv * (rx[j] - rx_mean);
  return c;
}

}  // namespace

std::vector<CheckRow> run_grad_check(const GradCheckOptions& options) {
  const double h = options.step, tol = options.tolerance;
  std::vector<CheckRow> rows;
  const RngStream root(options.seed);

  {
    Worst w;
    const SeqModel m({.vocab_size = 6, .embed = 4, .hidden = 8, .attention = 4, .max_len = 4});
    for (int inst = 0; inst < options.instances; ++inst) {
      RngStream rng = root.split(1).split(inst);
      ParamStore p = m.init_params(rng);
      randomize_uniform(p, rng, 1.0);
      const TokenSeq x = random_tokens(rng, 6, 1, 4), y = random_tokens(rng, 6, 0, 4);
      const Program prog = [&](Graph& g) { return m.build_log_prob(g, x, y); };
      ParamStore analytic = eval_with_grad(prog, p).grads;
      if (options.corrupt && inst == 0) analytic.entry(0).second[0] += 1e-3;
      w.add(fd_check_against(prog, p, analytic, h));
    }
    rows.push_back(w.row("seqmodel_log_prob_tokens", tol));
  }
  {
    Worst w;
    const SeqModel m({.vocab_size = 6, .source_dim = 3, .embed = 4, .hidden = 8, .attention = 4,
                      .max_len = 4});
    for (int inst = 0; inst < options.instances; ++inst) {
      RngStream rng = root.split(2).split(inst);
      ParamStore p = m.init_params(rng);
      randomize_uniform(p, rng, 1.0);
      const VecSeq x = random_vectors(rng, 3, 1, 4);
      const TokenSeq y = random_tokens(rng, 6, 0, 4);
      w.add(fd_check([&](Graph& g) { return m.build_log_prob(g, x, y); }, p, h));
    }
    rows.push_back(w.row("seqmodel_log_prob_vectors", tol));
  }
  {
    Worst w;
    const DiscreteAugmenter aug({.vocab_size = 6, .embed = 4, .hidden = 8, .attention = 4,
                                 .mlp = 4, .extra_len = 2});
    for (int inst = 0; inst < options.instances; ++inst) {
      RngStream rng = root.split(3).split(inst);
      ParamStore p = aug.init_params(rng);
      randomize_uniform(p, rng, 1.0);
      const TokenSeq proto = random_tokens(rng, 6, 1, 2);
      const TokenSeq x = random_tokens(rng, 6, 0, proto.length() + 2);
      w.add(fd_check([&](Graph& g) { return aug.build_log_prob(g, proto, x); }, p, h));
    }
    rows.push_back(w.row("discrete_augmenter_log_prob", tol));
  }
  {
    Worst w;
    const ContinuousAugmenter aug({.dim = 2, .hidden = 4, .mlp = 4});
    for (int inst = 0; inst < options.instances; ++inst) {
      RngStream rng = root.split(4).split(inst);
      ParamStore p = aug.init_params(rng);
      randomize_uniform(p, rng, 1.0);
      const VecSeq proto = random_vectors(rng, 2, 1, 4);
      const ContinuousDraw d = aug.sample_with_noise(p, proto, rng);
      const ParamStore analytic = aug.grad_log_prob(p, proto, d.x, d.noise);
      w.add(fd_check_against([&](Graph& g) { return aug.build_log_prob(g, proto, d.x); }, p,
                             analytic, h));
    }
    rows.push_back(w.row("continuous_augmenter_log_prob", tol));
  }
  {
    Worst w;
    const SeqModel m({.vocab_size = 6, .embed = 4, .hidden = 8, .attention = 4, .max_len = 4});
    for (int inst = 0; inst < options.instances; ++inst) {
      RngStream rng = root.split(5).split(inst);
      ParamStore p = m.init_params(rng);
      randomize_uniform(p, rng, 1.0);
      std::vector<Example> batch;
      for (int k = 0; k < 3; ++k) batch.push_back({random_tokens(rng, 6, 1, 4), random_tokens(rng, 6, 0, 4)});
      const ParamStore analytic = mle_loss_grad(m, p, batch).grads;
      const Program prog = [&](Graph& g) {
        Var total = g.scalar(0.0);
        for (const auto& ex : batch) total = g.sub(total, m.build_log_prob(g, ex.source, ex.target));
        return g.scale(total, 1.0 / static_cast<double>(batch.size()));
      };
      w.add(fd_check_against(prog, p, analytic, h));
    }
    rows.push_back(w.row("mle_loss", tol));
  }
  {
    Worst wg, wt, wb;
    for (int inst = 0; inst < options.instances; ++inst) {
      auto dm = make_tiny_dm(options.seed * 1000 + static_cast<std::uint64_t>(inst));
      const DmModels models = dm->models();
      const RngStream rng = root.split(6).split(inst);
      const DmSamples s = draw_samples(models, dm->params, dm->pair, 6, rng);
      const Similarity reward = RewardFn{RewardKind::kBleu4};
      const MatchBatchResult mr = match_grads_from(models, dm->params, dm->pair, s, {.n = 6});
      FidelityOptions fo;
      fo.n = 6;
      fo.source_reward = reward;
      fo.target_reward = reward;
      const FidelityBatchResult fr = fidelity_grads_from(models, dm->params, dm->pair, s, fo);
      ParamStore g_gamma = mr.grads_gamma, g_theta = mr.grads_theta;
      g_gamma.axpy(1.0, fr.grads_gamma);
      g_theta.axpy(1.0, fr.grads_theta);

      const SurrogateCoefs c = naive_coefs(*dm, s, 1.0, reward);
      const int n = static_cast<int>(s.xs.size());
      const Source y_star = dm->pair.target;
      wg.add(fd_check_against(
          [&](Graph& g) {
            Var total = g.scalar(0.0);
            for (int i = 0; i < n; ++i) {
              total = g.add(total, g.scale(dm->target.build_log_prob(g, y_star, s.ys[i]), c.gamma[i]));
            }
            return total;
          },
          dm->params.gamma, g_gamma, h));
      wt.add(fd_check_against(
          [&](Graph& g) {
            Var total = g.scalar(0.0);
            for (int j = 0; j < n; ++j) {
              total = g.add(total, g.scale(dm->source.build_log_prob(g, dm->pair.source, s.xs[j]), c.theta[j]));
            }
            return total;
          },
          dm->params.theta, g_theta, h));
      wb.add(fd_check_against(
          [&](Graph& g) {
            Var total = g.scalar(0.0);
            for (int i = 0; i < n; ++i) {
              for (int j = 0; j < n; ++j) {
                total = g.add(total, g.scale(dm->model.build_log_prob(g, s.xs[j], s.ys[i]), c.beta[i * n + j]));
              }
            }
            return total;
          },
          dm->params.beta, mr.grads_beta, h));
    }
    rows.push_back(wg.row("combined_objective_gamma", tol));
    rows.push_back(wt.row("combined_objective_theta", tol));
    rows.push_back(wb.row("combined_objective_beta", tol));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Oracle checks

namespace {

CheckRow coverage_row(const std::string& check, const GradMoments::Coverage& c, double min_cov) {
  std::ostringstream os;
  os.precision(4);
  os << c.within << "/" << c.coords << " coords within 3 SE; worst z=" << c.worst_z
     << " mean SE=" << c.mean_se;
  return CheckRow{"oracle_check", check, c.fraction, min_cov, c.fraction >= min_cov, os.str()};
}

}  // namespace

std::vector<CheckRow> run_oracle_check(const OracleCheckOptions& options) {
  std::vector<CheckRow> rows;
  const RngStream root(options.seed);
  auto dm = make_tiny_dm(options.seed);
  const DmModels models = dm->models();
  const DmOracle oracle(models, dm->pair, dm->space);

  {
    const ObjectiveGrads exact = oracle.loss_grads(dm->params, 1e-5);
    GradMoments mg, mt, mb;
    for (int d = 0; d < options.draws; ++d) {
      const MatchBatchResult r = match_grads(models, dm->params, dm->pair, {.n = options.n},
                                             root.split(1).split(static_cast<std::uint64_t>(d)));
      mg.add(r.grads_gamma);
      mt.add(r.grads_theta);
      mb.add(r.grads_beta);
    }
    rows.push_back(coverage_row("match_grads_gamma", mg.coverage(exact.gamma), options.min_coverage));
    rows.push_back(coverage_row("match_grads_theta", mt.coverage(exact.theta), options.min_coverage));
    rows.push_back(coverage_row("match_grads_beta", mb.coverage(exact.beta), options.min_coverage));
  }
  {
    constexpr int kN = 2000;
    RngStream rng = root.split(2);
    std::vector<Source> xs;
    std::vector<double> p;
    for (int j = 0; j < kN; ++j) {
      RngStream r = rng.split(static_cast<std::uint64_t>(j));
      xs.push_back(dm->source.sample(dm->params.theta, dm->pair.source, r).value);
      p.push_back(std::exp(dm->model.log_prob(dm->params.beta, xs.back(), dm->pair.target)));
    }
    const MarginalEstimate est = estimate_marginal(dm->model, dm->params.beta, dm->pair.target, xs);
    double mean = 0.0, var = 0.0;
    for (double v : p) mean += v / kN;
    for (double v : p) var += (v - mean) * (v - mean) / (kN - 1);
    const double se = std::sqrt(var / kN);
    const MarginalResult exact = oracle.marginal(dm->params.theta, dm->params.beta, dm->pair.target);
    const double z = std::abs(est.value - exact.value) / se;
    std::ostringstream os;
    os << "estimate=" << est.value << " exact=" << exact.value << " se=" << se
       << " residual=" << exact.residual;
    rows.push_back({"oracle_check", "marginal_n2000_z", z, 3.0, z <= 3.0, os.str()});

    const auto all = oracle.marginals(dm->params.theta, dm->params.beta);
    double total = 0.0;
    for (double v : all) total += v;
    const double err = std::abs(total + exact.residual - 1.0);
    rows.push_back({"oracle_check", "total_probability", err, 1e-9, err <= 1e-9,
                    "sum of exact marginals plus residual"});
  }
  {
    constexpr int kN = 2000;
    RngStream rng = root.split(3);
    double mean = 0.0, sq = 0.0;
    for (int j = 0; j < kN; ++j) {
      const double v = -dm->source.sample(dm->params.theta, dm->pair.source, rng).log_prob;
      mean += v / kN;
      sq += v * v / kN;
    }
    const double se = std::sqrt((sq - mean * mean) * kN / (kN - 1) / kN);
    const double exact = oracle.entropy(dm->params.theta);
    const double z = std::abs(mean - exact) / se;
    std::ostringstream os;
    os << "mc=" << mean << " exact=" << exact << " se=" << se;
    rows.push_back({"oracle_check", "entropy_n2000_z", z, 3.0, z <= 3.0, os.str()});
  }
  {
    FidelityOptions fo;
    fo.n = options.n;
    fo.baseline = false;
    fo.source_reward = [](const Source&, const Source&) { return 0.7; };
    fo.target_reward = fo.source_reward;
    GradMoments mg, mt;
    for (int d = 0; d < options.draws; ++d) {
      const FidelityBatchResult r = fidelity_grads(models, dm->params, dm->pair, fo,
                                                   root.split(4).split(static_cast<std::uint64_t>(d)));
      mg.add(r.grads_gamma);
      mt.add(r.grads_theta);
    }
    rows.push_back(coverage_row("fidelity_constant_reward_gamma",
                                mg.coverage(dm->params.gamma.zeros_like()), options.min_coverage));
    rows.push_back(coverage_row("fidelity_constant_reward_theta",
                                mt.coverage(dm->params.theta.zeros_like()), options.min_coverage));
  }
  {
    double min_kl = INFINITY;
    for (int d = 0; d < 100; ++d) {
      auto inst = make_tiny_dm(options.seed * 7919 + static_cast<std::uint64_t>(d));
      const DmOracle o(inst->models(), inst->pair, inst->space);
      min_kl = std::min(min_kl, o.kl(inst->params));
    }
    rows.push_back({"oracle_check", "kl_nonnegative_min", min_kl, -1e-12, min_kl >= -1e-12,
                    "minimum exact KL over 100 random parameter draws"});

    const TabularAugmenter tab(dm->space);
    DmModels tied_models = models;
    tied_models.target = &tab;
    DmParams tied = dm->params;
    tied.gamma = TabularAugmenter::params_from_probs(oracle.marginals(dm->params.theta, dm->params.beta));
    const DmOracle tied_oracle(tied_models, dm->pair, dm->space);
    const double kl = std::abs(tied_oracle.kl(tied));
    rows.push_back({"oracle_check", "kl_tied_abs", kl, 1e-12, kl <= 1e-12,
                    "target tied to the exact marginal"});
  }
  {
    const TokenSeq ref{{3, 4, 3}, true};
    RamlConfig cfg;
    const RamlTable exact = exact_raml_distribution(ref, cfg, TinyDm::kVocab);
    std::vector<double> freq(exact.seqs.size(), 0.0);
    RngStream rng = root.split(5);
    const double inv = 1.0 / options.raml_draws;
    bool outside = false;
    for (int d = 0; d < options.raml_draws; ++d) {
      const TokenSeq s = raml_sample(ref, cfg, TinyDm::kVocab, rng);
      std::size_t k = 0;
      while (k < exact.seqs.size() && !(exact.seqs[k] == s)) ++k;
      if (k == exact.seqs.size()) outside = true;
      else freq[k] += inv;
    }
    double tv = 0.0;
    for (std::size_t k = 0; k < freq.size(); ++k) tv += 0.5 * std::abs(freq[k] - exact.probs[k]);
    rows.push_back({"oracle_check", "raml_tv_tau0.8", tv, 0.02, tv <= 0.02 && !outside,
                    outside ? "sample outside the substitution ball" : "L=3 V_c=2"});

    RamlConfig cold = cfg;
    cold.tau = 1e-6;
    RngStream r2 = root.split(6);
    int same = 0;
    constexpr int kDraws = 10000;
    for (int d = 0; d < kDraws; ++d) same += raml_sample(ref, cold, TinyDm::kVocab, r2) == ref;
    const double f = static_cast<double>(same) / kDraws;
    rows.push_back({"oracle_check", "raml_tau1e-6_identity_rate", f, 0.999, f > 0.999, ""});
  }
  {
    const RewardFn bleu{RewardKind::kBleu4};
    const Example pair{dm->pair.source, dm->pair.target};
    const ParamStore exact = numeric_gradient(
        [&](const ParamStore& b) {
          return -exact_expected_reward(dm->model, b, pair, bleu, dm->space);
        },
        dm->params.beta, 1e-5);
    GradMoments m;
    for (int d = 0; d < options.draws; ++d) {
      RngStream r = root.split(7).split(static_cast<std::uint64_t>(d));
      const ReinforceSample s = reinforce_sample(dm->model, dm->params.beta, pair, RewardKind::kDeltaBleu, r);
      m.add(reinforce_grad(dm->model, dm->params.beta, pair, s, 0.2).grads);
    }
    rows.push_back(coverage_row("reinforce_grad_beta", m.coverage(exact), options.min_coverage));
  }
  return rows;
}

}  // namespace seqdm
