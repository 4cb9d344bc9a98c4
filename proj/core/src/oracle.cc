#include "seqdm/oracle.h"

#include <cmath>
#include <limits>
#include <numbers>

#include "seqdm/errors.h"
#include "seqdm/numerics.h"

namespace seqdm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp_or_neg_inf(const std::vector<double>& v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<int> support(const std::vector<double>& log_probs) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    if (log_probs[i] > kNegInf) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

std::vector<double> augmenter_log_probs(const Augmenter& aug, const ParamStore& params,
                                        const Source& prototype, const EnumSpace& space) {
  std::vector<double> out(space.size(), kNegInf);
  for (std::size_t i = 0; i < space.size(); ++i) {
    const Source x = space[i];
    if (aug.in_support(prototype, x)) out[i] = aug.log_prob(params, prototype, x);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t EnumSpace::count(int num_content, int max_len) {
  std::size_t total = 0, level = 1;
  for (int l = 0; l <= max_len; ++l) {
    total += level;
    level *= static_cast<std::size_t>(num_content);
  }
  return total;
}

EnumSpace::EnumSpace(int vocab_size, int max_len, std::size_t cap)
    : vocab_size_(vocab_size), max_len_(max_len) {
  const int vc = vocab_size - kFirstContent;
  if (vc < 1 || max_len < 0) throw UsageError("enumeration space needs content tokens and max_len >= 0");
  // Bound the count without overflow before building.
  std::size_t total = 0, level = 1;
  for (int l = 0; l <= max_len; ++l) {
    total += level;
    if (total > cap) {
      throw UsageError("enumeration space exceeds the cap of " + std::to_string(cap) + " sequences");
    }
    level *= static_cast<std::size_t>(vc);
  }
  seqs_.reserve(total);
  std::vector<TokenSeq> layer = {TokenSeq{}};
  for (int l = 0; l <= max_len; ++l) {
    seqs_.insert(seqs_.end(), layer.begin(), layer.end());
    if (l == max_len) break;
    std::vector<TokenSeq> next;
    next.reserve(layer.size() * vc);
    for (const auto& s : layer) {
      for (int id = kFirstContent; id < vocab_size; ++id) {
        TokenSeq t = s;
        t.ids.push_back(id);
        next.push_back(std::move(t));
      }
    }
    layer = std::move(next);
  }
}

int EnumSpace::index_of(const TokenSeq& s) const {
  if (!s.terminated || s.length() > max_len_) return -1;
  const int vc = vocab_size_ - kFirstContent;
  std::size_t offset = count(vc, s.length() - 1);
  if (s.length() == 0) offset = 0;
  std::size_t rank = 0;
  for (int id : s.ids) {
    if (id < kFirstContent || id >= vocab_size_) return -1;
    rank = rank * vc + static_cast<std::size_t>(id - kFirstContent);
  }
  return static_cast<int>(offset + rank);
}

// ---------------------------------------------------------------------------

ParamStore TabularAugmenter::init_params(RngStream&) const {
  ParamStore p;
  p.add("logits", Tensor({static_cast<int>(space_.size())}));
  return p;
}

Draw TabularAugmenter::sample(const ParamStore& params, const Source&, RngStream& rng) const {
  const auto logits = params.get("logits").data();
  const auto probs = softmax_stable(logits);
  const int i = rng.categorical(probs);
  return Draw{space_[i], std::log(probs[i])};
}

Var TabularAugmenter::build_log_prob(Graph& g, const Source&, const Source& x) const {
  const auto* seq = std::get_if<TokenSeq>(&x);
  const int idx = seq ? space_.index_of(*seq) : -1;
  if (idx < 0) throw UsageError("tabular augmenter: sequence outside the enumerated space");
  return g.pick(g.log_softmax(g.param("logits")), idx);
}

bool TabularAugmenter::in_support(const Source&, const Source& x) const {
  const auto* seq = std::get_if<TokenSeq>(&x);
  return seq && space_.index_of(*seq) >= 0;
}

ParamStore TabularAugmenter::params_from_probs(const std::vector<double>& probs) {
  std::vector<double> logits(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] > 0.0)) throw UsageError("params_from_probs needs strictly positive probabilities");
    logits[i] = std::log(probs[i]);
  }
  ParamStore p;
  p.add("logits", Tensor::vector(std::move(logits)));
  return p;
}

// ---------------------------------------------------------------------------

struct DmOracle::Tables {
  std::vector<double> log_theta, log_gamma;
  std::vector<int> xs, ys;  // supports
  std::vector<double> beta;
};

DmOracle::DmOracle(const DmModels& models, const Example& pair, const EnumSpace& space,
                   double entropy_weight)
    : models_(models), pair_(pair), space_(space), entropy_weight_(entropy_weight) {
  if (!models.source || !models.target || !models.model) throw UsageError("oracle needs all three models");
  if (!std::holds_alternative<TokenSeq>(pair.source)) {
    throw UsageError("oracle enumeration needs a token-sequence source");
  }
}

std::vector<double> DmOracle::source_log_probs(const ParamStore& theta) const {
  return augmenter_log_probs(*models_.source, theta, pair_.source, space_);
}

std::vector<double> DmOracle::target_log_probs(const ParamStore& gamma) const {
  return augmenter_log_probs(*models_.target, gamma, Source(pair_.target), space_);
}

std::vector<double> DmOracle::model_log_probs(const ParamStore& beta, const Source& x) const {
  std::vector<double> out(space_.size(), kNegInf);
  std::vector<TokenSeq> targets;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < space_.size(); ++i) {
    if (space_[i].length() <= models_.model->config().max_len) {
      targets.push_back(space_[i]);
      where.push_back(i);
    }
  }
  Graph g(&beta);
  const auto vars = models_.model->build_log_probs(g, x, targets);
  for (std::size_t k = 0; k < vars.size(); ++k) out[where[k]] = g.value(vars[k]);
  return out;
}

std::vector<double> DmOracle::beta_table(const ParamStore& beta, const std::vector<int>& xs,
                                         const std::vector<int>& ys) const {
  std::vector<double> tab(ys.size() * xs.size(), kNegInf);
  std::vector<TokenSeq> targets;
  std::vector<std::size_t> rows;
  for (std::size_t a = 0; a < ys.size(); ++a) {
    if (space_[ys[a]].length() <= models_.model->config().max_len) {
      targets.push_back(space_[ys[a]]);
      rows.push_back(a);
    }
  }
  for (std::size_t b = 0; b < xs.size(); ++b) {
    Graph g(&beta);
    const auto vars = models_.model->build_log_probs(g, Source(space_[xs[b]]), targets);
    for (std::size_t k = 0; k < vars.size(); ++k) tab[rows[k] * xs.size() + b] = g.value(vars[k]);
  }
  return tab;
}

DmOracle::Tables DmOracle::tables(const DmParams& params, bool with_beta) const {
  Tables t;
  t.log_theta = source_log_probs(params.theta);
  t.log_gamma = target_log_probs(params.gamma);
  t.xs = support(t.log_theta);
  t.ys = support(t.log_gamma);
  if (with_beta) t.beta = beta_table(params.beta, t.xs, t.ys);
  return t;
}

double DmOracle::loss_from(const std::vector<double>& log_theta,
                           const std::vector<double>& log_gamma,
                           const std::vector<double>& beta_tab, const std::vector<int>& xs,
                           const std::vector<int>& ys) const {
  double kl = 0.0;
  std::vector<double> terms(xs.size());
  for (std::size_t a = 0; a < ys.size(); ++a) {
    for (std::size_t b = 0; b < xs.size(); ++b) {
      terms[b] = log_theta[xs[b]] + beta_tab[a * xs.size() + b];
    }
    const double log_marg = std::max(log_sum_exp_or_neg_inf(terms), kMarginalLogFloor);
    const double lg = log_gamma[ys[a]];
    kl += std::exp(lg) * (lg - log_marg);
  }
  double entropy = 0.0;
  for (int b : xs) entropy -= std::exp(log_theta[b]) * log_theta[b];
  return kl - entropy_weight_ * entropy;
}

std::vector<double> DmOracle::marginals(const ParamStore& theta, const ParamStore& beta) const {
  const auto log_theta = source_log_probs(theta);
  std::vector<double> out(space_.size(), 0.0);
  for (std::size_t b = 0; b < space_.size(); ++b) {
    if (log_theta[b] == kNegInf) continue;
    const auto lp = model_log_probs(beta, Source(space_[b]));
    for (std::size_t a = 0; a < space_.size(); ++a) out[a] += std::exp(log_theta[b] + lp[a]);
  }
  return out;
}

MarginalResult DmOracle::marginal(const ParamStore& theta, const ParamStore& beta,
                                  const TokenSeq& y) const {
  const int ya = space_.index_of(y);
  if (ya < 0) throw UsageError("marginal: target outside the enumerated space");
  const auto m = marginals(theta, beta);
  MarginalResult r;
  r.value = m[ya];
  if (models_.model->config().max_len <= space_.max_len()) {
    // The model's own cap keeps every y inside the space, so only source
    // sequences outside it can carry missing mass.
    double source_mass = 0.0;
    for (double l : source_log_probs(theta)) source_mass += std::exp(l);
    r.residual = std::max(0.0, 1.0 - source_mass);
  } else {
    double total = 0.0;
    for (double v : m) total += v;
    r.residual = std::max(0.0, 1.0 - total);
  }
  return r;
}

double DmOracle::kl(const DmParams& params) const {
  const Tables t = tables(params, true);
  const double h = entropy(params.theta);
  return loss_from(t.log_theta, t.log_gamma, t.beta, t.xs, t.ys) + entropy_weight_ * h;
}

double DmOracle::entropy(const ParamStore& theta) const {
  return exact_entropy(*models_.source, theta, pair_.source, space_);
}

double DmOracle::loss(const DmParams& params) const {
  const Tables t = tables(params, true);
  return loss_from(t.log_theta, t.log_gamma, t.beta, t.xs, t.ys);
}

ObjectiveGrads DmOracle::loss_grads(const DmParams& params, double fd_step) const {
  if (!(fd_step > 0.0)) throw UsageError("fd_step must be positive");
  const Tables t = tables(params, true);
  ObjectiveGrads out;
  out.gamma = numeric_gradient(
      [&](const ParamStore& gamma) {
        return loss_from(t.log_theta, target_log_probs(gamma), t.beta, t.xs, t.ys);
      },
      params.gamma, fd_step);
  out.theta = numeric_gradient(
      [&](const ParamStore& theta) {
        return loss_from(source_log_probs(theta), t.log_gamma, t.beta, t.xs, t.ys);
      },
      params.theta, fd_step);
  out.beta = numeric_gradient(
      [&](const ParamStore& beta) {
        return loss_from(t.log_theta, t.log_gamma, beta_table(beta, t.xs, t.ys), t.xs, t.ys);
      },
      params.beta, fd_step);
  return out;
}

// ---------------------------------------------------------------------------

double exact_entropy(const Augmenter& aug, const ParamStore& params, const Source& prototype,
                     const EnumSpace& space) {
  const auto lp = augmenter_log_probs(aug, params, prototype, space);
  double h = 0.0;
  for (double l : lp) {
    if (l > kNegInf) h -= std::exp(l) * l;
  }
  return h;
}

double exact_expected_reward(const SeqModel& model, const ParamStore& beta, const Example& pair,
                             const Similarity& reward, const EnumSpace& space) {
  std::vector<TokenSeq> targets;
  for (const auto& s : space.seqs()) {
    if (s.length() <= model.config().max_len) targets.push_back(s);
  }
  Graph g(&beta);
  const auto vars = model.build_log_probs(g, pair.source, targets);
  const Source ref = pair.target;
  double e = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    e += std::exp(g.value(vars[k])) * reward(Source(targets[k]), ref);
  }
  return e;
}

RamlTable exact_raml_distribution(const TokenSeq& reference, const RamlConfig& cfg,
                                  int vocab_size) {
  const int length = reference.length();
  const int max_edit = cfg.max_edit_for(length);
  const int vc = vocab_size - kFirstContent;
  double n_all = std::pow(static_cast<double>(vc), length);
  if (n_all > 1e6) throw UsageError("RAML ball too large to enumerate");
  RamlTable t;
  t.stratum_mass.assign(max_edit + 1, 0.0);
  std::vector<int> digits(length, 0);
  double z = 0.0;
  while (true) {
    TokenSeq s;
    int m = 0;
    for (int p = 0; p < length; ++p) {
      s.ids.push_back(kFirstContent + digits[p]);
      if (s.ids[p] != reference.ids[p]) ++m;
    }
    if (m <= max_edit) {
      const double w = std::exp(-m / cfg.tau);
      t.seqs.push_back(std::move(s));
      t.probs.push_back(w);
      t.stratum.push_back(m);
      z += w;
    }
    int p = length - 1;
    while (p >= 0 && ++digits[p] == vc) digits[p--] = 0;
    if (p < 0) break;
  }
  for (std::size_t k = 0; k < t.probs.size(); ++k) {
    t.probs[k] /= z;
    t.stratum_mass[t.stratum[k]] += t.probs[k];
  }
  return t;
}

Quadrature gauss_hermite(int n) {
  if (n < 1) throw UsageError("gauss_hermite needs at least one point");
  constexpr double kEps = 1e-14;
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  Quadrature q;
  q.nodes.assign(n, 0.0);
  q.weights.assign(n, 0.0);
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(n, 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * q.nodes[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * q.nodes[1];
    } else {
      z = 2.0 * z - q.nodes[i - 2];
    }
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      // Orthonormal Hermite recurrence.
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= kEps) break;
    }
    q.nodes[i] = z;
    q.nodes[n - 1 - i] = -z;
    q.weights[i] = 2.0 / (pp * pp);
    q.weights[n - 1 - i] = q.weights[i];
  }
  return q;
}

double integrate_density_1d(const ContinuousAugmenter& aug, const ParamStore& params,
                            const VecSeq& prototype, int points) {
  if (prototype.dim != 1 || prototype.length() != 1) {
    throw UsageError("integrate_density_1d needs T = K = 1");
  }
  // Scale the rule a little wider than the density so the integrand stays smooth.
  const double sigma = 1.25 * aug.scales(params, prototype, prototype).data[0];
  const Quadrature q = gauss_hermite(points);
  const double center = prototype.data[0];
  double total = 0.0;
  for (int k = 0; k < points; ++k) {
    const double u = q.nodes[k];
    const VecSeq x(1, {center + std::numbers::sqrt2 * sigma * u});
    total += q.weights[k] * std::exp(aug.log_prob(params, prototype, x) + u * u);
  }
  return std::numbers::sqrt2 * sigma * total;
}

}  // namespace seqdm
