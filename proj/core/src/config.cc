#include "seqdm/config.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "seqdm/errors.h"
#include "seqdm/rewards.h"

namespace seqdm {
namespace {

struct Field {
  const char* name;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw UsageError("config key '" + key + "': '" + value + "' is not " + want);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto r = std::from_chars(value.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, value, "an integer");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto r = std::from_chars(value.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end || !std::isfinite(out)) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename M>
Field field(const char* name, M Config::*member) {
  using T = std::remove_cvref_t<decltype(std::declval<Config&>().*member)>;
  Field f{name, nullptr, nullptr};
  if constexpr (std::is_same_v<T, bool>) {
    f.set = [member, name](Config& c, const std::string& v) { c.*member = parse_bool(name, v); };
    f.get = [member](const Config& c) { return std::string(c.*member ? "true" : "false"); };
  } else if constexpr (std::is_integral_v<T>) {
    f.set = [member, name](Config& c, const std::string& v) { c.*member = parse_integer<T>(name, v); };
    f.get = [member](const Config& c) { return std::to_string(c.*member); };
  } else if constexpr (std::is_floating_point_v<T>) {
    f.set = [member, name](Config& c, const std::string& v) { c.*member = parse_real(name, v); };
    f.get = [member](const Config& c) { return format_real(c.*member); };
  } else {
    f.set = [member](Config& c, const std::string& v) { c.*member = v; };
    f.get = [member](const Config& c) { return c.*member; };
  }
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field("task", &Config::task),
      field("num_content", &Config::num_content),
      field("min_len", &Config::min_len),
      field("max_len", &Config::max_len),
      field("noise", &Config::noise),
      field("train_size", &Config::train_size),
      field("dev_size", &Config::dev_size),
      field("test_size", &Config::test_size),
      field("classes", &Config::classes),
      field("dim", &Config::dim),
      field("min_steps", &Config::min_steps),
      field("max_steps", &Config::max_steps),
      field("jitter", &Config::jitter),
      field("data_dir", &Config::data_dir),
      field("seed", &Config::seed),
      field("threads", &Config::threads),
      field("embed", &Config::embed),
      field("hidden", &Config::hidden),
      field("attention", &Config::attention),
      field("decode_max_len", &Config::decode_max_len),
      field("aug_embed", &Config::aug_embed),
      field("aug_hidden", &Config::aug_hidden),
      field("aug_attention", &Config::aug_attention),
      field("aug_mlp", &Config::aug_mlp),
      field("aug_extra_len", &Config::aug_extra_len),
      field("cont_hidden", &Config::cont_hidden),
      field("cont_mlp", &Config::cont_mlp),
      field("cont_min_scale", &Config::cont_min_scale),
      field("eta", &Config::eta),
      field("anneal_factor", &Config::anneal_factor),
      field("anneal_every", &Config::anneal_every),
      field("batch_size", &Config::batch_size),
      field("clip_norm", &Config::clip_norm),
      field("beam", &Config::beam),
      field("pretrain_epochs", &Config::pretrain_epochs),
      field("patience", &Config::patience),
      field("selfrec_epochs", &Config::selfrec_epochs),
      field("selfrec_eta", &Config::selfrec_eta),
      field("selfrec_clip", &Config::selfrec_clip),
      field("dm_epochs", &Config::dm_epochs),
      field("n_samples", &Config::n_samples),
      field("alternation", &Config::alternation),
      field("dm_eta", &Config::dm_eta),
      field("dm_aug_eta", &Config::dm_aug_eta),
      field("dm_clip", &Config::dm_clip),
      field("entropy_weight", &Config::entropy_weight),
      field("fidelity_weight", &Config::fidelity_weight),
      field("source_reward", &Config::source_reward),
      field("target_reward", &Config::target_reward),
      field("fidelity_baseline", &Config::fidelity_baseline),
      field("probe_pairs", &Config::probe_pairs),
      field("probe_samples", &Config::probe_samples),
      field("baseline_epochs", &Config::baseline_epochs),
      field("baseline_eta", &Config::baseline_eta),
      field("rl_reward", &Config::rl_reward),
      field("baseline_decay", &Config::baseline_decay),
      field("raml_tau", &Config::raml_tau),
      field("raml_candidates", &Config::raml_candidates),
      field("raml_max_edit", &Config::raml_max_edit),
      field("log_wall_time", &Config::log_wall_time),
  };
  return all;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void require(bool ok, const char* key, const std::string& msg) {
  if (!ok) throw UsageError(std::string("config key '") + key + "': " + msg);
}

}  // namespace

void set_config_value(Config& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.name) {
      f.set(cfg, value);
      return;
    }
  }
  throw UsageError("unknown config key '" + key + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.name);
  return out;
}

std::pair<int, int> Config::alternation_ratio() const {
  const auto colon = alternation.find(':');
  if (colon == std::string::npos) bad_value("alternation", alternation, "of the form A:M");
  const int a = parse_integer<int>("alternation", alternation.substr(0, colon));
  const int m = parse_integer<int>("alternation", alternation.substr(colon + 1));
  if (a < 0 || m < 0 || a + m == 0) bad_value("alternation", alternation, "a non-zero ratio");
  return {a, m};
}

TaskSpec Config::task_spec() const {
  TaskSpec s;
  s.kind = parse_task_kind(task);
  s.num_content = num_content;
  s.min_len = min_len;
  s.max_len = max_len;
  s.noise = noise;
  s.train_size = train_size;
  s.dev_size = dev_size;
  s.test_size = test_size;
  s.seed = seed;
  s.classes = classes;
  s.dim = dim;
  s.min_steps = min_steps;
  s.max_steps = max_steps;
  s.jitter = jitter;
  return s;
}

void Config::validate() const {
  task_spec().validate();
  require(threads >= 1, "threads", "must be at least 1");
  require(embed > 0 && hidden > 0 && hidden % 2 == 0 && attention > 0, "hidden",
          "model widths must be positive and hidden even");
  require(decode_max_len >= max_len + aug_extra_len, "decode_max_len",
          "must be at least max_len + aug_extra_len");
  require(aug_embed > 0 && aug_hidden > 0 && aug_hidden % 2 == 0 && aug_attention > 0 && aug_mlp > 0,
          "aug_hidden", "augmenter widths must be positive and aug_hidden even");
  require(aug_extra_len >= 0, "aug_extra_len", "must be non-negative");
  require(cont_hidden > 0 && cont_mlp > 0 && cont_min_scale > 0.0, "cont_hidden",
          "continuous augmenter sizes must be positive");
  require(eta > 0.0, "eta", "must be positive");
  require(anneal_factor > 0.0 && anneal_factor <= 1.0, "anneal_factor", "must lie in (0, 1]");
  require(anneal_every >= 1, "anneal_every", "must be at least 1");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(clip_norm >= 0.0 && dm_clip >= 0.0 && selfrec_clip >= 0.0, "clip_norm",
          "clip norms must be non-negative");
  require(beam >= 1, "beam", "must be at least 1");
  require(pretrain_epochs >= 0 && selfrec_epochs >= 0 && dm_epochs >= 0 && baseline_epochs >= 0,
          "dm_epochs", "epoch counts must be non-negative");
  require(patience >= 0, "patience", "must be non-negative");
  require(selfrec_eta > 0.0 && dm_eta > 0.0 && dm_aug_eta > 0.0 && baseline_eta > 0.0, "dm_eta",
          "learning rates must be positive");
  require(n_samples >= 2, "n_samples", "must be at least 2");
  alternation_ratio();
  require(entropy_weight >= 0.0 && fidelity_weight >= 0.0, "entropy_weight",
          "weights must be non-negative");
  const bool vectors = parse_task_kind(task) == TaskKind::kContLabel;
  require((parse_reward_kind(source_reward) == RewardKind::kContSim) == vectors, "source_reward",
          vectors ? "must be cont_sim for vector sources" : "cont_sim needs vector sources");
  parse_reward_kind(target_reward);
  require(parse_reward_kind(rl_reward) != RewardKind::kContSim, "rl_reward",
          "must compare token sequences");
  require(probe_pairs >= 0 && probe_samples >= 2, "probe_samples",
          "probe_pairs must be >= 0 and probe_samples >= 2");
  require(baseline_decay >= 0.0 && baseline_decay < 1.0, "baseline_decay", "must lie in [0, 1)");
  require(raml_tau > 0.0 && raml_candidates >= 1 && raml_max_edit >= -1, "raml_tau",
          "raml settings out of range");
}

Config parse_config(std::istream& in, Config base) {
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", n);
    try {
      set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw ParseError(e.what(), n);
    }
  }
  return base;
}

Config load_config(const std::filesystem::path& path, Config base) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  return parse_config(in, std::move(base));
}

std::string config_to_text(const Config& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.name) + "=" + f.get(cfg) + "\n";
  return out;
}

bool operator==(const Config& a, const Config& b) { return config_to_text(a) == config_to_text(b); }

}  // namespace seqdm
