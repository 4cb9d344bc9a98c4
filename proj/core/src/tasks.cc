#include "seqdm/tasks.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "seqdm/binio.h"
#include "seqdm/errors.h"
#include "seqdm/rng.h"

namespace seqdm {

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::kCopy;
  if (name == "reverse") return TaskKind::kReverse;
  if (name == "cipher") return TaskKind::kCipher;
  if (name == "cont_label") return TaskKind::kContLabel;
  throw UsageError("unknown task '" + name + "' (expected copy, reverse, cipher or cont_label)");
}

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kReverse: return "reverse";
    case TaskKind::kCipher: return "cipher";
    case TaskKind::kContLabel: return "cont_label";
  }
  return "?";
}

void TaskSpec::validate() const {
  if (num_content < 1) throw UsageError("task: num_content must be at least 1");
  if (min_len < 1 || min_len > max_len || max_len > kMaxTaskLength) {
    throw UsageError("task: need 1 <= min_len <= max_len <= " + std::to_string(kMaxTaskLength));
  }
  if (!(noise >= 0.0 && noise <= 0.5)) throw UsageError("task: noise must lie in [0, 0.5]");
  if (noise > 0.0 && num_content < 2) throw UsageError("task: noise needs two content tokens");
  if (train_size < 0 || dev_size < 0 || test_size < 0) {
    throw UsageError("task: split sizes must be non-negative");
  }
  if (!permutation.empty()) {
    std::vector<int> sorted = permutation;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> want(num_content);
    std::iota(want.begin(), want.end(), 0);
    if (sorted != want) throw UsageError("task: permutation must permute 0..num_content-1");
  }
  if (kind == TaskKind::kContLabel) {
    if (classes < 1 || dim < 1) throw UsageError("task: classes and dim must be positive");
    if (min_steps < 1 || min_steps > max_steps || max_steps > kMaxTaskLength) {
      throw UsageError("task: need 1 <= min_steps <= max_steps <= " +
                       std::to_string(kMaxTaskLength));
    }
    if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw UsageError("task: jitter must be >= 0");
  }
}

namespace {

double sequence_count(int num_content, int min_len, int max_len) {
  double total = 0.0;
  for (int l = min_len; l <= max_len; ++l) total += std::pow(static_cast<double>(num_content), l);
  return total;
}

std::vector<int> random_ids(const TaskSpec& spec, RngStream& rng) {
  const int span = spec.max_len - spec.min_len + 1;
  const int len = spec.min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
  std::vector<int> ids(len);
  for (int& id : ids) id = kFirstContent + static_cast<int>(rng.below(spec.num_content));
  return ids;
}

// Draws `count` sequences not yet in `seen`, adding them to it.
std::vector<std::vector<int>> distinct_sequences(const TaskSpec& spec, std::size_t count,
                                                 std::set<std::vector<int>>& seen,
                                                 RngStream& rng) {
  std::vector<std::vector<int>> out;
  out.reserve(count);
  while (out.size() < count) {
    std::vector<int> ids = random_ids(spec, rng);
    if (seen.insert(ids).second) out.push_back(std::move(ids));
  }
  return out;
}

TokenSeq corrupt(const std::vector<int>& ids, const TaskSpec& spec, RngStream& rng) {
  TokenSeq out{ids, true};
  if (spec.noise <= 0.0) return out;
  for (int& id : out.ids) {
    if (rng.uniform() >= spec.noise) continue;
    int tok = kFirstContent + static_cast<int>(rng.below(spec.num_content - 1));
    if (tok >= id) ++tok;
    id = tok;
  }
  return out;
}

void generate_tokens(const TaskSpec& spec, const RngStream& root, TaskData& data) {
  const std::size_t sizes[3] = {static_cast<std::size_t>(spec.train_size),
                                static_cast<std::size_t>(spec.dev_size),
                                static_cast<std::size_t>(spec.test_size)};
  const double needed = static_cast<double>(sizes[0] + sizes[1] + sizes[2]);
  if (needed > 0.5 * sequence_count(spec.num_content, spec.min_len, spec.max_len)) {
    throw UsageError("task: splits need more distinct sources than half the sequence space");
  }
  if (spec.kind == TaskKind::kCipher) {
    data.permutation = spec.permutation;
    if (data.permutation.empty()) {
      data.permutation.resize(spec.num_content);
      std::iota(data.permutation.begin(), data.permutation.end(), 0);
      RngStream r = root.split(0);
      for (std::size_t i = data.permutation.size(); i > 1; --i) {
        std::swap(data.permutation[i - 1], data.permutation[r.below(i)]);
      }
    }
  }
  auto transduce = [&](std::vector<int> ids) {
    switch (spec.kind) {
      case TaskKind::kReverse:
        std::reverse(ids.begin(), ids.end());
        break;
      case TaskKind::kCipher:
        for (int& id : ids) id = kFirstContent + data.permutation[id - kFirstContent];
        break;
      default:
        break;
    }
    return TokenSeq{std::move(ids), true};
  };

  std::set<std::vector<int>> seen;
  RngStream draw = root.split(1);
  std::vector<Example>* splits[3] = {&data.train, &data.dev, &data.test};
  for (int s = 0; s < 3; ++s) {
    const auto clean = distinct_sequences(spec, sizes[s], seen, draw);
    for (std::size_t i = 0; i < clean.size(); ++i) {
      RngStream noise = root.split(2).split(i);
      const TokenSeq src = s == 0 ? corrupt(clean[i], spec, noise) : TokenSeq{clean[i], true};
      splits[s]->push_back(Example{Source(src), transduce(clean[i])});
    }
  }
}

void generate_vectors(const TaskSpec& spec, const RngStream& root, TaskData& data) {
  if (static_cast<double>(spec.classes) > 0.5 * sequence_count(spec.num_content, spec.min_len,
                                                                  spec.max_len)) {
    throw UsageError("task: more classes than distinct label sequences allow");
  }
  std::set<std::vector<int>> seen;
  RngStream draw = root.split(3);
  const auto labels = distinct_sequences(spec, static_cast<std::size_t>(spec.classes), seen, draw);
  std::vector<VecSeq> protos;
  for (int c = 0; c < spec.classes; ++c) {
    RngStream r = root.split(4).split(static_cast<std::uint64_t>(c));
    const int span = spec.max_steps - spec.min_steps + 1;
    const int steps = spec.min_steps + static_cast<int>(r.below(static_cast<std::uint64_t>(span)));
    std::vector<double> v(static_cast<std::size_t>(steps) * spec.dim);
    for (double& x : v) x = r.normal();
    protos.emplace_back(spec.dim, std::move(v));
  }
  const int sizes[3] = {spec.train_size, spec.dev_size, spec.test_size};
  std::vector<Example>* splits[3] = {&data.train, &data.dev, &data.test};
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < sizes[s]; ++i) {
      RngStream r = root.split(5).split(static_cast<std::uint64_t>(s)).split(static_cast<std::uint64_t>(i));
      const int c = static_cast<int>(r.below(static_cast<std::uint64_t>(spec.classes)));
      VecSeq x = protos[c];
      for (double& v : x.data) v += spec.jitter * r.normal();
      splits[s]->push_back(Example{Source(std::move(x)), TokenSeq{labels[c], true}});
    }
  }
}

std::string trim_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

TokenSeq parse_tokens(const std::string& text, const Vocab& vocab, int line) {
  TokenSeq out{{}, true};
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    const int id = vocab.lookup(tok);
    if (id < 0) throw ParseError("unknown token '" + tok + "'", line);
    if (id < kFirstContent) throw ParseError("reserved token '" + tok + "' in data", line);
    out.ids.push_back(id);
  }
  return out;
}

std::string format_tokens(const TokenSeq& s, const Vocab& vocab) {
  std::string out;
  for (std::size_t k = 0; k < s.ids.size(); ++k) {
    if (k > 0) out += ' ';
    out += vocab.token(s.ids[k]);
  }
  return out;
}

}  // namespace

TaskData generate(const TaskSpec& spec) {
  spec.validate();
  TaskData data;
  data.vocab = Vocab::synthetic(spec.num_content);
  const RngStream root(spec.seed);
  if (spec.kind == TaskKind::kContLabel) {
    generate_vectors(spec, root, data);
  } else {
    generate_tokens(spec, root, data);
  }
  return data;
}

void write_vocab(std::ostream& out, const Vocab& vocab) {
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

Vocab read_vocab(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  const char* reserved[3] = {Vocab::bos_token(), Vocab::eos_token(), Vocab::pad_token()};
  while (std::getline(in, line)) {
    line = trim_cr(line);
    const int n = static_cast<int>(tokens.size()) + 1;
    if (line.empty()) throw ParseError("empty token", n);
    if (line.find_first_of(" \t") != std::string::npos) {
      throw ParseError("token '" + line + "' contains whitespace", n);
    }
    if (tokens.size() < 3 && line != reserved[tokens.size()]) {
      throw ParseError("expected reserved token '" + std::string(reserved[tokens.size()]) +
                           "', found '" + line + "'",
                       n);
    }
    if (std::find(tokens.begin(), tokens.end(), line) != tokens.end()) {
      throw ParseError("duplicate token '" + line + "'", n);
    }
    tokens.push_back(line);
  }
  if (tokens.size() <= static_cast<std::size_t>(kFirstContent)) {
    throw ParseError("vocabulary has no content tokens");
  }
  return Vocab(std::move(tokens));
}

void save_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  write_vocab(out, vocab);
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  try {
    return read_vocab(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_text_dataset(std::ostream& out, const std::vector<Example>& data, const Vocab& vocab) {
  for (const auto& ex : data) {
    const auto* src = std::get_if<TokenSeq>(&ex.source);
    if (src == nullptr) throw UsageError("text datasets need token sources");
    out << format_tokens(*src, vocab) << '\t' << format_tokens(ex.target, vocab) << '\n';
  }
}

std::vector<Example> read_text_dataset(std::istream& in, const Vocab& vocab) {
  std::vector<Example> data;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim_cr(line);
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected source TAB target", n);
    if (line.find('\t', tab + 1) != std::string::npos) throw ParseError("more than one TAB", n);
    data.push_back(Example{Source(parse_tokens(line.substr(0, tab), vocab, n)),
                           parse_tokens(line.substr(tab + 1), vocab, n)});
  }
  return data;
}

void write_vector_dataset(std::ostream& out, const std::vector<Example>& data) {
  out.write(kVecDatasetMagic, 8);
  for (const auto& ex : data) {
    const auto* src = std::get_if<VecSeq>(&ex.source);
    if (src == nullptr) throw UsageError("vector datasets need vector sources");
    binio::put_u32(out, static_cast<std::uint32_t>(src->length()));
    binio::put_u32(out, static_cast<std::uint32_t>(src->dim));
    for (double v : src->data) binio::put_f64(out, v);
    binio::put_u32(out, static_cast<std::uint32_t>(ex.target.ids.size()));
    for (int id : ex.target.ids) binio::put_u32(out, static_cast<std::uint32_t>(id));
  }
}

std::vector<Example> read_vector_dataset(std::istream& in, const Vocab& vocab) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kVecDatasetMagic, 8) != 0) {
    throw ParseError("missing VSEQ0001 header");
  }
  std::vector<Example> data;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::string where = "record " + std::to_string(data.size() + 1);
    try {
      const std::uint32_t t = binio::get_u32(in, "step count");
      const std::uint32_t k = binio::get_u32(in, "vector width");
      if (k == 0 || t == 0 || t > 1u << 20 || k > 1u << 20) {
        throw ParseError("implausible shape " + std::to_string(t) + "x" + std::to_string(k));
      }
      std::vector<double> v(static_cast<std::size_t>(t) * k);
      for (double& x : v) {
        x = binio::get_f64(in, "vector values");
        if (!std::isfinite(x)) throw ParseError("non-finite vector value");
      }
      const std::uint32_t len = binio::get_u32(in, "target length");
      if (len > static_cast<std::uint32_t>(kMaxTaskLength) * 100) {
        throw ParseError("implausible target length " + std::to_string(len));
      }
      TokenSeq y{{}, true};
      for (std::uint32_t j = 0; j < len; ++j) {
        const std::uint32_t id = binio::get_u32(in, "target ids");
        if (id < static_cast<std::uint32_t>(kFirstContent) ||
            id >= static_cast<std::uint32_t>(vocab.size())) {
          throw ParseError("target id " + std::to_string(id) + " is not a content token");
        }
        y.ids.push_back(static_cast<int>(id));
      }
      data.push_back(Example{Source(VecSeq(static_cast<int>(k), std::move(v))), std::move(y)});
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return data;
}

void save_dataset(const std::filesystem::path& path, const std::vector<Example>& data,
                  const Vocab& vocab) {
  const bool vectors = !data.empty() && std::holds_alternative<VecSeq>(data.front().source);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  if (vectors) {
    write_vector_dataset(out, data);
  } else {
    write_text_dataset(out, data, vocab);
  }
  if (!out) throw UsageError("write failed for " + path.string());
}

std::vector<Example> load_dataset(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  char head[8] = {};
  in.read(head, 8);
  const bool vectors = in.gcount() == 8 && std::memcmp(head, kVecDatasetMagic, 8) == 0;
  in.clear();
  in.seekg(0);
  try {
    return vectors ? read_vector_dataset(in, vocab) : read_text_dataset(in, vocab);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace seqdm
