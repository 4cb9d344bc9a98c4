#include "seqdm/sequence.h"

#include <bit>
#include <cmath>
#include <cstring>

#include "seqdm/errors.h"
#include "seqdm/rng.h"

namespace seqdm {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < static_cast<std::size_t>(kFirstContent) + 1) {
    throw UsageError("vocabulary needs the three reserved tokens and at least one content token");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw UsageError("empty token at id " + std::to_string(i));
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw UsageError("duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::with_content(const std::vector<std::string>& content) {
  std::vector<std::string> all = {bos_token(), eos_token(), pad_token()};
  all.insert(all.end(), content.begin(), content.end());
  return Vocab(std::move(all));
}

Vocab Vocab::synthetic(int n_content) {
  std::vector<std::string> content;
  for (int i = 0; i < n_content; ++i) content.push_back("w" + std::to_string(i));
  return with_content(content);
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw UsageError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

int Vocab::lookup(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

TokenSeq TokenSeq::from_ids(std::span<const int> raw) {
  TokenSeq s;
  s.terminated = false;
  std::size_t i = 0;
  for (; i < raw.size(); ++i) {
    if (raw[i] == kEos) {
      s.terminated = true;
      ++i;
      break;
    }
    if (raw[i] == kPad) throw UsageError("PAD inside sequence content");
    s.ids.push_back(raw[i]);
  }
  for (; i < raw.size(); ++i) {
    if (raw[i] != kPad) throw UsageError("only PAD may follow EOS");
  }
  return s;
}

std::vector<int> TokenSeq::raw_ids() const {
  std::vector<int> out = ids;
  if (terminated) out.push_back(kEos);
  return out;
}

VecSeq::VecSeq(int d, std::vector<double> values) : dim(d), data(std::move(values)) {
  if (dim <= 0) throw UsageError("VecSeq: dimension must be positive");
  if (data.size() % static_cast<std::size_t>(dim) != 0) {
    throw UsageError("VecSeq: data length is not a multiple of the dimension");
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw UsageError("VecSeq: non-finite value");
  }
}

int source_length(const Source& s) {
  return std::visit([](const auto& x) { return x.length(); }, s);
}

void validate_tokens(const TokenSeq& s, int vocab_size) {
  for (int id : s.ids) {
    if (id < kFirstContent || id >= vocab_size) {
      throw UsageError("token id " + std::to_string(id) + " is not a content token of a " +
                       std::to_string(vocab_size) + "-token vocabulary");
    }
  }
}

std::string to_string(const TokenSeq& s, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(s.ids[i]);
  }
  return out;
}

std::string to_string(const TokenSeq& s) {
  std::string out;
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(s.ids[i]);
  }
  if (!s.terminated) out += " ...";
  return out;
}

std::size_t SourceHash::operator()(const TokenSeq& s) const {
  std::uint64_t h = mix64(s.terminated ? 1 : 2);
  for (int id : s.ids) h = mix64(h ^ static_cast<std::uint64_t>(id));
  return static_cast<std::size_t>(h);
}

std::size_t SourceHash::operator()(const VecSeq& s) const {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(s.dim) + 7);
  for (double v : s.data) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  return static_cast<std::size_t>(h);
}

std::size_t SourceHash::operator()(const Source& s) const {
  return std::visit([this](const auto& x) { return (*this)(x); }, s);
}

}  // namespace seqdm
